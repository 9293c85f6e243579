#!/usr/bin/env python3
"""
Expression Language

Parser, printer and evaluator for the scalar expressions used in project
files: flow and jump maps, Lyapunov functions, gains and dwell-time bounds.

Grammar, lowest precedence first:

    expr  := term (('+' | '-') term)*
    term  := unary (('*' | '/') unary)*
    unary := '-' unary | power
    power := atom ('^' unary)?
    atom  := number | name | name '(' expr (',' expr)* ')' | '(' expr ')'

Evaluation works on floats and on numpy arrays alike. Leaving the real
domain raises DomainError instead of producing NaN.
"""

import re
from collections import namedtuple
from dataclasses import dataclass
from functools import lru_cache, reduce
from typing import Callable, Dict, FrozenSet, List, Mapping, Optional, Tuple, Union

import numpy as np

from core.errors import (
    ArityError,
    DomainError,
    ExprSyntaxError,
    UnboundVariableError,
    UnknownFunctionError,
)

Value = Union[float, np.ndarray]

TOKEN_PATTERN = re.compile(
    r"""
      (?P<ws>\s+)
    | (?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
    | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
    | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)

Token = namedtuple("Token", ["kind", "text", "offset"])

# Precedence levels used by the printer
PREC_ADD = 1
PREC_MUL = 2
PREC_NEG = 3
PREC_POW = 4
PREC_ATOM = 5


class Expr:
    """Base class of all expression nodes."""

    def __str__(self) -> str:
        return to_source(self)


@dataclass(frozen=True)
class Num(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    name: str


@dataclass(frozen=True)
class Neg(Expr):
    operand: Expr


@dataclass(frozen=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Call(Expr):
    name: str
    args: Tuple[Expr, ...]


def _sqrt(x: Value) -> Value:
    if np.any(np.asarray(x) < 0):
        raise DomainError("sqrt of a negative value")
    return np.sqrt(x)


def _ln(x: Value) -> Value:
    if np.any(np.asarray(x) <= 0):
        raise DomainError("ln of a non-positive value")
    return np.log(x)


def _div(a: Value, b: Value) -> Value:
    if np.any(np.asarray(b) == 0):
        raise DomainError("division by zero")
    return np.divide(a, b)


def _pow(a: Value, b: Value) -> Value:
    base = np.asarray(a, dtype=float)
    exponent = np.asarray(b, dtype=float)
    if np.any((base < 0) & (exponent != np.floor(exponent))):
        raise DomainError("negative base with a non-integer exponent")
    if np.any((base == 0) & (exponent < 0)):
        raise DomainError("zero raised to a negative power")
    return np.power(base, exponent)


# name -> (min arity, max arity or None for variadic, implementation)
FUNCTIONS: Dict[str, Tuple[int, Optional[int], Callable[..., Value]]] = {
    "abs": (1, 1, np.abs),
    "sqrt": (1, 1, _sqrt),
    "exp": (1, 1, np.exp),
    "ln": (1, 1, _ln),
    "pow": (2, 2, _pow),
    "min": (2, None, lambda *args: reduce(np.minimum, args)),
    "max": (2, None, lambda *args: reduce(np.maximum, args)),
}

BINARY_OPS: Dict[str, Callable[[Value, Value], Value]] = {
    "+": np.add,
    "-": np.subtract,
    "*": np.multiply,
    "/": _div,
    "^": _pow,
}


def _byte_offset(source: str, index: int) -> int:
    return len(source[:index].encode("utf-8"))


def tokenize(source: str) -> List[Token]:
    """
    Split an expression source into tokens.

    Args:
        source: Expression text

    Returns:
        List of tokens (whitespace dropped), offsets in characters
    """
    tokens = []
    pos = 0
    while pos < len(source):
        match = TOKEN_PATTERN.match(source, pos)
        if match is None:
            raise ExprSyntaxError(
                f"unexpected character {source[pos]!r}", _byte_offset(source, pos), source
            )
        kind = match.lastgroup
        if kind != "ws":
            tokens.append(Token(kind, match.group(kind), pos))
        pos = match.end()
    return tokens


class _Parser:
    def __init__(self, source: str):
        self.source = source
        self.tokens = tokenize(source)
        self.pos = 0

    def _error(self, message: str, token: Optional[Token] = None) -> ExprSyntaxError:
        index = token.offset if token is not None else len(self.source)
        return ExprSyntaxError(message, _byte_offset(self.source, index), self.source)

    def peek(self) -> Optional[Token]:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def peek_op(self, *ops: str) -> bool:
        token = self.peek()
        return token is not None and token.kind == "op" and token.text in ops

    def advance(self) -> Token:
        token = self.peek()
        if token is None:
            raise self._error("unexpected end of expression")
        self.pos += 1
        return token

    def expect(self, text: str) -> Token:
        token = self.peek()
        if token is None or token.text != text:
            raise self._error(f"expected '{text}'", token)
        return self.advance()

    def parse(self) -> Expr:
        if not self.tokens:
            raise ExprSyntaxError("empty expression", 0, self.source)
        node = self.expr()
        leftover = self.peek()
        if leftover is not None:
            raise self._error(f"unexpected token '{leftover.text}'", leftover)
        return node

    def expr(self) -> Expr:
        node = self.term()
        while self.peek_op("+", "-"):
            op = self.advance().text
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.peek_op("*", "/"):
            op = self.advance().text
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Expr:
        if self.peek_op("-"):
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek_op("^"):
            self.advance()
            # right-associative, and the exponent may carry its own sign
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Expr:
        token = self.peek()
        if token is None:
            raise self._error("unexpected end of expression")
        if token.kind == "number":
            self.advance()
            return Num(float(token.text))
        if token.kind == "name":
            self.advance()
            if self.peek_op("("):
                return self.call(token)
            return Var(token.text)
        if token.kind == "op" and token.text == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        raise self._error(f"unexpected token '{token.text}'", token)

    def call(self, name_token: Token) -> Expr:
        offset = _byte_offset(self.source, name_token.offset)
        if name_token.text not in FUNCTIONS:
            raise UnknownFunctionError(name_token.text, offset)
        self.expect("(")
        args = [self.expr()]
        while self.peek_op(","):
            self.advance()
            args.append(self.expr())
        self.expect(")")

        min_arity, max_arity, _ = FUNCTIONS[name_token.text]
        if len(args) < min_arity or (max_arity is not None and len(args) > max_arity):
            expected = str(min_arity) if max_arity == min_arity else f"at least {min_arity}"
            raise ArityError(name_token.text, expected, len(args), offset)
        return Call(name_token.text, tuple(args))


def parse(source: str) -> Expr:
    """
    Parse an expression.

    Args:
        source: Expression text, e.g. "-x^3 + u"

    Returns:
        The expression tree

    Raises:
        ExprSyntaxError, UnknownFunctionError, ArityError
    """
    if source is None or not str(source).strip():
        raise ExprSyntaxError("empty expression", 0, source or "")
    return _Parser(str(source)).parse()


def _precedence(expr: Expr) -> int:
    if isinstance(expr, Num):
        return PREC_ATOM if expr.value >= 0 else PREC_NEG
    if isinstance(expr, (Var, Call)):
        return PREC_ATOM
    if isinstance(expr, Neg):
        return PREC_NEG
    if isinstance(expr, BinOp):
        return {"+": PREC_ADD, "-": PREC_ADD, "*": PREC_MUL, "/": PREC_MUL, "^": PREC_POW}[expr.op]
    raise TypeError(f"not an expression node: {expr!r}")


def _format_number(value: float) -> str:
    if float(value).is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(float(value))


def _wrap(expr: Expr, needs_parens: bool) -> str:
    text = to_source(expr)
    return f"({text})" if needs_parens else text


def to_source(expr: Expr) -> str:
    """Print an expression with the minimal parentheses that reparse to the same tree."""
    if isinstance(expr, Num):
        return _format_number(expr.value)
    if isinstance(expr, Var):
        return expr.name
    if isinstance(expr, Neg):
        return "-" + _wrap(expr.operand, _precedence(expr.operand) < PREC_NEG)
    if isinstance(expr, Call):
        return f"{expr.name}({', '.join(to_source(a) for a in expr.args)})"
    if isinstance(expr, BinOp):
        left_prec = _precedence(expr.left)
        right_prec = _precedence(expr.right)
        if expr.op in ("+", "-"):
            return f"{_wrap(expr.left, left_prec < PREC_ADD)} {expr.op} {_wrap(expr.right, right_prec <= PREC_ADD)}"
        if expr.op in ("*", "/"):
            return f"{_wrap(expr.left, left_prec < PREC_MUL)}{expr.op}{_wrap(expr.right, right_prec <= PREC_MUL)}"
        return f"{_wrap(expr.left, left_prec < PREC_ATOM)}^{_wrap(expr.right, right_prec < PREC_NEG)}"
    raise TypeError(f"not an expression node: {expr!r}")


def _compile(expr: Expr) -> Callable[[Mapping[str, Value]], Value]:
    if isinstance(expr, Num):
        value = expr.value
        return lambda env: value
    if isinstance(expr, Var):
        name = expr.name

        def load(env: Mapping[str, Value]) -> Value:
            try:
                return env[name]
            except KeyError:
                raise UnboundVariableError(name) from None

        return load
    if isinstance(expr, Neg):
        operand = _compile(expr.operand)
        return lambda env: np.negative(operand(env))
    if isinstance(expr, BinOp):
        left, right = _compile(expr.left), _compile(expr.right)
        op = BINARY_OPS[expr.op]
        return lambda env: op(left(env), right(env))
    if isinstance(expr, Call):
        args = [_compile(a) for a in expr.args]
        impl = FUNCTIONS[expr.name][2]
        return lambda env: impl(*(a(env) for a in args))
    raise TypeError(f"not an expression node: {expr!r}")


@lru_cache(maxsize=4096)
def compile_expr(expr: Expr) -> Callable[[Mapping[str, Value]], Value]:
    """Compile an expression into a closure over a bindings mapping (cached per tree)."""
    return _compile(expr)


def evaluate(expr: Expr, bindings: Mapping[str, Value]) -> Value:
    """
    Evaluate an expression in IEEE double precision.

    Args:
        expr: Parsed expression
        bindings: Variable name -> float or numpy array (arrays broadcast)

    Returns:
        A float for scalar bindings, otherwise a numpy array

    Raises:
        UnboundVariableError: a free variable has no binding
        DomainError: evaluation left the real domain or produced NaN
    """
    fn = compile_expr(expr)
    with np.errstate(all="ignore"):
        result = np.asarray(fn(bindings), dtype=float)
    if np.any(np.isnan(result)):
        raise DomainError(f"'{to_source(expr)}' evaluated to NaN")
    if result.ndim == 0:
        return float(result)
    return result


def free_vars(expr: Expr) -> FrozenSet[str]:
    """Exact set of variable names occurring in the expression."""
    if isinstance(expr, Var):
        return frozenset([expr.name])
    if isinstance(expr, Num):
        return frozenset()
    if isinstance(expr, Neg):
        return free_vars(expr.operand)
    if isinstance(expr, BinOp):
        return free_vars(expr.left) | free_vars(expr.right)
    if isinstance(expr, Call):
        return frozenset().union(*(free_vars(a) for a in expr.args))
    raise TypeError(f"not an expression node: {expr!r}")


def constant(value: float) -> Expr:
    """Literal node for any real value (negative values become Neg(Num))."""
    value = float(value)
    if value < 0:
        return Neg(Num(-value))
    return Num(value)


def substitute(expr: Expr, mapping: Mapping[str, Union[Expr, float]]) -> Expr:
    """Replace variables by expressions or numbers."""
    if isinstance(expr, Var):
        if expr.name not in mapping:
            return expr
        replacement = mapping[expr.name]
        return replacement if isinstance(replacement, Expr) else constant(replacement)
    if isinstance(expr, Num):
        return expr
    if isinstance(expr, Neg):
        return Neg(substitute(expr.operand, mapping))
    if isinstance(expr, BinOp):
        return BinOp(expr.op, substitute(expr.left, mapping), substitute(expr.right, mapping))
    if isinstance(expr, Call):
        return Call(expr.name, tuple(substitute(a, mapping) for a in expr.args))
    raise TypeError(f"not an expression node: {expr!r}")

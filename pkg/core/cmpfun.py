#!/usr/bin/env python3
"""
Comparison Functions

Scalar functions on the nonnegative reals and grid-based validation of the
comparison classes (PD, K, K-infinity, L, KL) used by every certificate.

Class membership is certified on a finite grid, not proven. Unboundedness
(K-infinity) is checked heuristically by one extrapolated evaluation.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Dict, Iterable, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import optimize

from core.errors import ClassValidationError, ExprError
from core.expr import Expr, evaluate, free_vars, parse, to_source
from core.settings import get_settings

logger = logging.getLogger(__name__)

Value = Union[float, np.ndarray]

# bisection settings for inverse_on_grid
BISECT_XTOL = 1e-300
BISECT_RTOL = 4 * np.finfo(float).eps
BISECT_MAXITER = 2000

MIN_GRID_POINTS = 16
MIN_GRID_DECADES = 4.0


class ClassTag(str, Enum):
    """Comparison class a function is declared to belong to."""

    PD = "PD"
    NPD = "NPD"
    UNCONSTRAINED = "unconstrained"
    K = "K"
    KINF = "Kinf"
    L = "L"
    NONE = "none"

    @classmethod
    def parse(cls, value: Union[str, "ClassTag", None]) -> "ClassTag":
        if value is None:
            return cls.NONE
        if isinstance(value, ClassTag):
            return value
        aliases = {
            "pd": cls.PD,
            "sign-definite-positive": cls.PD,
            "npd": cls.NPD,
            "sign-definite-negative": cls.NPD,
            "unconstrained": cls.UNCONSTRAINED,
            "k": cls.K,
            "kinf": cls.KINF,
            "k_inf": cls.KINF,
            "k∞": cls.KINF,
            "l": cls.L,
            "none": cls.NONE,
        }
        key = str(value).strip().lower()
        if key not in aliases:
            raise ClassValidationError(f"unknown class tag '{value}'")
        return aliases[key]


@dataclass(frozen=True)
class ClassCheck:
    """Outcome of a grid validation."""

    ok: bool
    counterexample: Optional[float] = None
    reason: str = ""

    def __bool__(self) -> bool:
        return self.ok


def _as_output(r: Any, values: Value) -> Value:
    """Broadcast to the input's shape; plain floats for scalar input."""
    arr = np.asarray(r, dtype=float)
    out = np.broadcast_to(np.asarray(values, dtype=float), arr.shape)
    if out.ndim == 0:
        return float(out)
    return np.array(out)


class ScalarFn(ABC):
    """A function R+ -> R with a declared comparison class."""

    declared_class: ClassTag = ClassTag.NONE

    @abstractmethod
    def __call__(self, r: Value) -> Value:
        raise NotImplementedError

    @property
    def label(self) -> str:
        return type(self).__name__

    def to_dict(self) -> Dict[str, Any]:
        return {"label": self.label, "class": self.declared_class.value}


@dataclass(frozen=True)
class ExprFn(ScalarFn):
    """A scalar function given by an expression in one variable."""

    body: Expr
    var: str = "r"
    declared_class: ClassTag = ClassTag.NONE
    params: Tuple[Tuple[str, float], ...] = ()

    def __post_init__(self):
        extra = free_vars(self.body) - {name for name, _ in self.params} - {self.var}
        if extra:
            raise ExprError(
                f"'{to_source(self.body)}' has free variables {sorted(extra)} besides '{self.var}'"
            )

    @classmethod
    def from_source(
        cls,
        source: str,
        var: Optional[str] = None,
        declared_class: Union[str, ClassTag, None] = None,
        params: Optional[Mapping[str, float]] = None,
    ) -> "ExprFn":
        """
        Build from expression text. The variable is inferred when exactly one
        name is not a parameter; otherwise it defaults to "r".
        """
        body = parse(source)
        params = dict(params or {})
        used = {k: float(v) for k, v in params.items() if k in free_vars(body)}
        if var is None:
            remaining = sorted(free_vars(body) - set(used))
            var = remaining[0] if len(remaining) == 1 else "r"
        return cls(body, var, ClassTag.parse(declared_class), tuple(sorted(used.items())))

    def __call__(self, r: Value) -> Value:
        env: Dict[str, Value] = dict(self.params)
        env[self.var] = np.asarray(r, dtype=float) if not np.isscalar(r) else float(r)
        return _as_output(r, evaluate(self.body, env))

    @property
    def label(self) -> str:
        return to_source(self.body)

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {"expr": to_source(self.body), "var": self.var, "class": self.declared_class.value}
        if self.params:
            out["params"] = dict(self.params)
        return out


class TabulatedFn(ScalarFn):
    """
    Grid-backed function.

    mode "loglog" interpolates log y against log x and extends both ends as
    power laws (requires positive tables; evaluates to 0 at r <= 0). mode
    "linear" interpolates linearly; beyond the last point the tail is
    "hold", "decay" (y_last * x_last / r) or "linear".
    """

    def __init__(
        self,
        xs: Sequence[float],
        ys: Sequence[float],
        declared_class: Union[str, ClassTag, None] = None,
        mode: str = "loglog",
        tail: str = "power",
        label: str = "table",
    ):
        self.xs = np.asarray(xs, dtype=float)
        self.ys = np.asarray(ys, dtype=float)
        self.declared_class = ClassTag.parse(declared_class)
        self.mode = mode
        self.tail = tail
        self._label = label

        if self.xs.ndim != 1 or self.xs.shape != self.ys.shape or len(self.xs) < 2:
            raise ClassValidationError("table needs matching 1-D x and y arrays with at least 2 points")
        if np.any(np.diff(self.xs) <= 0):
            raise ClassValidationError("table x values must be strictly increasing")
        if mode == "loglog":
            if np.any(self.xs <= 0) or np.any(self.ys <= 0):
                raise ClassValidationError("log-log table needs positive x and y values")
            self._lx = np.log(self.xs)
            self._ly = np.log(self.ys)
            self._p_lo = (self._ly[1] - self._ly[0]) / (self._lx[1] - self._lx[0])
            self._p_hi = (self._ly[-1] - self._ly[-2]) / (self._lx[-1] - self._lx[-2])
        elif mode != "linear":
            raise ClassValidationError(f"unknown table mode '{mode}'")

    def __call__(self, r: Value) -> Value:
        rr = np.atleast_1d(np.asarray(r, dtype=float))
        if self.mode == "loglog":
            out = np.zeros_like(rr)
            pos = rr > 0
            lr = np.log(rr[pos])
            val = np.interp(lr, self._lx, self._ly)
            below = lr < self._lx[0]
            above = lr > self._lx[-1]
            val[below] = self._ly[0] + self._p_lo * (lr[below] - self._lx[0])
            val[above] = self._ly[-1] + self._p_hi * (lr[above] - self._lx[-1])
            with np.errstate(over="ignore"):
                out[pos] = np.exp(val)
        else:
            out = np.interp(rr, self.xs, self.ys)
            below = rr < self.xs[0]
            slope_lo = (self.ys[1] - self.ys[0]) / (self.xs[1] - self.xs[0])
            out[below] = self.ys[0] + slope_lo * (rr[below] - self.xs[0])
            above = rr > self.xs[-1]
            if self.tail == "decay":
                out[above] = self.ys[-1] * self.xs[-1] / rr[above]
            elif self.tail == "linear":
                slope_hi = (self.ys[-1] - self.ys[-2]) / (self.xs[-1] - self.xs[-2])
                out[above] = self.ys[-1] + slope_hi * (rr[above] - self.xs[-1])
        return _as_output(r, out.reshape(np.shape(r)) if np.ndim(r) else out[0])

    def inverse(self) -> "TabulatedFn":
        """Exact inverse of a strictly increasing table."""
        if np.any(np.diff(self.ys) <= 0):
            raise ClassValidationError("only strictly increasing tables can be inverted")
        return TabulatedFn(
            self.ys, self.xs, self.declared_class, mode=self.mode, tail="linear", label=f"inv({self._label})"
        )

    @property
    def label(self) -> str:
        return self._label

    def to_dict(self) -> Dict[str, Any]:
        return {
            "table": {"x": [float(v) for v in self.xs], "y": [float(v) for v in self.ys]},
            "mode": self.mode,
            "tail": self.tail,
            "class": self.declared_class.value,
        }


class LambdaFn(ScalarFn):
    """Wraps a vectorized Python callable (compositions, maxima, inverses)."""

    def __init__(self, fn: Callable[[np.ndarray], Value], label: str, declared_class: Union[str, ClassTag, None] = None):
        self.fn = fn
        self._label = label
        self.declared_class = ClassTag.parse(declared_class)

    def __call__(self, r: Value) -> Value:
        return _as_output(r, self.fn(np.asarray(r, dtype=float)))

    @property
    def label(self) -> str:
        return self._label


class InverseFn(ScalarFn):
    """Pointwise inverse of a K-infinity function by bisection."""

    def __init__(self, f: ScalarFn):
        self.f = f
        self.declared_class = ClassTag.KINF

    def __call__(self, r: Value) -> Value:
        arr = np.asarray(r, dtype=float)
        flat = np.array([invert(self.f, float(y)) for y in arr.ravel()])
        return _as_output(r, flat.reshape(arr.shape))

    @property
    def label(self) -> str:
        return f"inv({self.f.label})"


def as_scalar_fn(
    spec: Any,
    declared_class: Union[str, ClassTag, None] = None,
    params: Optional[Mapping[str, float]] = None,
    var: Optional[str] = None,
) -> ScalarFn:
    """
    Build a ScalarFn from a config value.

    Args:
        spec: ScalarFn, expression string, number (linear gain k*r), or dict with
              "expr" (plus optional "var", "class", "params") or "table" ({"x", "y"})
        declared_class: Class tag used when the spec does not carry one
        params: Named constants available to expressions

    Returns:
        The scalar function
    """
    if isinstance(spec, ScalarFn):
        return spec
    if isinstance(spec, (int, float)):
        return ExprFn.from_source(f"{float(spec)!r}*r", "r", declared_class)
    if isinstance(spec, str):
        return ExprFn.from_source(spec, var, declared_class, params)
    if isinstance(spec, dict):
        tag = spec.get("class", declared_class)
        merged = dict(params or {})
        merged.update(spec.get("params", {}))
        if "table" in spec:
            table = spec["table"]
            return TabulatedFn(table["x"], table["y"], tag, spec.get("mode", "loglog"), spec.get("tail", "power"))
        if "expr" in spec:
            return ExprFn.from_source(spec["expr"], spec.get("var", var), tag, merged)
    raise ClassValidationError(f"cannot build a scalar function from {spec!r}")


def default_grid() -> np.ndarray:
    """64 log-spaced points on [1e-4, 1e4] unless settings say otherwise."""
    cfg = get_settings("cmpfun")
    return np.geomspace(cfg["grid_min"], cfg["grid_max"], int(cfg["grid_points"]))


def default_tol() -> float:
    return float(get_settings("cmpfun")["tol"])


def check_grid(grid: Iterable[float]) -> np.ndarray:
    """Grid precondition: >= 16 strictly increasing positive points spanning >= 4 decades."""
    g = np.asarray(list(grid) if not isinstance(grid, np.ndarray) else grid, dtype=float)
    if g.ndim != 1 or len(g) < MIN_GRID_POINTS:
        raise ClassValidationError(f"grid needs at least {MIN_GRID_POINTS} points")
    if g[0] <= 0 or np.any(np.diff(g) <= 0):
        raise ClassValidationError("grid must be positive and strictly increasing")
    if np.log10(g[-1] / g[0]) < MIN_GRID_DECADES - 1e-12:
        raise ClassValidationError(f"grid must span at least {MIN_GRID_DECADES:g} decades")
    return g


def _first(mask: np.ndarray) -> Optional[int]:
    idx = np.flatnonzero(mask)
    return int(idx[0]) if len(idx) else None


def validate_class(
    f: ScalarFn,
    cls: Union[str, ClassTag, None] = None,
    grid: Optional[Iterable[float]] = None,
    tol: Optional[float] = None,
) -> ClassCheck:
    """
    Check a function against a comparison class on a grid.

    Args:
        f: Function to check
        cls: Class tag (defaults to the function's declared class)
        grid: Positive grid (default 64 log-spaced points on [1e-4, 1e4])
        tol: Tolerance for f(0) = 0 and for the L decay test relative to the first grid value (default 1e-9)

    Returns:
        ClassCheck with the first counterexample on failure

    Raises:
        DomainError: f cannot be evaluated somewhere on the grid
    """
    tag = ClassTag.parse(cls) if cls is not None else f.declared_class
    g = check_grid(default_grid() if grid is None else grid)
    tol = default_tol() if tol is None else float(tol)

    if tag is ClassTag.NONE:
        return ClassCheck(True)

    f0 = float(f(0.0))
    vals = np.asarray(f(g), dtype=float)
    if tag is ClassTag.NPD:
        f0, vals = -f0, -vals

    if tag in (ClassTag.PD, ClassTag.NPD, ClassTag.UNCONSTRAINED, ClassTag.K, ClassTag.KINF):
        if abs(f0) > tol:
            return ClassCheck(False, 0.0, f"f(0) = {f0:.3g} is not zero")

    if tag in (ClassTag.PD, ClassTag.NPD):
        bad = _first(vals <= 0)
        if bad is not None:
            return ClassCheck(False, float(g[bad]), "not positive")
        return ClassCheck(True)

    if tag is ClassTag.UNCONSTRAINED:
        bad = _first(vals == 0)
        if bad is not None:
            return ClassCheck(False, float(g[bad]), "vanishes away from zero")
        return ClassCheck(True)

    seq = np.concatenate([[f0], vals])
    steps = np.diff(seq)

    if tag in (ClassTag.K, ClassTag.KINF):
        bad = _first(steps <= 0)
        if bad is not None:
            return ClassCheck(False, float(g[bad]), "not strictly increasing")
        if tag is ClassTag.KINF:
            far = 10.0 * float(g[-1])
            if not float(f(far)) > vals[-1]:
                return ClassCheck(False, far, "unboundedness heuristic failed (f(10*last) <= f(last))")
        return ClassCheck(True)

    if tag is ClassTag.L:
        bad = _first(seq < 0)
        if bad is not None:
            return ClassCheck(False, 0.0 if bad == 0 else float(g[bad - 1]), "negative value")
        if not seq[0] > 0:
            return ClassCheck(False, 0.0, "f(0) is not positive")
        # strictly decreasing while positive; once zero (underflow) it stays zero
        bad = _first(((seq[:-1] > 0) & (steps >= 0)) | ((seq[:-1] == 0) & (seq[1:] > 0)))
        if bad is not None:
            return ClassCheck(False, float(g[bad]), "not strictly decreasing")
        if vals[-1] > 0 and not vals[-1] < tol * vals[0]:
            return ClassCheck(False, float(g[-1]), "does not decay below tol * f(first grid point)")
        return ClassCheck(True)

    raise ClassValidationError(f"unsupported class tag {tag}")


def require_class(f: ScalarFn, cls: Union[str, ClassTag, None] = None, grid=None, tol=None, what: str = "function") -> None:
    """validate_class that raises ClassValidationError naming the grid point."""
    check = validate_class(f, cls, grid, tol)
    if not check.ok:
        tag = ClassTag.parse(cls) if cls is not None else f.declared_class
        raise ClassValidationError(
            f"{what} '{f.label}' fails class {tag.value} at r={check.counterexample:g}: {check.reason}",
            check.counterexample,
        )


def majorize_by_L(h: ScalarFn, grid: Optional[Iterable[float]] = None, tol: Optional[float] = None) -> Optional[TabulatedFn]:
    """
    Build a decreasing piecewise-linear envelope g >= h on [0] + grid.

    Returns None when h does not decay: the running maximum from the right
    never drops below tol * h(0).
    """
    g = check_grid(default_grid() if grid is None else grid)
    tol = default_tol() if tol is None else float(tol)
    xs = np.concatenate([[0.0], g])
    vals = np.asarray(h(xs), dtype=float)
    if np.any(~np.isfinite(vals)) or np.any(vals < 0) or vals[0] <= 0:
        raise ClassValidationError(f"'{h.label}' must be finite, nonnegative and positive at 0")

    envelope = np.maximum.accumulate(vals[::-1])[::-1]
    if envelope[-1] >= tol * envelope[0]:
        logger.debug("No L-majorant for %s: envelope stalls at %.3g", h.label, envelope[-1])
        return None

    # strictly decreasing bump, zero at the last point
    n = len(xs)
    envelope = envelope + tol * envelope[0] * (1.0 - np.arange(n) / (n - 1))
    return TabulatedFn(xs, envelope, ClassTag.L, mode="linear", tail="decay", label=f"L-majorant({h.label})")


def inverse_on_grid(f: ScalarFn, y: float, bracket: Tuple[float, float]) -> float:
    """
    Solve f(x) = y for a K-function by bisection.

    Args:
        f: Strictly increasing function on the bracket
        y: Target value within [f(lo), f(hi)]
        bracket: (lo, hi)

    Returns:
        x with |f(x) - y| <= 1e-10 * max(1, |y|) for well-conditioned f

    Raises:
        ValueError: y outside [f(lo), f(hi)]
    """
    lo, hi = float(bracket[0]), float(bracket[1])
    f_lo, f_hi = float(f(lo)), float(f(hi))
    if not f_lo <= y <= f_hi:
        raise ValueError(f"y={y:g} outside range [{f_lo:g}, {f_hi:g}] on bracket [{lo:g}, {hi:g}]")
    if y == f_lo:
        return lo
    if y == f_hi:
        return hi
    return float(
        optimize.bisect(
            lambda x: float(f(x)) - y, lo, hi, xtol=BISECT_XTOL, rtol=BISECT_RTOL, maxiter=BISECT_MAXITER
        )
    )


def invert(f: ScalarFn, y: float, lo: float = 0.0, hi: float = 1.0) -> float:
    """Inverse of a K-infinity function, growing the upper bracket as needed."""
    if y < float(f(lo)):
        raise ValueError(f"y={y:g} below f({lo:g})")
    while float(f(hi)) < y:
        hi *= 10.0
        if hi > 1e300:
            raise ValueError(f"y={y:g} is beyond the range of '{f.label}'")
    return inverse_on_grid(f, y, (lo, hi))


def tabulate(
    f: ScalarFn,
    grid: Iterable[float],
    declared_class: Union[str, ClassTag, None] = None,
    label: Optional[str] = None,
) -> TabulatedFn:
    """Sample f on a positive grid into a log-log table."""
    g = np.asarray(list(grid) if not isinstance(grid, np.ndarray) else grid, dtype=float)
    return TabulatedFn(g, np.asarray(f(g), dtype=float), declared_class, label=label or f.label)


def compose(outer: ScalarFn, inner: ScalarFn, declared_class: Union[str, ClassTag, None] = None) -> LambdaFn:
    return LambdaFn(lambda r: outer(inner(r)), f"{outer.label}∘{inner.label}", declared_class)


def pointwise_max(fns: Sequence[ScalarFn], declared_class: Union[str, ClassTag, None] = None) -> LambdaFn:
    fns = list(fns)
    return LambdaFn(
        lambda r: np.max(np.stack([np.asarray(f(r), dtype=float) for f in fns]), axis=0),
        "max(" + ", ".join(f.label for f in fns) + ")",
        declared_class,
    )


def linear(k: float, declared_class: Union[str, ClassTag, None] = ClassTag.KINF) -> ExprFn:
    return ExprFn.from_source("k*r", "r", declared_class, {"k": float(k)})


def identity() -> ExprFn:
    return ExprFn.from_source("r", "r", ClassTag.KINF)


def zero() -> ExprFn:
    return ExprFn.from_source("0*r", "r", ClassTag.NONE)


@dataclass(frozen=True)
class PowerFit:
    """Fit of f(s) = a*s^b on a log-log grid; residual is the max log error."""

    a: float
    b: float
    residual: float

    def is_power(self, tol: float = 1e-9) -> bool:
        return self.residual <= tol


def fit_power(f: ScalarFn, grid: Optional[Iterable[float]] = None) -> PowerFit:
    """Class-P detector: least-squares line through (log r, log f(r))."""
    g = check_grid(default_grid() if grid is None else grid)
    vals = np.asarray(f(g), dtype=float)
    if np.any(vals <= 0) or np.any(~np.isfinite(vals)):
        return PowerFit(0.0, 0.0, float("inf"))
    lg, lv = np.log(g), np.log(vals)
    b, log_a = np.polyfit(lg, lv, 1)
    residual = float(np.max(np.abs(lv - (log_a + b * lg))))
    return PowerFit(float(np.exp(log_a)), float(b), residual)


@dataclass(frozen=True)
class KLFn:
    """Candidate class-KL function beta(r, t) given by an expression."""

    body: Expr
    r_var: str = "r"
    t_var: str = "t"
    params: Tuple[Tuple[str, float], ...] = ()

    @classmethod
    def from_source(cls, source: str, params: Optional[Mapping[str, float]] = None) -> "KLFn":
        body = parse(source)
        used = {k: float(v) for k, v in (params or {}).items() if k in free_vars(body)}
        return cls(body, params=tuple(sorted(used.items())))

    def __call__(self, r: Value, t: Value) -> Value:
        env: Dict[str, Value] = dict(self.params)
        env[self.r_var] = np.asarray(r, dtype=float)
        env[self.t_var] = np.asarray(t, dtype=float)
        out = np.broadcast_to(np.asarray(evaluate(self.body, env), dtype=float), np.broadcast(env[self.r_var], env[self.t_var]).shape)
        return float(out) if out.ndim == 0 else np.array(out)


def validate_kl(
    beta: Callable[[Value, Value], Value],
    r_grid: Optional[Iterable[float]] = None,
    t_grid: Optional[Iterable[float]] = None,
    tol: Optional[float] = None,
    slices: int = 8,
) -> ClassCheck:
    """beta(., t) must be K for sampled t and beta(r, .) must be L for sampled r > 0."""
    rg = check_grid(default_grid() if r_grid is None else r_grid)
    tg = check_grid(default_grid() if t_grid is None else t_grid)

    for t in np.concatenate([[0.0], tg[np.linspace(0, len(tg) - 1, slices).astype(int)]]):
        if t > 0 and not np.any(np.asarray(beta(rg, t), dtype=float)):
            # underflowed slice
            continue
        check = validate_class(LambdaFn(lambda r, t=t: beta(r, t), "beta(., t)"), ClassTag.K, rg, tol)
        if not check.ok:
            return ClassCheck(False, check.counterexample, f"beta(., {t:g}) {check.reason}")
    for r in rg[np.linspace(0, len(rg) - 1, slices).astype(int)]:
        check = validate_class(LambdaFn(lambda t, r=r: beta(r, t), "beta(r, .)"), ClassTag.L, tg, tol)
        if not check.ok:
            return ClassCheck(False, check.counterexample, f"beta({r:g}, .) {check.reason}")
    return ClassCheck(True)

#!/usr/bin/env python3
"""
ISS Toolkit Errors

Exception hierarchy shared by every core module. Checks that merely find a
violation return a result object; these exceptions are raised only when an
input cannot be used at all.
"""

from typing import Optional


class ISSToolkitError(Exception):
    """Base class for all toolkit errors."""


class ExprError(ISSToolkitError, ValueError):
    """Raised for problems parsing or evaluating an expression."""


class ExprSyntaxError(ExprError):
    """
    Syntax error in an expression source.

    Args:
        message: Description of the problem
        offset: Byte offset into the source where the problem was found
        source: The offending source text
    """

    def __init__(self, message: str, offset: int, source: str = ""):
        self.offset = offset
        self.source = source
        super().__init__(f"{message} at byte {offset}")


class UnknownFunctionError(ExprError):
    def __init__(self, name: str, offset: int):
        self.name = name
        self.offset = offset
        super().__init__(f"unknown function '{name}' at byte {offset}")


class ArityError(ExprError):
    def __init__(self, name: str, expected: str, got: int, offset: int):
        self.name = name
        self.offset = offset
        super().__init__(f"function '{name}' expects {expected} argument(s), got {got} (byte {offset})")


class UnboundVariableError(ExprError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"unbound variable '{name}'")


class DomainError(ExprError):
    """Evaluation left the real domain (sqrt of a negative, ln of a non-positive, ...)."""


class ClassValidationError(ISSToolkitError, ValueError):
    """A function failed validation against its declared comparison class."""

    def __init__(self, message: str, counterexample: Optional[float] = None):
        self.counterexample = counterexample
        super().__init__(message)


class SequenceError(ISSToolkitError, ValueError):
    """Invalid impulse sequence, counter query or generator parameters."""


class SimulationError(ISSToolkitError):
    """The hybrid simulator could not produce a trajectory."""


class CertificateError(ISSToolkitError):
    """A certificate check could not be carried out (e.g. the guard selected no samples)."""


class SmallGainError(ISSToolkitError, ValueError):
    """Gain network misuse or an inadequate Omega-path."""


class LinearizationError(ISSToolkitError):
    """Linearization, the Lyapunov equation or the local certificate search failed."""


class FalsificationError(ISSToolkitError, ValueError):
    """Bad Monte Carlo parameters (too few trials, an unsupported class)."""


class ConfigError(ISSToolkitError, ValueError):
    """
    Invalid project configuration.

    Args:
        message: Description of the problem
        pointer: JSON pointer to the offending value (e.g. "/systems/plant/f/0")
    """

    def __init__(self, message: str, pointer: str = ""):
        self.pointer = pointer
        location = pointer or "/"
        super().__init__(f"{location}: {message}")

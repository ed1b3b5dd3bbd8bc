"""Structured errors raised by the numerical core."""

from __future__ import annotations

__all__ = [
    "GroupLassoError",
    "DimensionMismatchError",
    "NotPositiveSemidefiniteError",
    "SingularMatrixError",
    "ConvergenceError",
    "ConditionUndefinedError",
    "AttemptsExhaustedError",
    "DegenerateDrawError",
]


class GroupLassoError(Exception):
    """Base class for every error raised by the core."""


class DimensionMismatchError(GroupLassoError, ValueError):
    """Two objects disagree on the size of one axis.

    Attributes:
        axis: Name of the offending axis (e.g. ``"rows"``, ``"p"``, ``"n"``).
        expected: Size required by the reference object.
        actual: Size that was found.
    """

    def __init__(self, axis: str, expected: int, actual: int, what: str = "") -> None:
        self.axis = axis
        self.expected = expected
        self.actual = actual
        prefix = f"{what}: " if what else ""
        super().__init__(f"{prefix}dimension mismatch on axis '{axis}' (expected {expected}, got {actual})")


class NotPositiveSemidefiniteError(GroupLassoError, ValueError):
    """A matrix required to be PSD has a clearly negative eigenvalue."""

    def __init__(self, what: str, min_eigenvalue: float) -> None:
        self.min_eigenvalue = min_eigenvalue
        super().__init__(f"{what} is not positive semidefinite (min eigenvalue {min_eigenvalue:.3e})")


class SingularMatrixError(GroupLassoError, ValueError):
    """A matrix that must be inverted is numerically singular."""

    def __init__(self, what: str, min_eigenvalue: float, hint: str = "") -> None:
        self.min_eigenvalue = min_eigenvalue
        self.hint = hint
        msg = f"{what} is numerically singular (min eigenvalue {min_eigenvalue:.3e})"
        if hint:
            msg = f"{msg}; {hint}"
        super().__init__(msg)


class ConvergenceError(GroupLassoError, RuntimeError):
    """An iterative method stopped before reaching its tolerance.

    Attributes:
        residual: Last optimality residual (or duality gap) observed.
        iterations: Number of iterations performed.
    """

    def __init__(self, what: str, residual: float, iterations: int) -> None:
        self.residual = residual
        self.iterations = iterations
        super().__init__(
            f"{what} did not converge after {iterations} iterations (last residual {residual:.3e})"
        )


class ConditionUndefinedError(GroupLassoError, ValueError):
    """A consistency quantity is undefined for the given pattern or loadings."""


class AttemptsExhaustedError(GroupLassoError, RuntimeError):
    """Rejection sampling hit its attempt cap."""

    def __init__(self, what: str, attempts: int) -> None:
        self.attempts = attempts
        super().__init__(f"{what}: no acceptable draw after {attempts} attempts")


class DegenerateDrawError(GroupLassoError, ValueError):
    """A random draw is numerically degenerate and should be redrawn."""

"""Exception types shared across the package."""

from __future__ import annotations


class InvalidInputError(ValueError):
    """An argument violates a documented precondition."""


class ConditioningError(ArithmeticError):
    """The covariance of the conditioning samples is (numerically) singular."""


class SynthesisError(MemoryError):
    """Path synthesis cannot be carried out at the requested size."""


class QuadratureError(ArithmeticError):
    """Adaptive quadrature did not reach its tolerance.

    The best available estimate is kept on ``estimate`` so callers can decide
    whether it is usable.
    """

    def __init__(self, message: str, estimate: float, error: float):
        super().__init__(message)
        self.estimate = estimate
        self.error = error


class ObservableError(ArithmeticError):
    """A noisy observable returned non-finite values twice in a row."""

"""
Exception hierarchy for NLS Decay Lab.

Every error raised by a public operation derives from NLSLabError so callers
(and the CLI) can catch the whole family in one place.
"""

from typing import Any, List, Optional


class NLSLabError(Exception):
    """Base class for all package errors."""
    pass


class ValidationError(NLSLabError, ValueError):
    """Raised when an argument or configuration value violates a precondition."""
    pass


class GridError(ValidationError):
    """Raised for invalid grid parameters or mismatched grids."""
    pass


class QuadratureError(NLSLabError):
    """Raised when a time quadrature cannot be formed or a criterion is unreachable."""
    pass


class CoverageError(NLSLabError):
    """Raised when a trajectory history does not cover a requested time range."""
    pass


class SimulationError(NLSLabError):
    """
    Raised when an evolution produces non-finite values or excessive energy drift.

    Attributes:
        step: Index of the failing step (the final step for energy drift).
        last_good: Last finite field (a ComplexField) before the failure.
    """

    def __init__(self, message: str, step: int, last_good: Optional[Any] = None):
        super().__init__(message)
        self.step = step
        self.last_good = last_good


class ConfigError(ValidationError):
    """
    Raised by configuration parsing with every violation found.

    Attributes:
        errors: List of human-readable violation messages.
    """

    def __init__(self, errors: List[str]):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


class RunInterrupted(NLSLabError):
    """Raised when a run is stopped after writing a checkpoint."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


__all__ = [
    "NLSLabError",
    "ValidationError",
    "GridError",
    "QuadratureError",
    "CoverageError",
    "SimulationError",
    "ConfigError",
    "RunInterrupted",
]

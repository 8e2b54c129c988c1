"""Exception hierarchy shared by all modules.

Each class carries the CLI exit code it maps to.
"""

from __future__ import annotations


class DickeLabError(Exception):
    exit_code = 1


class ConfigError(DickeLabError, ValueError):
    exit_code = 3


class DomainError(DickeLabError, ValueError):
    """Argument outside the domain where a formula is defined."""

    exit_code = 5


class SingularityError(DickeLabError, ArithmeticError):
    """Model is singular, e.g. at the critical point without damping."""

    exit_code = 4


class ConvergenceError(DickeLabError, RuntimeError):
    exit_code = 4

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class QuadratureError(ConvergenceError):
    pass


class UnrealizableCovarianceError(DickeLabError, ValueError):
    """Requested second-order statistics have no classical Gaussian realization."""

    exit_code = 4

    def __init__(self, message: str, violation: float):
        super().__init__(message)
        self.violation = violation


class DataError(DickeLabError, ValueError):
    exit_code = 5


class NoTransitionError(DataError):
    pass

"""Driven-dissipative Dicke model: mean field, fluctuation spectra, synthetic photon
streams and the analysis chain that recovers damping and critical exponents."""

from __future__ import annotations

__version__ = "0.1.0"

from .errors import (ConfigError, ConvergenceError, DataError, DickeLabError, DomainError,
                     NoTransitionError, QuadratureError, SingularityError,
                     UnrealizableCovarianceError)
from .params import PhysicalParams, load_params

__all__ = [
    "__version__", "PhysicalParams", "load_params", "DickeLabError", "ConfigError", "DomainError",
    "SingularityError", "ConvergenceError", "QuadratureError", "UnrealizableCovarianceError",
    "DataError", "NoTransitionError",
]

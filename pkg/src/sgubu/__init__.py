"""Stochastic-gradient UBU kinetic Langevin sampling with Wasserstein bias bounds."""

from .errors import (
    DivergenceError,
    InvariantError,
    NonConvergenceError,
    NumericError,
    ParameterError,
    RegimeError,
    SearchFailure,
    SgubuError,
)

__version__ = "0.1.0"

__all__ = [
    "DivergenceError",
    "InvariantError",
    "NonConvergenceError",
    "NumericError",
    "ParameterError",
    "RegimeError",
    "SearchFailure",
    "SgubuError",
    "__version__",
]

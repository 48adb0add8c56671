"""Copula rank histogram filtering for ensemble data assimilation."""

from corhf.core import (
    DegenerateInputError,
    ensemble_cov,
    ensemble_mean,
    ensemble_stddev,
    substream,
)

__version__ = "0.1.0"

__all__ = [
    "DegenerateInputError",
    "ensemble_cov",
    "ensemble_mean",
    "ensemble_stddev",
    "substream",
    "__version__",
]

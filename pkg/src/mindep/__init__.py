"""Minimum information dependence models for mixed-domain data."""

__version__ = "0.1.0"

from .core import (ColumnType, Dataset, CanonicalStatistic, ModelSpec, pairwise_products,
                   validate_model)
from .exceptions import (ConvergenceError, MindepError, ModelSpecError, NonExistenceError)
from .statlang import statistic
from .estimators import ConditionalLikelihoodEstimator, PseudoLikelihoodEstimator

__all__ = [
    "__version__", "ColumnType", "Dataset", "CanonicalStatistic", "ModelSpec",
    "pairwise_products", "validate_model", "statistic", "MindepError", "ModelSpecError",
    "NonExistenceError", "ConvergenceError", "ConditionalLikelihoodEstimator",
    "PseudoLikelihoodEstimator",
]

"""selpred: selective inference for internal predictors.

Build a first-stage model (lasso at fixed penalty, or marginal screening),
represent the selection event as a polyhedron {y : A y <= b}, and compute
p-values for the second-stage regression questions conditional on that
event, alongside classical baselines (naive tests, sample splitting,
pre-validation, data carving).
"""

__version__ = "0.1.0"

from .core import Dataset, Polyhedron, ResidualOperator, projector, residualize, standardize
from .results import TestResult

__all__ = [
    "Dataset", "Polyhedron", "ResidualOperator", "TestResult",
    "projector", "residualize", "standardize", "__version__",
]

"""Bayesian bi-clustering of categorical data and co-expression integration.

Estimators follow the scikit-learn ``fit`` / ``predict`` / ``get_params``
conventions:

* :class:`BBC1` - clustering of binary data with global feature selection;
* :class:`BBC2` - categorical bi-clustering with cluster-specific selection;
* :class:`HBBC` - divisive hierarchy of two-way BBC2 splits;
* :class:`IntegrationBiclust` - gene modules across correlation matrices.
"""
__version__ = "0.1.0"

from .bbc1 import BBC1, fit_bbc1
from .bbc2 import BBC2, fit_bbc2
from .exceptions import BiclustError, DataError, DomainError, EstimationError, UsageError
from .hbbc import HBBC, grow_tree
from .integrate import CorrelationStack, IntegrationBiclust, fit_integration

__all__ = [
    "BBC1", "BBC2", "HBBC", "IntegrationBiclust", "CorrelationStack",
    "fit_bbc1", "fit_bbc2", "grow_tree", "fit_integration",
    "BiclustError", "DataError", "DomainError", "EstimationError", "UsageError",
    "__version__",
]

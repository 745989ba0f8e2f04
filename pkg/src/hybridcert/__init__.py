"""Certified robustness for classifiers smoothed with mixed discrete and Gaussian noise."""

__version__ = "0.1.0"

from .certificate import (
    CertificateResult,
    HybridProblem,
    capacity,
    certified_radius,
    frontier,
    gaussian_value,
    knapsack_value,
    solve_threshold,
    worst_case_value,
)
from .confidence import MonteCarloEstimate, clopper_pearson_lower, lower_bound
from .errors import (
    DataError,
    DegenerateCertificateError,
    DomainError,
    HybridCertError,
    NumericError,
    ParameterError,
)
from .kernels import (
    ABSORBING,
    L0_REPLACEMENT,
    SUFFIX_APPEND,
    UNIFORM,
    GroupedLikelihoodRatio,
    KernelParams,
    ThreatModel,
    build_groups,
)

__all__ = [
    "ABSORBING", "L0_REPLACEMENT", "SUFFIX_APPEND", "UNIFORM",
    "CertificateResult", "DataError", "DegenerateCertificateError", "DomainError",
    "GroupedLikelihoodRatio", "HybridCertError", "HybridProblem", "KernelParams",
    "MonteCarloEstimate", "NumericError", "ParameterError", "ThreatModel",
    "build_groups", "capacity", "certified_radius", "clopper_pearson_lower", "frontier",
    "gaussian_value", "knapsack_value", "lower_bound", "solve_threshold", "worst_case_value",
]

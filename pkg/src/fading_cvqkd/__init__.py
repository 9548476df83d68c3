"""Simulation and security analysis of CV QKD over fading channels."""

from .channel import Package, ProtocolParams, Run, noise_variance, \
    simulate_package, simulate_run
from .clustering import ClusterPlan, ClusterReport, ConditionalDensity, \
    OptimizeResult, cluster_assign, cluster_stats, conditional_pdf, \
    marginal_pdf, optimize, total_key_rate, total_key_rate_from_estimates
from .distributions import Empirical, LogNegativeWeibull, Moments, \
    TransmittanceDistribution, TruncatedNormal, Uniform, \
    beam_geometry_constants, calibrate_beam_wander, from_descriptor
from .errors import ClusterTooSmallError, EmptyClusterError, FadingCVQKDError, \
    InsufficientDataError, NumericalError, ParameterError, \
    UnphysicalStateError, ValidationError
from .estimation import AggregateStats, PackageEstimate, WorstCaseChannel, \
    aggregate, estimate_noise, estimate_package, estimate_run, estimate_sqrtT, \
    estimate_T, worst_case, worst_case_rectangular
from .security import EffectiveChannel, KeyRateReport, delta_fs, \
    effective_channel, gaussian_entropy, holevo_bound, key_rate, \
    mutual_information

__version__ = "0.1.0"

__all__ = [
    "Package", "ProtocolParams", "Run", "noise_variance",
    "simulate_package", "simulate_run",
    "ClusterPlan", "ClusterReport", "ConditionalDensity", "OptimizeResult",
    "cluster_assign", "cluster_stats", "conditional_pdf", "marginal_pdf",
    "optimize", "total_key_rate", "total_key_rate_from_estimates",
    "Empirical", "LogNegativeWeibull", "Moments",
    "TransmittanceDistribution", "TruncatedNormal", "Uniform",
    "beam_geometry_constants", "calibrate_beam_wander", "from_descriptor",
    "ClusterTooSmallError", "EmptyClusterError", "FadingCVQKDError",
    "InsufficientDataError", "NumericalError", "ParameterError",
    "UnphysicalStateError", "ValidationError",
    "AggregateStats", "PackageEstimate", "WorstCaseChannel", "aggregate",
    "estimate_noise", "estimate_package", "estimate_run", "estimate_sqrtT",
    "estimate_T", "worst_case", "worst_case_rectangular",
    "EffectiveChannel", "KeyRateReport", "delta_fs", "effective_channel",
    "gaussian_entropy", "holevo_bound", "key_rate", "mutual_information",
    "__version__",
]

"""Moment-matching hard instances, statistical-query simulation and
robust estimators for Gaussian means."""

__version__ = "0.1.0"

from .correlation import pairwise_correlation, sq_bound_report, testing_chi2_series
from .instances import (
    HiddenDirectionDistribution,
    cov_tradeoff_instance,
    gmm_hard_instance,
    robust_cov_instance,
    robust_mean_instance,
    sparse_mean_instance,
)
from .learner import LearnerConfig, baseline_filter_mean, moment_matching_check, robust_mean_learn
from .oned import Gaussian1D, Mixture1D, PerturbedGaussian1D, chi2_vs_standard, hermite_expansion, tv_distance
from .polybasis import hermite_quadrature
from .sqoracle import OraclePolicy, QueryLedger, SQOracle
from .tensorher import SymmetricTensor, estimate_hermite_tensor, h_eval
from .testers import basic_mean_test, robust_mean_test

__all__ = [
    "__version__",
    "Gaussian1D",
    "Mixture1D",
    "PerturbedGaussian1D",
    "HiddenDirectionDistribution",
    "LearnerConfig",
    "OraclePolicy",
    "QueryLedger",
    "SQOracle",
    "SymmetricTensor",
    "basic_mean_test",
    "baseline_filter_mean",
    "chi2_vs_standard",
    "cov_tradeoff_instance",
    "estimate_hermite_tensor",
    "gmm_hard_instance",
    "h_eval",
    "hermite_expansion",
    "hermite_quadrature",
    "moment_matching_check",
    "pairwise_correlation",
    "robust_cov_instance",
    "robust_mean_instance",
    "robust_mean_learn",
    "robust_mean_test",
    "sparse_mean_instance",
    "sq_bound_report",
    "testing_chi2_series",
    "tv_distance",
]

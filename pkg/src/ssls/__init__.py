"""Groupwise treatment effect estimation via sample-splitting least squares.

Estimate average treatment effects within covariate-defined groups by
cross-fitting nuisance models (outcome mean and propensity), orthogonalizing,
and running least squares on the group-indicator design. Includes pointwise
and simultaneous (maxT) inference, data-driven group discovery with a
held-out clustering third, residual diagnostics, and a Monte-Carlo harness.
"""

from .clustering import FittedClusterer, KMeansSpec, fit_kmeans, gate_grouping
from .data import (
    CrossFitPlan,
    Dataset,
    GroupEffects,
    Grouping,
    GroupSource,
    load_csv,
    make_crossfit_plan,
    validate_dataset,
)
from .diagnostics import ResidualSeries, flag_regions, residual_series
from .dists import chisq_cdf, chisq_quantile, normal_cdf, normal_quantile
from .estimator import (
    DsslsResult,
    NuisanceFit,
    SslsConfig,
    crossfit_nuisance,
    estimate_dssls,
    estimate_ssls,
    repeated_ssls,
)
from .inference import (
    Contrast,
    GlhResult,
    InferenceReport,
    PairwiseResult,
    all_pairwise,
    glh_test,
    maxt_critical,
    pairwise_test,
    pointwise_tests,
    power_min_n,
    simultaneous_cis,
)
from .learners import (
    CartProbSpec,
    CartSpec,
    GbmProbSpec,
    GbmSpec,
    KnownPropensity,
    LogisticSpec,
    OlsSpec,
    OracleProbSpec,
    OracleSpec,
    RidgeSpec,
    fit_propensity,
    fit_regression,
)
from .rng import Stream
from .transformed_ls import (
    LsEstimate,
    TransformedSample,
    linear_solve_spd,
    solve_transformed_ls,
)

__version__ = "0.1.0"

__all__ = [
    "CartProbSpec",
    "CartSpec",
    "Contrast",
    "CrossFitPlan",
    "Dataset",
    "DsslsResult",
    "FittedClusterer",
    "GbmProbSpec",
    "GbmSpec",
    "GlhResult",
    "GroupEffects",
    "GroupSource",
    "Grouping",
    "InferenceReport",
    "KMeansSpec",
    "KnownPropensity",
    "LogisticSpec",
    "LsEstimate",
    "NuisanceFit",
    "OlsSpec",
    "OracleProbSpec",
    "OracleSpec",
    "PairwiseResult",
    "ResidualSeries",
    "RidgeSpec",
    "SslsConfig",
    "Stream",
    "TransformedSample",
    "all_pairwise",
    "chisq_cdf",
    "chisq_quantile",
    "crossfit_nuisance",
    "estimate_dssls",
    "estimate_ssls",
    "fit_kmeans",
    "fit_propensity",
    "fit_regression",
    "flag_regions",
    "gate_grouping",
    "glh_test",
    "linear_solve_spd",
    "load_csv",
    "make_crossfit_plan",
    "maxt_critical",
    "normal_cdf",
    "normal_quantile",
    "pairwise_test",
    "pointwise_tests",
    "power_min_n",
    "repeated_ssls",
    "residual_series",
    "simultaneous_cis",
    "solve_transformed_ls",
    "validate_dataset",
]

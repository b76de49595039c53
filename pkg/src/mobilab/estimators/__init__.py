"""IGE estimators: direct, benchmark, lifecycle two-step, diagnostics and trends."""

from ._base import (
    LIFECYCLE_VARIANTS,
    VARIANTS,
    EstimationError,
    EstimatorSpec,
    IgeEstimate,
    second_step,
    true_lifetime_series,
)
from .creedy import CreedyModel, creedy_estimate, creedy_fit, creedy_lifetime
from .geiv import GeivResult, crossing_age, geiv_diagnostics
from .lifecycle import (
    ProfileFit,
    estimate_benchmark,
    estimate_direct_annual,
    estimate_lifecycle,
    first_step_design,
    first_step_fit,
    predict_lifetime,
    slope_level_fit,
    smearing_factors,
    subsample_estimates,
    thin_observations,
)
from .trends import (
    TrendsResult,
    TrendsSpec,
    cohort_labels,
    decade_groups,
    direct_by_group,
    estimate_trends,
    standardized_profile,
    year_basis,
)

__all__ = [
    "LIFECYCLE_VARIANTS", "VARIANTS", "EstimationError", "EstimatorSpec", "IgeEstimate", "second_step",
    "true_lifetime_series", "CreedyModel", "creedy_estimate", "creedy_fit", "creedy_lifetime", "GeivResult",
    "crossing_age", "geiv_diagnostics", "ProfileFit", "estimate_benchmark", "estimate_direct_annual",
    "estimate_lifecycle", "first_step_design", "first_step_fit", "predict_lifetime", "slope_level_fit",
    "smearing_factors", "subsample_estimates", "thin_observations", "TrendsResult", "TrendsSpec",
    "cohort_labels", "decade_groups", "direct_by_group", "estimate_trends", "standardized_profile", "year_basis",
]

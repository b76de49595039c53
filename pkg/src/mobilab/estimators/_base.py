"""Shared types for the IGE estimators and the second-step regression."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from ..panel import AgeWindow, Panel
from ..regression import fit

VARIANTS = (
    "DirectAnnual",
    "Benchmark",
    "BaselineFE",
    "ParentalLinearFE",
    "ParentalQuadFE",
    "ParentalQuadNoFE",
    "SlopeLevelQuad",
    "Creedy",
    "Trends",
)
LIFECYCLE_VARIANTS = ("BaselineFE", "ParentalLinearFE", "ParentalQuadFE", "ParentalQuadNoFE", "SlopeLevelQuad")


class EstimationError(ValueError):
    """An estimator could not produce a result."""


@dataclass(frozen=True)
class EstimatorSpec:
    """Which estimator to run and how.

    Parameters
    ----------
    variant : str
        One of ``VARIANTS``.
    first_step_mode : {"logs", "levels"}
        Response of the first-step regression.
    parental_income, parental_educ : bool
        Include parental log income / parental education age interactions
        (only meaningful for the parental variants, which set them by default).
    parent_educ_degree : int
        Degree of the age polynomial interacted with parental education.
    fe : bool, optional
        Person fixed effects; defaults from the variant.
    smearing : bool
        Retransformation correction of predicted levels (logs mode only).
    prediction_ages : (int, int)
        Inclusive range over which lifetime income is summed.
    bottom_code_predictions : float, optional
        Floor applied to level predictions in levels mode.
    split_mode : {"random_assign", "duplicate", "none"}
        How partial profiles are created when the window ends before the
        panel's last age.
    slope_level_iterations : int
        Number of re-estimation passes for ``SlopeLevelQuad``.
    """

    variant: str = "ParentalQuadFE"
    first_step_mode: str = "logs"
    parental_income: bool | None = None
    parental_educ: bool | None = None
    parent_educ_degree: int = 1
    parent_income_degree: int | None = None
    fe: bool | None = None
    smearing: bool = True
    prediction_ages: tuple = (25, 58)
    bottom_code_predictions: float | None = None
    split_mode: str = "random_assign"
    slope_level_iterations: int = 1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.first_step_mode not in ("logs", "levels"):
            raise ValueError("first_step_mode must be 'logs' or 'levels'")
        if self.variant == "ParentalQuadNoFE" and self.fe:
            raise ValueError("ParentalQuadNoFE cannot use person fixed effects")
        if self.first_step_mode == "levels" and self.smearing:
            object.__setattr__(self, "smearing", False)
        if self.split_mode not in ("random_assign", "duplicate", "none"):
            raise ValueError("split_mode must be random_assign, duplicate or none")

    @property
    def use_fe(self) -> bool:
        if self.fe is not None:
            return self.fe
        return self.variant != "ParentalQuadNoFE"

    @property
    def income_degree(self) -> int:
        if self.parent_income_degree is not None:
            return self.parent_income_degree
        if self.variant == "ParentalLinearFE":
            return 1
        if self.variant in ("ParentalQuadFE", "ParentalQuadNoFE"):
            return 2
        return 0

    @property
    def use_parent_income(self) -> bool:
        if self.parental_income is not None:
            return self.parental_income
        return self.variant in ("ParentalLinearFE", "ParentalQuadFE", "ParentalQuadNoFE")

    @property
    def use_parent_educ(self) -> bool:
        if self.parental_educ is not None:
            return self.parental_educ
        return self.use_parent_income

    def with_(self, **changes) -> "EstimatorSpec":
        return replace(self, **changes)


@dataclass
class IgeEstimate:
    """Second-step result.

    Attributes
    ----------
    slope, se : float
        IGE and its robust standard error (first-step error ignored unless a
        bootstrap was requested, in which case ``se_bootstrap`` is filled).
    r2_second_step : float
    r2_first_step_lifetime : float or None
        R-squared of true on predicted lifetime income when truth is known.
    n_persons : int
        Persons in the second step.
    window : AgeWindow or None
    spec : EstimatorSpec or None
    n_excluded : int
        Persons dropped along the way (no observations, nonpositive lifetime, ...).
    """

    slope: float
    se: float
    r2_second_step: float
    n_persons: int
    intercept: float = np.nan
    r2_first_step_lifetime: float | None = None
    window: AgeWindow | None = None
    spec: EstimatorSpec | None = None
    n_excluded: int = 0
    se_bootstrap: float | None = None
    flags: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.se >= 0 and not np.isnan(self.se):
            raise ValueError("se must be non-negative")
        if self.n_persons <= 0:
            raise ValueError("n_persons must be positive")

    def as_row(self) -> dict:
        return {
            "estimator": self.spec.variant if self.spec else self.extra.get("estimator", ""),
            "window": str(self.window) if self.window else "",
            "slope": self.slope,
            "se": self.se,
            "r2_second_step": self.r2_second_step,
            "r2_first_step_lifetime": self.r2_first_step_lifetime,
            "n_persons": self.n_persons,
            "n_excluded": self.n_excluded,
        }


def second_step(
    lifetime: np.ndarray,
    parent: np.ndarray,
    truth: np.ndarray | None = None,
    **meta,
) -> IgeEstimate:
    """OLS of (predicted) child log lifetime income on parental log income.

    Persons with non-finite values are excluded and counted in ``n_excluded``.
    """
    lifetime = np.asarray(lifetime, dtype=np.float64)
    parent = np.asarray(parent, dtype=np.float64)
    ok = np.isfinite(lifetime) & np.isfinite(parent)
    n_bad = int((~ok).sum())
    if ok.sum() < 3:
        raise EstimationError("fewer than 3 persons with finite lifetime income")
    X = np.column_stack([np.ones(ok.sum()), parent[ok]])
    res = fit(X, lifetime[ok], robust=True, names=["Intercept", "parent_log_income"])
    r2_first = None
    if truth is not None:
        t = np.asarray(truth, dtype=np.float64)[ok]
        if np.isfinite(t).all():
            c = np.corrcoef(t, lifetime[ok])[0, 1]
            r2_first = float(c * c)
    meta["n_excluded"] = meta.get("n_excluded", 0) + n_bad
    return IgeEstimate(
        slope=float(res.coefficients["parent_log_income"]),
        se=float(res.se["parent_log_income"]),
        r2_second_step=res.r2,
        n_persons=int(ok.sum()),
        intercept=float(res.coefficients["Intercept"]),
        r2_first_step_lifetime=r2_first,
        **meta,
    )


def true_lifetime_series(panel: Panel) -> pd.Series:
    """Stored truth when present, otherwise the log sum over the observed profile."""
    if "true_log_lifetime" in panel.persons and panel.persons["true_log_lifetime"].notna().all():
        return pd.Series(panel.persons["true_log_lifetime"].to_numpy(), index=panel.person_index)
    from ..income_process import lifetime_from_panel

    return lifetime_from_panel(panel)

"""Lifecycle IGE by birth-cohort group with cohort-specific parental growth.

Recent cohorts are observed only at young ages, so their profiles must be
extrapolated. The first step lets the parental-income gradient in growth differ
by cohort group through an interaction with a standardized age profile, the
average concave shape of log income over age scaled to run from 0 at the
youngest age to 1 at its peak.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.linalg import null_space

from ..panel import AgeWindow, Panel
from ..regression import Cat, Cont, DesignSpec, FitResult, Interact, Poly, fit, fit_frame, predict
from ._base import EstimationError, second_step, true_lifetime_series
from .lifecycle import AGE_DEGREE, estimate_direct_annual, smearing_factors


@dataclass(frozen=True)
class TrendsSpec:
    """Options for the cohort-trends estimator.

    Parameters
    ----------
    fe : bool
        Person fixed effects; otherwise intercepts vary with parental income,
        own education and parental education.
    year_effects : bool
        Include normalized calendar-year dummies.
    parent_income_degree : int
        Degree of the pooled age polynomial interacted with parental income
        (0 drops it).
    parent_educ : bool
        Linear age interacted with parental education.
    cohort_interaction : bool
        Cohort group x parental income x standardized profile terms. Without
        them the first step assumes one parental growth gradient for everyone.
    prediction_ages : (int, int)
    smearing : bool
    """

    fe: bool = True
    year_effects: bool = True
    parent_income_degree: int = 2
    parent_educ: bool = True
    cohort_interaction: bool = True
    prediction_ages: tuple = (25, 58)
    smearing: bool = True


@dataclass
class TrendsResult:
    """Per-group estimates plus the pieces that produced them."""

    estimates: dict
    profile: pd.Series
    first_step: FitResult
    flags: list = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for label, est in self.estimates.items():
            row = est.as_row()
            row.update({"estimator": "Trends", "cohort_group": label,
                        "truth": est.extra.get("truth_slope", np.nan),
                        "extrapolated": est.extra.get("extrapolated", False)})
            rows.append(row)
        return pd.DataFrame(rows)


def cohort_labels(cohort: np.ndarray, groups) -> np.ndarray:
    """Label each cohort by its group ``"lo-hi"``; cohorts outside every group get ``""``."""
    cohort = np.asarray(cohort)
    out = np.full(cohort.shape, "", dtype=object)
    for lo, hi in groups:
        out[(cohort >= lo) & (cohort <= hi)] = f"{lo}-{hi}"
    return out


def decade_groups(panel: Panel) -> tuple:
    """Decade-of-birth groups covering the panel's cohorts."""
    c = panel.persons["cohort"].to_numpy()
    first, last = int(c.min()) // 10 * 10, int(c.max()) // 10 * 10
    return tuple((d, d + 9) for d in range(first, last + 1, 10))


def year_basis(years: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Year dummies re-expressed so the effects sum to zero and carry no trend.

    Returns the ``(n, T - 2)`` regressor matrix and the ``(T, T - 2)`` basis.
    A linear time trend is not separately identified from age and cohort, so
    year effects are restricted to be orthogonal to one.
    """
    uniq, codes = np.unique(years, return_inverse=True)
    if len(uniq) < 3:
        return np.zeros((len(years), 0)), np.zeros((len(uniq), 0))
    t = uniq.astype(float) - uniq.mean()
    basis = null_space(np.vstack([np.ones_like(t), t]))
    return basis[codes], basis


def standardized_profile(panel: Panel, ages=None) -> pd.Series:
    """Average concave shape of log income over age, scaled to [0, 1].

    Log income is regressed on age dummies and normalized year effects; the
    age coefficients are smoothed with a count-weighted quartic in age, which
    is shifted to 0 at the youngest age and scaled to 1 at its maximum.
    """
    ages = np.arange(panel.age_min, panel.age_max + 1) if ages is None else np.asarray(ages)
    y = panel.log_income()
    age = panel.incomes["age"].to_numpy()
    obs_ages, acode = np.unique(age, return_inverse=True)
    if len(obs_ages) < AGE_DEGREE + 1:
        raise EstimationError("standardized profile needs at least five distinct ages")
    D = np.zeros((len(age), len(obs_ages)))
    D[np.arange(len(age)), acode] = 1.0
    Yb, _ = year_basis(panel.incomes["year"].to_numpy())
    res = fit(np.column_stack([D, Yb]), y, robust=False)
    raw = res.coefficients.to_numpy()[: len(obs_ages)]
    counts = np.bincount(acode).astype(float)
    mid = 0.5 * (panel.age_min + panel.age_max)
    V = np.vander(obs_ages - mid, AGE_DEGREE + 1, increasing=True)
    w = np.sqrt(counts)
    coef = np.linalg.lstsq(V * w[:, None], raw * w, rcond=None)[0]
    grid = np.arange(panel.age_min, panel.age_max + 1)
    smooth = np.vander(grid - mid, AGE_DEGREE + 1, increasing=True) @ coef
    span = smooth.max() - smooth[0]
    if not span > 0:
        raise EstimationError("average profile never rises above its starting value")
    at = np.vander(ages - mid, AGE_DEGREE + 1, increasing=True) @ coef
    return pd.Series((at - smooth[0]) / span, index=ages, name="profile")


def _trends_design(spec: TrendsSpec, labels: list[str], n_year_cols: int) -> DesignSpec:
    age4 = Poly("age", AGE_DEGREE)
    terms = [age4, Interact(age4, Cat("educ_group"))]
    if spec.parent_income_degree > 0:
        terms.append(Interact(Poly("age", spec.parent_income_degree), Cont("parent_log_income")))
    if spec.parent_educ:
        terms.append(Interact(Poly("age", 1), Cat("parent_educ_group")))
    if spec.cohort_interaction:
        # reference group absorbed by the pooled parental terms
        for lab in labels[1:]:
            terms.append(Interact(Cont(f"_g{lab}", center=False), Cont("parent_log_income"), Cont("_profile", center=False)))
    terms += [Cont(f"_yr{j}", center=False) for j in range(n_year_cols)]
    if spec.fe:
        return DesignSpec(tuple(terms), fe="person")
    mains = [Cat("educ_group"), Cat("parent_educ_group"), Cat("_cohort_group")]
    return DesignSpec(tuple(mains + terms), fe="parent-income-intercept")


def _add_columns(frame: pd.DataFrame, labels, profile: pd.Series | None, year_cols: np.ndarray | None):
    if profile is not None:
        frame["_profile"] = profile.reindex(frame["age"].to_numpy()).to_numpy()
    for lab in labels:
        frame[f"_g{lab}"] = (frame["_cohort_group"].to_numpy() == lab).astype(float)
    if year_cols is not None:
        for j in range(year_cols.shape[1]):
            frame[f"_yr{j}"] = year_cols[:, j]
    return frame


def estimate_trends(panel: Panel, cohort_groups=None, spec: TrendsSpec | None = None) -> TrendsResult:
    """Per-cohort-group lifecycle IGE with cohort-specific parental growth.

    Parameters
    ----------
    panel : Panel
        Observed person-years; later cohorts may lack old ages.
    cohort_groups : sequence of (first, last), optional
        Birth-year ranges; defaults to decades. At least two must be populated.
    spec : TrendsSpec, optional

    Returns
    -------
    TrendsResult
        One ``IgeEstimate`` per group, keyed ``"first-last"``. Groups whose
        oldest observed age is below the last prediction age are flagged as
        extrapolated.
    """
    spec = spec or TrendsSpec()
    groups = tuple(cohort_groups) if cohort_groups is not None else decade_groups(panel)
    persons = panel.persons
    plabel = cohort_labels(persons["cohort"].to_numpy(), groups)
    labels = [f"{lo}-{hi}" for lo, hi in groups if (plabel == f"{lo}-{hi}").any()]
    if len(labels) < 2:
        raise EstimationError("need at least two populated cohort groups")
    inside = plabel != ""
    if not inside.all():
        keep_ids = persons["person_id"][inside]
        panel = panel.with_("cohort_groups", {"groups": [list(g) for g in groups]},
                            persons=persons[inside].reset_index(drop=True),
                            incomes=panel.incomes[panel.incomes["person_id"].isin(keep_ids)].reset_index(drop=True))
        persons = panel.persons
        plabel = plabel[inside]
    persons = persons.assign(_cohort_group=plabel)
    panel = panel.with_("cohort_labels", {}, persons=persons)

    profile = standardized_profile(panel)
    frame = panel.frame()
    frame["log_income"] = panel.log_income()
    yc = year_basis(panel.incomes["year"].to_numpy())[0] if spec.year_effects else np.zeros((len(frame), 0))
    frame = _add_columns(frame, labels, profile, yc)
    design = _trends_design(spec, labels, yc.shape[1])
    res = fit_frame(frame, design, age_bounds=(panel.age_min, panel.age_max))

    # predictions set year effects to zero
    ppl = _add_columns(persons.copy(), labels, None, None)
    for j in range(yc.shape[1]):
        ppl[f"_yr{j}"] = 0.0

    lo, hi = spec.prediction_ages
    life = _predict(res, panel, ppl, _extend_profile(panel, profile, lo, hi), spec)

    truth = true_lifetime_series(panel)
    max_age = panel.incomes.groupby("person_id")["age"].max()
    flags = []
    estimates = {}
    p = persons["parent_log_income"].to_numpy()
    for lab in labels:
        sel = plabel == lab
        ids = persons["person_id"].to_numpy()[sel]
        tl = truth.reindex(ids).to_numpy()
        est = second_step(life.to_numpy()[sel], p[sel], truth=tl)
        est.extra.update({"estimator": "Trends", "cohort_group": lab})
        if np.isfinite(tl).all():
            est.extra["truth_slope"] = second_step(tl, p[sel]).slope
        oldest = int(max_age.reindex(ids).max())
        if oldest < hi:
            est.extra["extrapolated"] = True
            est.flags.append(f"extrapolated beyond age {oldest}")
            flags.append(f"cohort group {lab}: no observations after age {oldest}; prediction extrapolates")
        estimates[lab] = est
    return TrendsResult(estimates, profile, res, flags)


def _extend_profile(panel: Panel, profile: pd.Series, lo: int, hi: int) -> pd.Series:
    if lo < panel.age_min or hi > panel.age_max:
        return standardized_profile(panel, np.arange(lo, hi + 1))
    return profile


def _predict(res: FitResult, panel: Panel, ppl: pd.DataFrame, profile: pd.Series, spec: TrendsSpec) -> pd.Series:
    lo, hi = spec.prediction_ages
    ages = np.arange(lo, hi + 1)
    n, T = len(ppl), len(ages)
    rows = ppl.loc[ppl.index.repeat(T)].reset_index(drop=True)
    rows["age"] = np.tile(ages, n)
    rows["_profile"] = np.tile(profile.reindex(ages).to_numpy(), n)
    pred = predict(res, rows).reshape(n, T)
    peak = np.nanmax(pred, axis=1, keepdims=True)
    with np.errstate(invalid="ignore"):
        life = peak[:, 0] + np.log(np.exp(pred - peak).sum(axis=1))
    if spec.smearing:
        sm = smearing_factors(panel)
        life = life + np.log(sm.reindex(panel.person_index).to_numpy())
    return pd.Series(life, index=panel.person_index)


def direct_by_group(panel: Panel, cohort_groups, window: AgeWindow) -> dict:
    """Pooled annual-income IGE per cohort group over a fixed age window."""
    plabel = cohort_labels(panel.persons["cohort"].to_numpy(), cohort_groups)
    out = {}
    for lo, hi in cohort_groups:
        lab = f"{lo}-{hi}"
        sel = plabel == lab
        if not sel.any():
            continue
        ids = panel.persons["person_id"][sel]
        sub = panel.with_("cohort_group", {"group": lab},
                          persons=panel.persons[sel].reset_index(drop=True),
                          incomes=panel.incomes[panel.incomes["person_id"].isin(ids)].reset_index(drop=True))
        est = estimate_direct_annual(sub, window)
        est.extra["cohort_group"] = lab
        out[lab] = est
    return out

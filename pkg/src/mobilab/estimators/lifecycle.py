"""Direct, benchmark and two-step lifecycle estimators of the IGE.

The lifecycle estimators fit a first-step income-profile regression on the
observed person-years, predict each person's log income over a fixed age
range, aggregate the predictions into log lifetime income and regress that on
parental log income.

When the estimation window ends before the panel's last age, profiles are
split at the window's upper age: a "young" part observed within the window
and an "old" part observed afterwards. The first step is fit on both parts
pooled; the second step uses the young persons only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .. import kernels
from ..panel import AgeWindow, Panel, restrict_window, sample_persons, split_young_old
from ..regression import Cat, Cont, DesignSpec, FitResult, Interact, Poly, fit_frame, predict
from ..rng import substream
from ._base import EstimationError, EstimatorSpec, IgeEstimate, second_step, true_lifetime_series

AGE_DEGREE = 4


def estimate_benchmark(panel: Panel) -> IgeEstimate:
    """OLS of true child log lifetime income on parental log income."""
    life = true_lifetime_series(panel)
    if life.isna().all():
        raise EstimationError("no lifetime income information")
    est = second_step(life.to_numpy(), panel.persons["parent_log_income"].to_numpy())
    est.extra["estimator"] = "Benchmark"
    return est


def estimate_direct_annual(panel: Panel, window: AgeWindow) -> IgeEstimate:
    """Pooled OLS of annual log income on parental log income over ``window``."""
    age = panel.incomes["age"].to_numpy()
    rows = (age >= window.lo) & (age <= window.hi)
    if not rows.any():
        raise EstimationError(f"no observations in window {window}")
    y = panel.log_income()[rows]
    p = panel.persons["parent_log_income"].to_numpy()[panel.obs_codes[rows]]
    est = second_step(y, p, window=window)
    est.n_persons = int(np.unique(panel.obs_codes[rows]).size)
    est.extra["estimator"] = "DirectAnnual"
    est.extra["n_obs"] = int(rows.sum())
    return est


# ------------------------------------------------------------ first step


def first_step_design(spec: EstimatorSpec) -> DesignSpec:
    """Design for a lifecycle variant's first step.

    Every variant has a quartic age profile per education group. The parental
    variants add age polynomials interacted with parental log income and
    parental education. Without person effects the intercept varies with
    parental income, own education and parental education instead.
    """
    age4 = Poly("age", AGE_DEGREE)
    terms = [age4, Interact(age4, Cat("educ_group"))]
    if spec.use_parent_income and spec.income_degree > 0:
        terms.append(Interact(Poly("age", spec.income_degree), Cont("parent_log_income")))
    if spec.use_parent_educ:
        terms.append(Interact(Poly("age", spec.parent_educ_degree), Cat("parent_educ_group")))
    response = "level" if spec.first_step_mode == "levels" else "log"
    if spec.use_fe:
        return DesignSpec(tuple(terms), fe="person", response=response)
    mains = [Cat("educ_group")]
    if spec.use_parent_educ:
        mains.append(Cat("parent_educ_group"))
    return DesignSpec(tuple(mains + terms), fe="parent-income-intercept", response=response)


@dataclass
class ProfileFit:
    """A fitted first-step model with the estimator spec that produced it."""

    result: FitResult
    spec: EstimatorSpec
    age_bounds: tuple
    mu_hat: pd.Series | None = None
    iterations: int = 0


def _estimation_frame(panel: Panel, spec: EstimatorSpec) -> pd.DataFrame:
    frame = panel.frame()
    if spec.first_step_mode == "logs":
        frame["log_income"] = panel.log_income()
    return frame


def first_step_fit(panel: Panel, spec: EstimatorSpec, window: AgeWindow | None = None) -> ProfileFit:
    """Fit the first-step profile regression for ``spec`` on ``panel``.

    ``window`` restricts the observations used (no split is performed here).
    """
    if spec.variant == "SlopeLevelQuad":
        return slope_level_fit(panel, window, spec)
    if window is not None:
        panel = restrict_window(panel, window)
    frame = _estimation_frame(panel, spec)
    res = fit_frame(frame, first_step_design(spec), age_bounds=(panel.age_min, panel.age_max))
    return ProfileFit(res, spec, (panel.age_min, panel.age_max))


def slope_level_fit(panel: Panel, window: AgeWindow | None = None, spec: EstimatorSpec | None = None) -> ProfileFit:
    """Profiles whose growth varies with the person's own estimated effect.

    Pass one fits person effects plus the education-specific quartic. Each
    further pass adds the previous pass's person effect interacted with a
    quadratic in age and re-estimates; ``spec.slope_level_iterations`` passes
    follow the first.
    """
    spec = spec or EstimatorSpec("SlopeLevelQuad")
    if window is not None:
        panel = restrict_window(panel, window)
    bounds = (panel.age_min, panel.age_max)
    frame = _estimation_frame(panel, spec)
    base = spec.with_(variant="BaselineFE", fe=True)
    base_design = first_step_design(base)
    res = fit_frame(frame, base_design, age_bounds=bounds)
    mu = res.fixed_effects
    design = DesignSpec(
        base_design.terms + (Interact(Poly("age", 2), Cont("mu_hat", center=False)),),
        fe="person",
        response=base_design.response,
    )
    for _ in range(max(1, spec.slope_level_iterations)):
        frame["mu_hat"] = mu.reindex(frame["person_id"].to_numpy()).to_numpy()
        res = fit_frame(frame, design, age_bounds=bounds)
        mu = res.fixed_effects
    # prediction needs the effect that entered the interaction, not the refit one
    return ProfileFit(res, spec, bounds, mu_hat=pd.Series(frame.groupby("person_id")["mu_hat"].first()),
                      iterations=spec.slope_level_iterations)


# ------------------------------------------------------------ prediction


def smearing_factors(panel: Panel) -> pd.Series:
    """Per-person mean of ``exp(residual)`` from an auxiliary profile fit.

    The auxiliary model is person effects plus a quartic age profile per
    education group, fit on the observed log incomes. Multiplying the sum of
    predicted levels by this factor equals adding ``exp(residual)`` at every
    prediction age, with unobserved ages imputed by the person's mean.
    """
    frame = panel.frame()
    frame["log_income"] = panel.log_income()
    age4 = Poly("age", AGE_DEGREE)
    aux = DesignSpec((age4, Interact(age4, Cat("educ_group"))), fe="person", robust_se=False)
    res = fit_frame(frame, aux, age_bounds=(panel.age_min, panel.age_max))
    codes = panel.obs_codes
    mean_exp = kernels.group_means(np.exp(res.residuals), codes, panel.n_persons)
    return pd.Series(mean_exp, index=panel.person_index)


def predict_profiles(profile: ProfileFit, persons: pd.DataFrame, ages) -> np.ndarray:
    """Predicted first-step response, shape ``(n_persons, n_ages)``."""
    ages = np.asarray(ages)
    n, T = len(persons), len(ages)
    rows = persons.loc[persons.index.repeat(T)].reset_index(drop=True)
    rows["age"] = np.tile(ages, n)
    if profile.mu_hat is not None:
        rows["mu_hat"] = profile.mu_hat.reindex(rows["person_id"].to_numpy()).to_numpy()
    return predict(profile.result, rows).reshape(n, T)


def predict_lifetime(
    profile: ProfileFit,
    panel: Panel,
    prediction_ages=None,
    smearing: bool | None = None,
    bottom_code_predictions: float | None = None,
    smear: pd.Series | None = None,
) -> tuple[pd.Series, dict]:
    """Predicted log lifetime income per person in ``panel``.

    Parameters
    ----------
    profile : ProfileFit
    panel : Panel
        Persons to predict for; their observed incomes feed the smearing factor.
    prediction_ages : (int, int), optional
        Defaults to ``profile.spec.prediction_ages``.
    smearing : bool, optional
        Logs mode only; defaults to ``profile.spec.smearing``.
    bottom_code_predictions : float, optional
        Levels mode: floor for each predicted annual income.
    smear : pandas.Series, optional
        Precomputed smearing factors indexed by person.

    Returns
    -------
    (lifetime, info)
        ``lifetime`` is NaN for persons that could not be predicted; ``info``
        counts persons lacking a fixed effect and nonpositive level sums.
    """
    spec = profile.spec
    lo, hi = prediction_ages or spec.prediction_ages
    ages = np.arange(lo, hi + 1)
    smearing = spec.smearing if smearing is None else smearing
    floor = bottom_code_predictions if bottom_code_predictions is not None else spec.bottom_code_predictions
    pred = predict_profiles(profile, panel.persons, ages)
    info = {"missing_fe": int(np.isnan(pred).any(axis=1).sum()), "nonpositive": 0}
    if spec.first_step_mode == "levels":
        if floor is not None:
            pred = np.where(pred < floor, floor, pred)
        total = pred.sum(axis=1)
        bad = ~(total > 0)
        info["nonpositive"] = int((bad & np.isfinite(total)).sum())
        with np.errstate(invalid="ignore", divide="ignore"):
            life = np.where(bad, np.nan, np.log(np.where(bad, 1.0, total)))
    else:
        peak = np.nanmax(pred, axis=1, keepdims=True) if pred.size else pred
        with np.errstate(invalid="ignore"):
            life = peak[:, 0] + np.log(np.exp(pred - peak).sum(axis=1))
        if smearing:
            sm = smear if smear is not None else smearing_factors(panel)
            life = life + np.log(sm.reindex(panel.person_index).to_numpy())
    return pd.Series(life, index=panel.person_index), info


# ------------------------------------------------------------ composition


def _prepare_samples(panel: Panel, spec: EstimatorSpec, window: AgeWindow, seed: int):
    """Return ``(estimation_panel, evaluation_panel)`` for a window."""
    if window.lo < panel.age_min or window.hi > panel.age_max:
        raise EstimationError(f"window {window} outside panel bounds")
    if window.hi < panel.age_max and spec.split_mode != "none":
        split = split_young_old(panel, window.hi, spec.split_mode, seed)
        age = split.incomes["age"].to_numpy()
        keep = age >= window.lo
        incomes = split.incomes[keep].reset_index(drop=True)
        present = split.persons["person_id"].isin(incomes["person_id"].unique()).to_numpy()
        est = split.with_("window_lower_bound", {"lo": window.lo},
                          incomes=incomes, persons=split.persons[present].reset_index(drop=True))
        young = est.persons["group_tag"].to_numpy() == "young"
        yp = est.persons[young].reset_index(drop=True)
        codes = est.obs_codes
        evaluation = est.with_("young_only", {}, persons=yp,
                               incomes=est.incomes[young[codes]].reset_index(drop=True))
        return est, evaluation
    est = restrict_window(panel, window)
    return est, est


def thin_observations(panel: Panel, max_obs_per_person: int, window: AgeWindow | None = None, seed: int = 0) -> Panel:
    """Keep at most ``max_obs_per_person`` randomly chosen observations per person.

    Only observations inside ``window`` (all when None) are eligible and the
    rest are dropped; draws come from the ``thinning`` substream.
    """
    if max_obs_per_person < 2:
        raise ValueError("max_obs_per_person must be at least 2")
    age = panel.incomes["age"].to_numpy()
    eligible = np.ones(len(age), dtype=bool)
    if window is not None:
        eligible = (age >= window.lo) & (age <= window.hi)
    idx = np.flatnonzero(eligible)
    codes = panel.obs_codes[idx]
    rng = substream(seed, "thinning", max_obs_per_person)
    priority = rng.random(len(idx))
    order = np.lexsort((priority, codes))
    sc = codes[order]
    starts = np.r_[0, np.flatnonzero(np.diff(sc)) + 1] if len(sc) else np.zeros(0, dtype=int)
    lengths = np.diff(np.r_[starts, len(sc)])
    rank = np.arange(len(sc)) - np.repeat(starts, lengths)
    keep = np.sort(idx[order[rank < max_obs_per_person]])
    incomes = panel.incomes.iloc[keep].reset_index(drop=True)
    present = panel.persons["person_id"].isin(incomes["person_id"].unique()).to_numpy()
    return panel.with_(
        "thin_observations", {"max_obs": max_obs_per_person, "window": str(window) if window else None},
        incomes=incomes, persons=panel.persons[present].reset_index(drop=True),
    )


def estimate_lifecycle(
    panel: Panel,
    spec: EstimatorSpec,
    window: AgeWindow,
    seed: int = 0,
    max_obs_per_person: int | None = None,
    bootstrap: int = 0,
) -> IgeEstimate:
    """Two-step lifecycle IGE for one window.

    Parameters
    ----------
    panel : Panel
        Full profiles (synthetic) or whatever is observed.
    spec : EstimatorSpec
        A lifecycle variant.
    window : AgeWindow
        Ages observed for the evaluation persons.
    seed : int
        Seeds the young/old split, thinning and bootstrap.
    max_obs_per_person : int, optional
        Thin every (pseudo-)person to at most this many observations.
    bootstrap : int
        When positive, resample persons this many times (re-running both
        steps) and report the standard deviation as ``se_bootstrap``.
    """
    if spec.variant not in ("BaselineFE", "ParentalLinearFE", "ParentalQuadFE", "ParentalQuadNoFE", "SlopeLevelQuad"):
        raise EstimationError(f"{spec.variant} is not a lifecycle variant")
    truth = true_lifetime_series(panel)
    est_panel, eval_panel = _prepare_samples(panel, spec, window, seed)
    if max_obs_per_person is not None:
        est_panel = thin_observations(est_panel, max_obs_per_person, None, seed)
        keep = eval_panel.persons["person_id"].isin(est_panel.persons["person_id"]).to_numpy()
        eval_panel = est_panel.with_(
            "evaluation", {},
            persons=eval_panel.persons[keep].reset_index(drop=True),
            incomes=est_panel.incomes[est_panel.incomes["person_id"].isin(eval_panel.persons["person_id"][keep])].reset_index(drop=True),
        )
    result = _two_step(est_panel, eval_panel, spec, truth, panel)
    result.window = window
    if bootstrap > 0:
        draws = []
        rng = substream(seed, "bootstrap", window.lo, window.hi)
        ids = est_panel.persons["person_id"].to_numpy()
        for b in range(bootstrap):
            pick = rng.integers(0, len(ids), len(ids))
            try:
                draws.append(_bootstrap_once(est_panel, eval_panel, spec, truth, panel, pick))
            except (EstimationError, ValueError):
                continue
        if len(draws) >= 2:
            result.se_bootstrap = float(np.std(draws, ddof=1))
            result.extra["bootstrap_draws"] = len(draws)
    return result


def _two_step(est_panel, eval_panel, spec, truth, full_panel) -> IgeEstimate:
    profile = first_step_fit(est_panel, spec)
    smear = smearing_factors(est_panel) if spec.smearing and spec.first_step_mode == "logs" else None
    life, info = predict_lifetime(profile, eval_panel, smear=smear)
    persons = eval_panel.persons
    origin = persons["origin_id"] if "origin_id" in persons else persons["person_id"]
    tl = truth.reindex(origin.to_numpy()).to_numpy()
    excluded = full_panel.n_persons - len(persons) if spec.split_mode == "none" else 0
    est = second_step(
        life.to_numpy(), persons["parent_log_income"].to_numpy(), truth=tl, spec=spec,
        n_excluded=excluded + info["nonpositive"],
    )
    est.extra.update(info)
    est.extra["estimator"] = spec.variant
    est.extra["n_obs_first_step"] = est_panel.n_obs
    est.extra["n_first_step_vars"] = len(profile.result.coefficients)
    return est


def _bootstrap_once(est_panel, eval_panel, spec, truth, full_panel, pick):
    # resampled persons get fresh ids so fixed effects stay person-specific
    persons = est_panel.persons.iloc[pick].reset_index(drop=True)
    persons = persons.assign(boot_origin=persons["person_id"].to_numpy(), person_id=np.arange(len(pick)))
    codes = est_panel.obs_codes
    order = np.argsort(codes, kind="stable")
    starts = np.searchsorted(codes[order], np.arange(est_panel.n_persons))
    ends = np.searchsorted(codes[order], np.arange(est_panel.n_persons), side="right")
    parts = [order[starts[i]:ends[i]] for i in pick]
    rows = np.concatenate(parts)
    new_ids = np.repeat(np.arange(len(pick)), [len(p) for p in parts])
    incomes = est_panel.incomes.iloc[rows].reset_index(drop=True).assign(person_id=new_ids)
    if "origin_id" not in persons:
        persons["origin_id"] = persons["boot_origin"]
    boot = est_panel.with_("bootstrap", {}, persons=persons, incomes=incomes)
    evaluation_ids = set(eval_panel.persons["person_id"].tolist())
    is_eval = np.array([pid in evaluation_ids for pid in persons["boot_origin"]])
    ev = boot.with_("bootstrap_eval", {}, persons=persons[is_eval].reset_index(drop=True),
                    incomes=incomes[np.isin(new_ids, np.flatnonzero(is_eval))].reset_index(drop=True))
    return _two_step(boot, ev, spec, truth, full_panel).slope


def subsample_estimates(
    panel: Panel,
    spec: EstimatorSpec,
    window: AgeWindow,
    fraction: float,
    repetitions: int,
    seed: int = 0,
) -> pd.DataFrame:
    """Re-estimate on ``repetitions`` random person subsamples of size ``fraction``.

    Returns one row per repetition with the lifecycle and benchmark slopes;
    summarise with mean and standard deviation.
    """
    rows = []
    for r in range(repetitions):
        sub = sample_persons(panel, fraction, seed, r)
        est = estimate_lifecycle(sub, spec, window, seed=seed + r)
        bench = estimate_benchmark(sub)
        rows.append({"rep": r, "slope": est.slope, "benchmark": bench.slope, "n_persons": est.n_persons})
    return pd.DataFrame(rows)

"""Rank-preserving rescaling of a single income observation.

Within each group, the mean and standard deviation of log income are modelled
over age. A person's standardized score at the observed age is then carried to
every target age, the rebuilt log incomes are summed in levels and the log of
that sum serves as lifetime income.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from ..panel import Panel
from ._base import EstimationError, IgeEstimate, second_step, true_lifetime_series


@dataclass
class CreedyModel:
    """Per-group age profiles of the mean and SD of log income.

    ``mu`` and ``sigma`` are DataFrames indexed by age with one column per group.
    """

    mu: pd.DataFrame
    sigma: pd.DataFrame
    grouping: str
    mode: str

    def __post_init__(self):
        if not (self.sigma.to_numpy()[np.isfinite(self.sigma.to_numpy())] > 0).all():
            raise EstimationError("nonpositive predicted SD")

    def standardize(self, y, age, group):
        return (y - self.mu.loc[age, group].to_numpy()) / self.sigma.loc[age, group].to_numpy()


def _lookup(table: pd.DataFrame, ages, groups) -> np.ndarray:
    r = table.index.get_indexer(ages)
    c = table.columns.get_indexer(groups)
    if (r < 0).any() or (c < 0).any():
        raise EstimationError("age or group outside the fitted model")
    return table.to_numpy()[r, c]


def creedy_fit(panel: Panel, grouping: str = "educ_group", mode: str = "parametric", ages=None) -> CreedyModel:
    """Model the mean and SD of log income over age within each group.

    Parameters
    ----------
    grouping : str
        Person column defining groups (education by default).
    mode : {"parametric", "nonparametric"}
        ``parametric``: mean from a quadratic-in-age OLS on individual log
        incomes, variance from a linear-in-age OLS on the per-age variances.
        ``nonparametric``: the per-age sample means and SDs.
    ages : array-like, optional
        Ages at which to tabulate the model (default: panel bounds).
    """
    if mode not in ("parametric", "nonparametric"):
        raise ValueError("mode must be parametric or nonparametric")
    ages = np.arange(panel.age_min, panel.age_max + 1) if ages is None else np.asarray(ages)
    frame = panel.frame([grouping])
    frame["y"] = panel.log_income()
    mu, sd = {}, {}
    for g, sub in frame.groupby(grouping):
        stats = sub.groupby("age")["y"].agg(["mean", "var", "count"])
        stats = stats[stats["count"] >= 2]
        if len(stats) < 3:
            raise EstimationError(f"group {g} has fewer than 3 ages with 2+ observations")
        if mode == "nonparametric":
            m = stats["mean"].reindex(ages).to_numpy()
            s = np.sqrt(stats["var"].reindex(ages).to_numpy())
        else:
            a = sub["age"].to_numpy(dtype=float)
            X = np.column_stack([np.ones_like(a), a, a * a])
            coef = np.linalg.lstsq(X, sub["y"].to_numpy(), rcond=None)[0]
            m = coef[0] + coef[1] * ages + coef[2] * ages**2
            sa = stats.index.to_numpy(dtype=float)
            vcoef = np.linalg.lstsq(np.column_stack([np.ones_like(sa), sa]), stats["var"].to_numpy(), rcond=None)[0]
            v = vcoef[0] + vcoef[1] * ages
            if (v <= 0).any():
                raise EstimationError(f"predicted variance nonpositive in group {g}; use nonparametric mode")
            s = np.sqrt(v)
        mu[g] = m
        sd[g] = s
    return CreedyModel(pd.DataFrame(mu, index=ages), pd.DataFrame(sd, index=ages), grouping, mode)


def creedy_lifetime(panel: Panel, model: CreedyModel, observed_age: int, target_ages) -> pd.Series:
    """Rebuilt log lifetime income for persons observed at ``observed_age``."""
    target_ages = np.asarray(target_ages)
    age = panel.incomes["age"].to_numpy()
    rows = np.flatnonzero(age == observed_age)
    if not len(rows):
        raise EstimationError(f"no observations at age {observed_age}")
    codes = panel.obs_codes[rows]
    groups = panel.persons[model.grouping].to_numpy()[codes]
    y = panel.log_income()[rows]
    z = (y - _lookup(model.mu, np.full(len(y), observed_age), groups)) / _lookup(
        model.sigma, np.full(len(y), observed_age), groups
    )
    mu_t = model.mu.loc[target_ages].to_numpy()  # (T, G)
    sd_t = model.sigma.loc[target_ages].to_numpy()
    gi = model.mu.columns.get_indexer(groups)
    rebuilt = mu_t[:, gi].T + sd_t[:, gi].T * z[:, None]
    peak = rebuilt.max(axis=1, keepdims=True)
    life = peak[:, 0] + np.log(np.exp(rebuilt - peak).sum(axis=1))
    return pd.Series(life, index=panel.person_index[codes])


def creedy_estimate(panel: Panel, model: CreedyModel, observed_age: int, target_ages=None) -> IgeEstimate:
    """IGE from lifetime incomes rebuilt from one observation per person."""
    if target_ages is None:
        target_ages = np.arange(panel.age_min, panel.age_max + 1)
    life = creedy_lifetime(panel, model, observed_age, target_ages)
    persons = panel.persons.set_index("person_id").loc[life.index]
    truth = true_lifetime_series(panel).reindex(life.index).to_numpy()
    est = second_step(life.to_numpy(), persons["parent_log_income"].to_numpy(), truth=truth)
    est.extra.update({"estimator": "Creedy", "observed_age": observed_age, "mode": model.mode})
    return est

"""Errors-in-variables diagnostics: projection of annual on lifetime income."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from ..panel import Panel
from ._base import EstimationError, true_lifetime_series


@dataclass
class GeivResult:
    """Per-age diagnostics aligned on ``ages``.

    Attributes
    ----------
    lam, lam_se : ndarray
        Slope of annual log income on log lifetime income, with robust SE.
    beta, beta_se : ndarray
        Slope of annual log income on parental log income.
    benchmark : float
        Slope of lifetime on parental income over the same persons.
    ratio, ratio_gap_se : ndarray
        ``beta / lam`` and the robust (delta-method) SE of ``ratio - benchmark``.
    t_star : float or None
        Age where ``lam`` first reaches 1 (linear interpolation), None if never.
    """

    ages: np.ndarray
    lam: np.ndarray
    lam_se: np.ndarray
    beta: np.ndarray
    beta_se: np.ndarray
    n: np.ndarray
    benchmark: float
    ratio: np.ndarray
    ratio_gap_se: np.ndarray
    t_star: float | None

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "age": self.ages,
                "lambda": self.lam,
                "lambda_se": self.lam_se,
                "beta": self.beta,
                "beta_se": self.beta_se,
                "beta_over_lambda": self.ratio,
                "gap_se": self.ratio_gap_se,
                "n": self.n,
            }
        )


def _slope_if(x, y):
    """Slope and its influence contributions (sum of squares = HC0 variance)."""
    xc = x - x.mean()
    sxx = xc @ xc
    b = (xc @ (y - y.mean())) / sxx
    e = y - y.mean() - b * xc
    return b, xc * e / sxx


def crossing_age(ages, lam, level: float = 1.0, tol: float = 1e-9):
    """First age where ``lam`` reaches ``level``, linearly interpolated.

    Values within ``tol`` of ``level`` count as reaching it, so an exact
    crossing is not lost to rounding.
    """
    ages = np.asarray(ages, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if lam[0] >= level - tol:
        return float(ages[0])
    for i in range(1, len(lam)):
        if lam[i] >= level - tol:
            if lam[i] <= level:
                return float(ages[i])
            w = (level - lam[i - 1]) / (lam[i] - lam[i - 1])
            return float(ages[i - 1] + w * (ages[i] - ages[i - 1]))
    return None


def geiv_diagnostics(panel: Panel, ages=None) -> GeivResult:
    """Per-age projection slopes on lifetime and parental income.

    Lifetime income is the stored truth, or the log sum over the full observed
    profile. Persons without an observation at an age are skipped at that age.
    """
    ages = np.arange(panel.age_min, panel.age_max + 1) if ages is None else np.asarray(ages)
    if len(ages) < 2:
        raise EstimationError("need at least two ages")
    life_s = true_lifetime_series(panel)
    life_all = life_s.to_numpy()
    p_all = panel.persons["parent_log_income"].to_numpy()
    y = panel.log_income()
    age_obs = panel.incomes["age"].to_numpy()
    codes = panel.obs_codes
    bench, psi_b = _slope_if(p_all, life_all)
    out = {k: [] for k in ("lam", "lam_se", "beta", "beta_se", "n", "ratio", "gap_se")}
    for a in ages:
        rows = age_obs == a
        c = codes[rows]
        if len(c) < 3:
            raise EstimationError(f"fewer than 3 observations at age {a}")
        yt = y[rows]
        lam, psi_l = _slope_if(life_all[c], yt)
        beta, psi_be = _slope_if(p_all[c], yt)
        # influence of the gap beta/lam - benchmark; benchmark uses all persons
        psi_gap = np.zeros(len(p_all))
        np.add.at(psi_gap, c, psi_be / lam - beta * psi_l / lam**2)
        psi_gap -= psi_b
        out["lam"].append(lam)
        out["lam_se"].append(np.sqrt(psi_l @ psi_l))
        out["beta"].append(beta)
        out["beta_se"].append(np.sqrt(psi_be @ psi_be))
        out["n"].append(len(c))
        out["ratio"].append(beta / lam)
        out["gap_se"].append(np.sqrt(psi_gap @ psi_gap))
    arr = {k: np.asarray(v) for k, v in out.items()}
    return GeivResult(
        ages=ages,
        lam=arr["lam"],
        lam_se=arr["lam_se"],
        beta=arr["beta"],
        beta_se=arr["beta_se"],
        n=arr["n"],
        benchmark=float(bench),
        ratio=arr["ratio"],
        ratio_gap_se=arr["gap_se"],
        t_star=crossing_age(ages, arr["lam"]),
    )

"""Synthetic two-generation panels from a heterogeneous income profile model.

Child log income at experience ``h = age - age_min`` is

    y = g(theta, h) + e(educ, h) + alpha + beta * h
        + p * (L0 + L1 * h + L2 * h**2) + z_h + phi * eps

where ``p`` is the centred parental log lifetime income, ``z`` is an AR(1)
process starting at zero, ``e`` holds per-education offsets and the ``L``
terms are the intergenerational loadings. Parental income is lognormal and
education probabilities depend on the parental-income quartile.

Draws are made in fixed blocks of persons, each block owning a named
substream of the run seed, so a panel is bit-identical however it is produced.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy.stats import norm

from .panel import AgeWindow, Panel
from .rng import block_slices, substream

N_EDUC = 4


@dataclass(frozen=True)
class HipParams:
    """Income-process parameters (log-income units).

    Parameters
    ----------
    theta : tuple of float
        Cubic in experience ``(c0, c1, c2, c3)`` shared by everyone.
    sigma2_alpha, sigma2_beta, sigma_alpha_beta : float
        Covariance of the individual intercept and growth rate.
    rho : float
        AR(1) persistence of ``z``.
    pi, phi : float or mapping of year to float
        Per-calendar-year scales of the persistent and transitory shocks.
    sigma2_eta, sigma2_eps : float
        Base innovation variances.
    """

    theta: tuple = (12.0, 0.08, -0.002, 0.0)
    sigma2_alpha: float = 0.04
    sigma2_beta: float = 0.0003
    sigma_alpha_beta: float = -0.002
    rho: float = 0.9
    pi: float | Mapping[int, float] = 1.0
    phi: float | Mapping[int, float] = 1.0
    sigma2_eta: float = 0.03
    sigma2_eps: float = 0.04

    def __post_init__(self):
        for name in ("sigma2_alpha", "sigma2_beta", "sigma2_eta", "sigma2_eps"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not abs(self.rho) < 1:
            raise ValueError("|rho| must be below 1")
        cov = self.het_cov
        eig = np.linalg.eigvalsh(cov)
        if eig.min() < -1e-12 * max(1.0, abs(eig).max()):
            raise ValueError(
                f"heterogeneity covariance {cov.tolist()} is not positive semidefinite "
                f"(smallest eigenvalue {eig.min():.3g}); |sigma_alpha_beta| must not exceed "
                f"{np.sqrt(self.sigma2_alpha * self.sigma2_beta):.3g}"
            )

    @property
    def het_cov(self) -> np.ndarray:
        return np.array(
            [[self.sigma2_alpha, self.sigma_alpha_beta], [self.sigma_alpha_beta, self.sigma2_beta]]
        )


DEFAULT_EDUC_PROBS = (
    (0.35, 0.35, 0.20, 0.10),
    (0.25, 0.35, 0.25, 0.15),
    (0.15, 0.30, 0.30, 0.25),
    (0.08, 0.22, 0.30, 0.40),
)
# (level, slope, quadratic) offsets in experience; group 3 starts low and grows fast
DEFAULT_EDUC_PROFILES = (
    (0.0, 0.0, 0.0),
    (0.05, 0.004, 0.0),
    (0.05, 0.012, -0.0001),
    (-0.3, 0.05, -0.0008),
)


@dataclass(frozen=True)
class FamilyLink:
    """How parental income shapes the child's profile.

    Parameters
    ----------
    parent_mean, parent_var : float
        Normal distribution of parental log lifetime income.
    load_intercept, load_growth_linear, load_growth_quad : float
        Loadings ``L0, L1, L2`` of centred parental log income on the child's
        level, linear growth and quadratic growth.
    educ_probs_by_parent : 4x4 nested tuple
        Row ``q`` gives education probabilities for parental-income quartile ``q``.
    educ_profiles : 4x3 nested tuple
        Per-education ``(level, slope, quadratic)`` offsets in experience.
    growth_load_by_cohort : tuple of (first_cohort, last_cohort, multiplier)
        Multiplies ``L1`` and ``L2`` for children born in the given range.
    load_father_growth : float
        Loading of the father's own growth rate on the child's early growth,
        ``load * beta_f * H * (1 - exp(-h / H))`` with ``H = father_growth_horizon``.
    parent_from_child : float, optional
        When set, parental income is generated from the child's lifetime income
        with this correlation instead of the forward link (all ``L`` loadings
        and the quartile-education link are then inactive). Parental income
        then depends on the child only through lifetime income.
    """

    parent_mean: float = 12.3
    parent_var: float = 0.2
    load_intercept: float = 0.028
    load_growth_linear: float = 0.015
    load_growth_quad: float = -0.0003
    educ_probs_by_parent: tuple = DEFAULT_EDUC_PROBS
    educ_profiles: tuple = DEFAULT_EDUC_PROFILES
    growth_load_by_cohort: tuple = ()
    load_father_growth: float = 0.0
    father_growth_horizon: float = 5.0
    parent_from_child: float | None = None

    def __post_init__(self):
        probs = np.asarray(self.educ_probs_by_parent, dtype=float)
        if probs.shape != (4, N_EDUC):
            raise ValueError("educ_probs_by_parent must be 4 quartiles x 4 groups")
        if (probs < 0).any() or np.abs(probs.sum(axis=1) - 1).max() > 1e-12:
            raise ValueError("each row of educ_probs_by_parent must sum to 1")
        if np.asarray(self.educ_profiles, dtype=float).shape != (N_EDUC, 3):
            raise ValueError("educ_profiles must be 4 groups x (level, slope, quad)")
        if self.parent_var < 0:
            raise ValueError("parent_var must be non-negative")
        if self.parent_from_child is not None and not -1 <= self.parent_from_child <= 1:
            raise ValueError("parent_from_child is a correlation")


@dataclass(frozen=True)
class SimConfig:
    """Simulation size, bounds and seed plus the process parameters."""

    n_persons: int = 20_000
    cohorts: tuple = (1950, 1959)
    age_min: int = 25
    age_max: int = 58
    seed: int = 0
    hip: HipParams = field(default_factory=HipParams)
    link: FamilyLink = field(default_factory=FamilyLink)
    extras: bool = True

    def __post_init__(self):
        if self.n_persons <= 0:
            raise ValueError("n_persons must be positive")
        if not self.age_min < self.age_max:
            raise ValueError("age_min must be below age_max")
        if self.cohorts[0] > self.cohorts[1]:
            raise ValueError("cohort range reversed")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    @property
    def n_ages(self) -> int:
        return self.age_max - self.age_min + 1

    def with_updates(self, **changes) -> "SimConfig":
        """Return a copy; ``hip`` and ``link`` accept dicts of field updates."""
        if isinstance(changes.get("hip"), Mapping):
            changes["hip"] = replace(self.hip, **changes["hip"])
        if isinstance(changes.get("link"), Mapping):
            changes["link"] = replace(self.link, **changes["link"])
        return replace(self, **changes)


# Named parameter sets. "creedy" pairs a steadily rising profile with a
# mid-career peak in the parental growth gradient and stable dispersion;
# "trends" spans four birth decades with a doubled parental growth loading for
# the last one; "exogenous-parent" draws parental income from the child's
# lifetime income so it is uncorrelated with every annual deviation.
SCENARIOS = {
    "default": {},
    "creedy": {
        "hip": {"theta": (12.0, 0.03, 0.0, 0.0), "sigma2_alpha": 0.05, "sigma2_beta": 0.0,
                "sigma_alpha_beta": 0.0, "rho": 0.8, "sigma2_eta": 0.02},
        "link": {"load_intercept": 0.0, "load_growth_linear": 0.03, "load_growth_quad": -0.001},
    },
    "trends": {"cohorts": (1950, 1989), "link": {"growth_load_by_cohort": ((1980, 1989, 2.0),)}},
    "exogenous-parent": {"link": {"parent_from_child": 0.5}},
}


def scenario_config(name: str = "default", **overrides) -> SimConfig:
    """``SimConfig`` for a named scenario; keyword overrides are applied last.

    ``hip`` and ``link`` overrides are dicts merged into the scenario's own.
    """
    if name not in SCENARIOS:
        raise ValueError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}")
    base = dict(SCENARIOS[name])
    for key in ("hip", "link"):
        if key in overrides:
            base[key] = {**base.get(key, {}), **overrides.pop(key)}
    base.update(overrides)
    return SimConfig().with_updates(**base)


def _year_scale(value, years: np.ndarray) -> np.ndarray:
    if isinstance(value, Mapping):
        table = {int(k): float(v) for k, v in value.items()}
        default = table.get("default", 1.0) if "default" in value else 1.0
        return np.vectorize(lambda y: table.get(int(y), default), otypes=[float])(years)
    return np.full(years.shape, float(value))


def _cohort_multiplier(link: FamilyLink, cohort: np.ndarray) -> np.ndarray:
    mult = np.ones(cohort.shape)
    for lo, hi, m in link.growth_load_by_cohort:
        mult[(cohort >= lo) & (cohort <= hi)] = m
    return mult


def _het_draws(rng, cov, n):
    # symmetric square root handles singular (rank-one) covariances
    w, v = np.linalg.eigh(cov)
    root = v * np.sqrt(np.clip(w, 0.0, None))
    return rng.standard_normal((n, 2)) @ root.T


def _ar1(rng, n, hh, rho, scale, sigma_eta):
    T = len(hh)
    eta = rng.standard_normal((n, T)) * sigma_eta
    z = np.zeros((n, T))
    for t in range(1, T):
        z[:, t] = rho * z[:, t - 1] + scale[:, t] * eta[:, t]
    return z


def _quartile(p, mean, var):
    sd = np.sqrt(var)
    cuts = mean + sd * norm.ppf([0.25, 0.5, 0.75]) if sd > 0 else np.full(3, mean)
    return np.searchsorted(cuts, p, side="right")


def _draw_educ(rng, quart, probs):
    cdf = np.cumsum(np.asarray(probs, dtype=float), axis=1)
    u = rng.random(len(quart))
    return np.minimum((u[:, None] > cdf[quart]).sum(axis=1), N_EDUC - 1)


def _simulate_block(cfg: SimConfig, b: int, sl: slice):
    hip, link = cfg.hip, cfg.link
    n = sl.stop - sl.start
    hh = np.arange(cfg.n_ages, dtype=float)
    rng = substream(cfg.seed, "simulation", b)
    prng = substream(cfg.seed, "parents", b)

    cohort = rng.integers(cfg.cohorts[0], cfg.cohorts[1] + 1, size=n)
    sd_p = np.sqrt(link.parent_var)
    p_raw = link.parent_mean + sd_p * rng.standard_normal(n)
    reverse = link.parent_from_child is not None
    quart = _quartile(p_raw, link.parent_mean, link.parent_var)
    if reverse:
        # child education cannot depend on a parent that is generated afterwards
        quart_child = rng.integers(0, 4, size=n)
    else:
        quart_child = quart
    educ = _draw_educ(rng, quart_child, link.educ_probs_by_parent)
    parent_educ = _draw_educ(rng, quart, link.educ_probs_by_parent)
    het = _het_draws(rng, hip.het_cov, n)
    years = cohort[:, None] + cfg.age_min + hh[None, :].astype(int)
    pi_s = _year_scale(hip.pi, years)
    phi_s = _year_scale(hip.phi, years)
    z = _ar1(rng, n, hh, hip.rho, pi_s, np.sqrt(hip.sigma2_eta))
    eps = rng.standard_normal((n, cfg.n_ages)) * np.sqrt(hip.sigma2_eps)

    # father heterogeneity comes from its own stream so children do not depend
    # on whether fathers are requested
    father_het = _het_draws(prng, hip.het_cov, n)

    c = hip.theta
    base = c[0] + c[1] * hh + c[2] * hh**2 + (c[3] if len(c) > 3 else 0.0) * hh**3
    prof = np.asarray(link.educ_profiles, dtype=float)[educ]
    y = (
        base[None, :]
        + prof[:, [0]] + prof[:, [1]] * hh + prof[:, [2]] * hh**2
        + het[:, [0]] + het[:, [1]] * hh
        + z + phi_s * eps
    )
    if not reverse:
        pc = (p_raw - link.parent_mean)[:, None]
        mult = _cohort_multiplier(link, cohort)[:, None]
        y += pc * (link.load_intercept + mult * (link.load_growth_linear * hh + link.load_growth_quad * hh**2))
    if link.load_father_growth:
        H = link.father_growth_horizon
        y += link.load_father_growth * father_het[:, [1]] * H * (1 - np.exp(-hh / H))[None, :]

    extras = _draw_extras(rng, n, educ) if cfg.extras else {}
    return dict(
        cohort=cohort, p=p_raw, educ=educ, parent_educ=parent_educ, y=y,
        father_het=father_het, extras=extras,
    )


def _draw_extras(rng, n, educ):
    """Background covariates used by the penalized first step.

    They carry at most a weak link to education and no direct effect on income.
    """
    out = {}
    out["mother_educ_group"] = np.clip(educ + rng.integers(-1, 2, size=n), 0, N_EDUC - 1)
    out["family_size"] = np.clip(rng.poisson(1.5, size=n) + 2, 2, 8)
    out["birth_order"] = np.minimum(rng.integers(1, 6, size=n), out["family_size"] - 1)
    out["immigrant"] = (rng.random(n) < 0.1).astype(np.int64)
    out["cog_score"] = np.clip(np.rint(5 + 0.5 * (educ - 1.5) + 1.8 * rng.standard_normal(n)), 1, 9).astype(np.int64)
    out["noncog_score"] = np.clip(np.rint(5 + 2.0 * rng.standard_normal(n)), 1, 9).astype(np.int64)
    out["region"] = rng.integers(0, 8, size=n)
    out["parent_age_band"] = rng.integers(0, 5, size=n)
    return out


def _reverse_parent(cfg: SimConfig, child_lifetime: np.ndarray) -> np.ndarray:
    link = cfg.link
    r = link.parent_from_child
    rng = substream(cfg.seed, "parents-reverse")
    z = (child_lifetime - child_lifetime.mean()) / child_lifetime.std()
    noise = rng.standard_normal(len(z))
    return link.parent_mean + np.sqrt(link.parent_var) * (r * z + np.sqrt(1 - r * r) * noise)


def _generate(cfg: SimConfig):
    blocks = [_simulate_block(cfg, b, sl) for b, sl in block_slices(cfg.n_persons)]
    cat = {k: np.concatenate([blk[k] for blk in blocks]) for k in blocks[0] if k != "extras"}
    if cfg.extras:
        cat["extras"] = {k: np.concatenate([blk["extras"][k] for blk in blocks]) for k in blocks[0]["extras"]}
    else:
        cat["extras"] = {}
    return cat


def _lifetime_from_logs(y: np.ndarray) -> np.ndarray:
    peak = y.max(axis=1, keepdims=True)
    return peak[:, 0] + np.log(np.exp(y - peak).sum(axis=1))


def simulate_families(config: SimConfig, with_fathers: bool = True) -> tuple[Panel, Panel | None]:
    """Simulate children and, optionally, their fathers.

    Returns
    -------
    (children, fathers)
        ``fathers`` is None when ``with_fathers`` is false. Father ``person_id``
        equals the child's ``family_id``. Each father's profile is a HIP draw
        shifted so its log lifetime income equals the child's
        ``parent_log_income`` exactly.
    """
    cfg = config
    d = _generate(cfg)
    n, T = d["y"].shape
    ages = np.arange(cfg.age_min, cfg.age_max + 1)
    y = d["y"]
    life = _lifetime_from_logs(y)
    p = d["p"]
    if cfg.link.parent_from_child is not None:
        p = _reverse_parent(cfg, life)
    pid = np.arange(n, dtype=np.int64)
    persons = pd.DataFrame(
        {
            "person_id": pid,
            "family_id": pid + 1_000_000_000,
            "cohort": d["cohort"].astype(np.int64),
            "sex": np.ones(n, dtype=np.int64),
            "educ_group": d["educ"].astype(np.int64),
            "parent_educ_group": d["parent_educ"].astype(np.int64),
            "parent_log_income": p,
            "true_log_lifetime": life,
        }
    )
    for k, v in d["extras"].items():
        persons[k] = v.astype(np.int64)
    incomes = pd.DataFrame(
        {
            "person_id": np.repeat(pid, T),
            "year": (d["cohort"][:, None] + ages[None, :]).ravel().astype(np.int64),
            "age": np.tile(ages, n).astype(np.int64),
            "income_level": np.exp(y).ravel(),
        }
    )
    prov = (("simulate", {"seed": cfg.seed, "n_persons": cfg.n_persons}),)
    children = Panel(persons, incomes, cfg.age_min, cfg.age_max, N_EDUC, prov)
    fathers = _simulate_fathers(cfg, d, p, ages) if with_fathers else None
    return children, fathers


def _simulate_fathers(cfg: SimConfig, d, p, ages):
    hip = cfg.hip
    n = len(p)
    hh = np.arange(cfg.n_ages, dtype=float)
    parts = []
    for b, sl in block_slices(n):
        rng = substream(cfg.seed, "parents-shocks", b)
        m = sl.stop - sl.start
        cohort = d["cohort"][sl] - 30
        years = cohort[:, None] + cfg.age_min + hh[None, :].astype(int)
        z = _ar1(rng, m, hh, hip.rho, _year_scale(hip.pi, years), np.sqrt(hip.sigma2_eta))
        eps = rng.standard_normal((m, cfg.n_ages)) * np.sqrt(hip.sigma2_eps)
        het = d["father_het"][sl]
        prof = np.asarray(cfg.link.educ_profiles, dtype=float)[d["parent_educ"][sl]]
        c = hip.theta
        base = c[0] + c[1] * hh + c[2] * hh**2 + (c[3] if len(c) > 3 else 0.0) * hh**3
        y = (
            base[None, :] + prof[:, [0]] + prof[:, [1]] * hh + prof[:, [2]] * hh**2
            + het[:, [0]] + het[:, [1]] * hh + z + _year_scale(hip.phi, years) * eps
        )
        y += (p[sl] - _lifetime_from_logs(y))[:, None]
        parts.append(y)
    y = np.vstack(parts)
    fid = np.arange(n, dtype=np.int64) + 1_000_000_000
    cohort = d["cohort"] - 30
    persons = pd.DataFrame(
        {
            "person_id": fid,
            "family_id": fid,
            "cohort": cohort.astype(np.int64),
            "sex": np.ones(n, dtype=np.int64),
            "educ_group": d["parent_educ"].astype(np.int64),
            "parent_educ_group": np.zeros(n, dtype=np.int64),
            "parent_log_income": np.full(n, np.nan),
            "true_log_lifetime": p,
            "growth_rate": d["father_het"][:, 1],
        }
    )
    incomes = pd.DataFrame(
        {
            "person_id": np.repeat(fid, len(ages)),
            "year": (cohort[:, None] + ages[None, :]).ravel().astype(np.int64),
            "age": np.tile(ages, n).astype(np.int64),
            "income_level": np.exp(y).ravel(),
        }
    )
    prov = (("simulate_fathers", {"seed": cfg.seed}),)
    return Panel(persons, incomes, cfg.age_min, cfg.age_max, N_EDUC, prov)


def simulate_panel(config: SimConfig) -> Panel:
    """Simulate the children panel (one observation per person and age)."""
    return simulate_families(config, with_fathers=False)[0]


def true_lifetime(levels: Sequence[float]) -> float:
    """Log of the sum of annual level incomes.

    Raises
    ------
    ValueError
        On an empty sequence or a nonpositive income.
    """
    arr = np.asarray(levels, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("no income observations")
    if (arr <= 0).any():
        raise ValueError("nonpositive level income")
    return float(np.log(arr.sum()))


def lifetime_from_panel(panel: Panel) -> pd.Series:
    """Log lifetime income per person from the observations present in ``panel``."""
    level = panel.incomes["income_level"].to_numpy()
    if (level <= 0).any():
        raise ValueError("nonpositive level income")
    sums = np.bincount(panel.obs_codes, weights=level, minlength=panel.n_persons)
    with np.errstate(divide="ignore"):
        out = np.log(sums)
    out[sums == 0] = np.nan
    return pd.Series(out, index=panel.person_index)


# ---------------------------------------------------------- growth tables


@dataclass
class GrowthTable:
    """Coefficient rows plus bins that had to be omitted."""

    rows: pd.DataFrame
    omitted: list = field(default_factory=list)


def _above_floor(frame: pd.DataFrame, share: float) -> np.ndarray:
    med = frame.groupby("year")["income_level"].transform("median").to_numpy()
    return frame["income_level"].to_numpy() >= share * med


def growth_gradient_table(
    panel: Panel,
    age_breaks: Sequence[int] = (25, 30, 35, 40, 45, 50, 55),
    controls: Sequence[str] = ("educ_group",),
    floor_share: float = 0.2,
    parent_scale: float = 100.0,
) -> GrowthTable:
    """Gradient of five-year log income growth in parental income by age bin.

    For each bin ``[a, a + 5)`` ending at age ``t`` (growth from ``t - 5`` to
    ``t``, with ``t`` the bin's upper break) the coefficient on
    ``parent_log_income / parent_scale`` interacted with the bin is reported,
    from one pooled OLS of the five-year change on bin dummies, the
    interactions and each control-by-bin interaction. Incomes below
    ``floor_share`` of the yearly median (at either end) are excluded.
    """
    from .regression import fit as _fit

    frame = panel.frame()
    frame = frame[_above_floor(frame, floor_share)]
    y = np.log(frame["income_level"].to_numpy())
    frame = frame.assign(log_income=y)
    wide = frame.pivot(index="person_id", columns="age", values="log_income")
    persons = panel.persons.set_index("person_id")
    omitted = []
    bins = list(zip(age_breaks[:-1], age_breaks[1:]))
    usable = []
    for lo, hi in bins:
        if lo not in wide.columns or hi not in wide.columns:
            omitted.append(f"{lo}-{hi}")
            continue
        d = (wide[hi] - wide[lo]).dropna()
        if d.empty:
            omitted.append(f"{lo}-{hi}")
            continue
        usable.append((lo, hi, d))
    if not usable:
        return GrowthTable(pd.DataFrame(columns=["bin", "coef", "se", "n"]), omitted)
    n_tot = sum(len(d) for *_, d in usable)
    cols = {}
    yvec = np.concatenate([d.to_numpy() for *_, d in usable])
    offset = 0
    for i, (lo, hi, d) in enumerate(usable):
        m = len(d)
        sl = slice(offset, offset + m)
        tag = f"{lo}-{hi}"
        cols.setdefault(f"bin[{tag}]", np.zeros(n_tot))[sl] = 1.0
        p = persons.loc[d.index, "parent_log_income"].to_numpy() / parent_scale
        cols.setdefault(f"parent_x_bin[{tag}]", np.zeros(n_tot))[sl] = p
        for c in controls:
            v = persons.loc[d.index, c].to_numpy()
            for lv in np.unique(persons[c].to_numpy())[1:]:
                cols.setdefault(f"{c}={lv}_x_bin[{tag}]", np.zeros(n_tot))[sl] = (v == lv).astype(float)
        offset += m
    names = list(cols)
    X = np.column_stack([cols[k] for k in names])
    res = _fit(X, yvec, robust=True, names=names)
    out = []
    for lo, hi, d in usable:
        k = f"parent_x_bin[{lo}-{hi}]"
        out.append({"bin": f"{lo}-{hi}", "coef": res.coefficients[k], "se": res.se[k], "n": len(d)})
    return GrowthTable(pd.DataFrame(out), omitted)


def growth_on_growth_table(
    children: Panel,
    fathers: Panel,
    windows: Sequence[AgeWindow] = (AgeWindow(25, 30), AgeWindow(30, 35), AgeWindow(35, 40)),
    controls: bool = False,
) -> GrowthTable:
    """Regress the child's log income change over each window on the father's.

    Parameters
    ----------
    controls : bool
        Also control for father log lifetime income and education dummies.
    """
    from .regression import fit as _fit

    link = children.persons.set_index("person_id")["family_id"]
    cw = children.frame().pivot(index="person_id", columns="age", values="income_level")
    fw = fathers.frame().pivot(index="person_id", columns="age", values="income_level")
    fper = fathers.persons.set_index("person_id")
    rows, omitted = [], []
    for w in windows:
        if not {w.lo, w.hi} <= set(cw.columns) or not {w.lo, w.hi} <= set(fw.columns):
            omitted.append(str(w))
            continue
        dc = np.log(cw[w.hi]) - np.log(cw[w.lo])
        fam = link.loc[dc.index].to_numpy()
        ok = np.isin(fam, fw.index)
        dc = dc[ok]
        fam = fam[ok]
        df_ = (np.log(fw[w.hi]) - np.log(fw[w.lo])).reindex(fam).to_numpy()
        good = np.isfinite(dc.to_numpy()) & np.isfinite(df_)
        if not good.any():
            omitted.append(str(w))
            continue
        cols = [np.ones(good.sum()), df_[good]]
        names = ["Intercept", "father_growth"]
        if controls:
            cols.append(fper.loc[fam[good], "true_log_lifetime"].to_numpy())
            names.append("father_log_lifetime")
            e = fper.loc[fam[good], "educ_group"].to_numpy()
            for lv in np.unique(e)[1:]:
                cols.append((e == lv).astype(float))
                names.append(f"father_educ={lv}")
        res = _fit(np.column_stack(cols), dc.to_numpy()[good], robust=True, names=names)
        rows.append(
            {"window": str(w), "coef": res.coefficients["father_growth"], "se": res.se["father_growth"], "n": int(good.sum())}
        )
    return GrowthTable(pd.DataFrame(rows), omitted)


def config_to_dict(config: SimConfig) -> dict:
    return asdict(config)

"""Lasso and elastic-net first steps via covariance-update coordinate descent.

Everything works on sufficient statistics (``X'X``, ``X'y``, ``y'y``, ``n``)
of a design that has already been residualized against person fixed effects.
That keeps cross-validation cheap (a training Gram is the total minus the
held-out fold's) and lets large candidate designs be accumulated in chunks.

The objective, on standardized columns, is

    0.5 * ||y - X b||^2 / n + lam * (alpha * |b_P|_1 + (1 - alpha) / 2 * |b_P|_2^2)

where ``P`` are the penalized columns. Coefficients are reported on the
original column scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import pandas as pd

from . import kernels
from .regression import CollinearityError, FitResult, fit
from .rng import substream

SWEEPS_PER_CHECK = 50


class ConvergenceError(RuntimeError):
    """Coordinate descent hit ``max_iter``; carries the last iterate and objective trace."""

    def __init__(self, message, beta, trace):
        super().__init__(message)
        self.beta = beta
        self.trace = trace


@dataclass(frozen=True)
class PenaltyConfig:
    """Penalty settings.

    Parameters
    ----------
    lam : float
        Penalty weight. With ``relative=True`` it is a fraction of the null
        threshold ``lambda_max`` of the data being fitted.
    alpha : float
        Elastic-net mixing; 1 is the lasso, 0 is ridge.
    unpenalized : frozenset of str
        Column names exempt from the penalty.
    standardize : bool
        Penalize unit-variance columns (coefficients are reported unscaled).
    max_iter : int
        Maximum coordinate-descent sweeps.
    tol : float
        Convergence threshold on the largest coefficient change (standardized scale).
    relative : bool
    """

    lam: float = 0.0
    alpha: float = 1.0
    unpenalized: frozenset = frozenset()
    standardize: bool = True
    max_iter: int = 100_000
    tol: float = 1e-12
    relative: bool = False

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError("lam must be non-negative")
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must lie in [0, 1]")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        object.__setattr__(self, "unpenalized", frozenset(self.unpenalized))

    def with_(self, **changes) -> "PenaltyConfig":
        return replace(self, **changes)


@dataclass
class SuffStats:
    """Cross products of a (residualized) design and response."""

    gram: np.ndarray
    xty: np.ndarray
    yty: float
    n: int
    names: list

    @classmethod
    def from_arrays(cls, X, y, names=None) -> "SuffStats":
        if isinstance(X, pd.DataFrame):
            names = list(X.columns) if names is None else names
            X = X.to_numpy(dtype=np.float64)
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        names = [f"x{j}" for j in range(X.shape[1])] if names is None else list(names)
        return cls(X.T @ X, X.T @ y, float(y @ y), len(y), names)

    @classmethod
    def zeros(cls, names) -> "SuffStats":
        k = len(names)
        return cls(np.zeros((k, k)), np.zeros(k), 0.0, 0, list(names))

    def add(self, X: np.ndarray, y: np.ndarray) -> None:
        self.gram += X.T @ X
        self.xty += X.T @ y
        self.yty += float(y @ y)
        self.n += len(y)

    def __sub__(self, other: "SuffStats") -> "SuffStats":
        return SuffStats(self.gram - other.gram, self.xty - other.xty, self.yty - other.yty,
                         self.n - other.n, self.names)

    @property
    def k(self) -> int:
        return len(self.names)


@dataclass
class PenalizedFit:
    """Result of ``cd_fit``.

    Attributes
    ----------
    coefficients : pandas.Series
        Original-scale coefficients by column name.
    selected : list of str
        Penalized columns with nonzero coefficients.
    lam, alpha : float
        Absolute penalty weight used and the mixing parameter.
    n_selected : int
    objective : float
        Objective value on the standardized scale.
    n_iter : int
    kkt_max : float
        Largest violation of the optimality conditions.
    """

    coefficients: pd.Series
    selected: list
    lam: float
    alpha: float
    n_selected: int
    objective: float
    n_iter: int
    kkt_max: float
    config: PenaltyConfig
    lambda_max: float = np.nan
    extra: dict = field(default_factory=dict)


# ------------------------------------------------------------ internals


class _Problem:
    """Standardized view of a ``SuffStats`` under a penalty configuration."""

    def __init__(self, stats: SuffStats, config: PenaltyConfig):
        if stats.n <= 0:
            raise ValueError("no observations")
        n = stats.n
        diag = np.diag(stats.gram) / n
        live = diag > 1e-14 * max(1.0, diag.max(initial=0.0))
        scale = np.where(live & config.standardize, np.sqrt(np.where(live, diag, 1.0)), 1.0)
        self.stats = stats
        self.scale = scale
        self.live = live
        self.G = stats.gram / n / np.outer(scale, scale)
        self.G[~live, :] = 0.0
        self.G[:, ~live] = 0.0
        self.c = np.where(live, stats.xty / n / scale, 0.0)
        self.yy = stats.yty / n
        unknown = config.unpenalized - set(stats.names)
        if unknown:
            raise KeyError(f"unpenalized columns not in design: {sorted(unknown)}")
        self.pen = np.array([nm not in config.unpenalized for nm in stats.names])

    def unpenalized_ls(self) -> np.ndarray:
        b = np.zeros(len(self.c))
        u = np.flatnonzero(~self.pen & self.live)
        if len(u):
            b[u] = np.linalg.lstsq(self.G[np.ix_(u, u)], self.c[u], rcond=None)[0]
        return b

    def lambda_max(self, alpha: float) -> float:
        grad = self.c - self.G @ self.unpenalized_ls()
        p = self.pen & self.live
        if not p.any():
            return 0.0
        return float(np.abs(grad[p]).max() / max(alpha, 1e-3))

    def penalties(self, lam: float, alpha: float):
        l1 = np.where(self.pen, lam * alpha, 0.0)
        l2 = np.where(self.pen, lam * (1 - alpha), 0.0)
        return l1, l2

    def objective(self, b, lam, alpha) -> float:
        fit_term = 0.5 * (self.yy - 2 * b @ self.c + b @ self.G @ b)
        bp = b[self.pen]
        return float(fit_term + lam * (alpha * np.abs(bp).sum() + 0.5 * (1 - alpha) * (bp @ bp)))

    def kkt(self, b, lam, alpha) -> float:
        g = self.c - self.G @ b
        worst = 0.0
        for j in np.flatnonzero(self.live):
            if not self.pen[j]:
                v = abs(g[j])
            elif b[j] == 0.0:
                v = max(0.0, abs(g[j]) - alpha * lam)
            else:
                v = abs(g[j] - (1 - alpha) * lam * b[j] - alpha * lam * np.sign(b[j]))
            worst = max(worst, v)
        return worst

    def polish(self, b, lam, alpha):
        """Exact solution on the current active set and signs, or None.

        On the active set the optimality conditions are linear:
        ``(G_AA + lam (1 - alpha) I_P) b_A = c_A - lam alpha s_A``. The result is
        accepted only if the signs hold and every condition is met.
        """
        act = np.flatnonzero((b != 0) | (~self.pen & self.live))
        if not len(act):
            return None
        s = np.sign(b[act]) * self.pen[act]
        A = self.G[np.ix_(act, act)] + np.diag(lam * (1 - alpha) * self.pen[act])
        try:
            sol = np.linalg.solve(A, self.c[act] - lam * alpha * s)
        except np.linalg.LinAlgError:
            return None
        if np.any((s != 0) & (np.sign(sol) != s)):
            return None
        cand = np.zeros_like(b)
        cand[act] = sol
        return cand

    def solve(self, lam, alpha, config: PenaltyConfig, beta0=None):
        b = np.zeros(len(self.c)) if beta0 is None else np.array(beta0, dtype=np.float64)
        l1, l2 = self.penalties(lam, alpha)
        trace = [self.objective(b, lam, alpha)]
        done = 0
        kkt_tol = max(config.tol, 1e-13)
        while done < config.max_iter:
            step = min(SWEEPS_PER_CHECK, config.max_iter - done)
            b, it, delta = kernels.cd_gram(self.G, self.c, b, l1, l2, config.tol, step)
            done += it
            trace.append(self.objective(b, lam, alpha))
            if delta < config.tol:
                return b, done, trace
            cand = self.polish(b, lam, alpha)
            if cand is not None and self.kkt(cand, lam, alpha) <= kkt_tol:
                trace.append(self.objective(cand, lam, alpha))
                return cand, done, trace
        raise ConvergenceError(
            f"coordinate descent did not converge in {config.max_iter} sweeps (last change {delta:.3g})",
            self.unscale(b), trace,
        )

    def unscale(self, b) -> pd.Series:
        return pd.Series(b / self.scale, index=self.stats.names)

    def result(self, b, lam, alpha, n_iter, config, lmax) -> PenalizedFit:
        names = self.stats.names
        sel = [names[j] for j in np.flatnonzero(self.pen & (b != 0))]
        return PenalizedFit(
            coefficients=self.unscale(b),
            selected=sel,
            lam=float(lam),
            alpha=float(alpha),
            n_selected=len(sel),
            objective=self.objective(b, lam, alpha),
            n_iter=int(n_iter),
            kkt_max=self.kkt(b, lam, alpha),
            config=config,
            lambda_max=lmax,
            extra={"standardized": b.copy()},
        )


def _as_stats(X, y, names) -> SuffStats:
    if isinstance(X, SuffStats):
        return X
    if y is None:
        raise ValueError("response required unless sufficient statistics are passed")
    return SuffStats.from_arrays(X, y, names)


# ------------------------------------------------------------ public API


def lambda_max(X, y=None, config: PenaltyConfig | None = None, names=None) -> float:
    """Smallest penalty at which every penalized coefficient is exactly zero."""
    config = config or PenaltyConfig()
    prob = _Problem(_as_stats(X, y, names), config)
    return prob.lambda_max(config.alpha)


def lambda_grid(lmax: float, n: int = 50, ratio: float = 1e-4) -> np.ndarray:
    """``n`` log-spaced penalties from ``lmax`` down to ``lmax * ratio``."""
    if n < 1 or not lmax > 0:
        raise ValueError("need n >= 1 and a positive lambda_max")
    return np.geomspace(lmax, lmax * ratio, n)


def cd_fit(X, y=None, config: PenaltyConfig | None = None, names=None, beta0=None) -> PenalizedFit:
    """Penalized least squares on a residualized design.

    Parameters
    ----------
    X : array, DataFrame or SuffStats
        Design (already FE-residualized when person effects belong to the model).
    y : array, optional
        Response; omitted when ``X`` is a ``SuffStats``.
    config : PenaltyConfig
    beta0 : array, optional
        Warm start on the standardized scale.

    Raises
    ------
    ConvergenceError
        When ``config.max_iter`` sweeps do not reach ``config.tol``.
    """
    config = config or PenaltyConfig()
    prob = _Problem(_as_stats(X, y, names), config)
    lmax = prob.lambda_max(config.alpha)
    lam = config.lam * lmax if config.relative else config.lam
    b, it, _ = prob.solve(lam, config.alpha, config, beta0)
    return prob.result(b, lam, config.alpha, it, config, lmax)


def cd_path(X, y=None, lambdas=None, config: PenaltyConfig | None = None, names=None) -> list[PenalizedFit]:
    """Warm-started fits along a decreasing penalty path (absolute values)."""
    config = config or PenaltyConfig()
    prob = _Problem(_as_stats(X, y, names), config)
    lmax = prob.lambda_max(config.alpha)
    lambdas = lambda_grid(lmax) if lambdas is None else np.sort(np.asarray(lambdas, dtype=float))[::-1]
    out, b = [], None
    for lam in lambdas:
        b, it, _ = prob.solve(lam, config.alpha, config, b)
        out.append(prob.result(b, lam, config.alpha, it, config, lmax))
    return out


def person_folds(groups, k_folds: int, seed: int) -> np.ndarray:
    """Fold index per row; all rows of one person share a fold."""
    if k_folds < 2:
        raise ValueError("k_folds must be at least 2")
    uniq, codes = np.unique(np.asarray(groups), return_inverse=True)
    rng = substream(seed, "folds", k_folds)
    perm = rng.permutation(len(uniq))
    person_fold = np.empty(len(uniq), dtype=np.int64)
    person_fold[perm] = np.arange(len(uniq)) % k_folds
    return person_fold[codes]


@dataclass
class CvResult:
    """Cross-validation outcome: the chosen config and the full error surface."""

    best: PenaltyConfig
    surface: pd.DataFrame
    lambda_max: float


def cv_select_stats(folds: Sequence[SuffStats], lambda_grid_=None, alpha_grid=(1.0,),
                    config: PenaltyConfig | None = None) -> CvResult:
    """Cross-validate from per-fold sufficient statistics.

    The penalty grid is absolute; by default it is the standard 50-point grid
    below the full-sample ``lambda_max`` for each ``alpha``. A grid point whose
    fit does not converge in some fold is kept in the surface with
    ``converged = False`` and a missing error, and is never selected.
    """
    config = config or PenaltyConfig()
    if not len(folds) >= 2:
        raise ValueError("need at least two folds")
    if any(f.n == 0 for f in folds):
        raise ValueError("a cross-validation fold has no rows")
    total = folds[0]
    for f in folds[1:]:
        total = SuffStats(total.gram + f.gram, total.xty + f.xty, total.yty + f.yty, total.n + f.n, total.names)
    rows = []
    lmax_all = np.nan
    for alpha in alpha_grid:
        cfg = config.with_(alpha=alpha, relative=False)
        full = _Problem(total, cfg)
        lmax = full.lambda_max(alpha)
        lmax_all = lmax if np.isnan(lmax_all) else max(lmax_all, lmax)
        grid = lambda_grid(lmax) if lambda_grid_ is None else np.sort(np.asarray(lambda_grid_, dtype=float))[::-1]
        err = np.zeros((len(folds), len(grid)))
        for i, held in enumerate(folds):
            train = _Problem(total - held, cfg)
            b = None
            for g, lam in enumerate(grid):
                try:
                    b, _, _ = train.solve(lam, alpha, cfg, b)
                except ConvergenceError:
                    # the point drops out of the surface; the path continues from the last good fit
                    err[i, g] = np.nan
                    continue
                beta = b / train.scale
                sse = held.yty - 2 * beta @ held.xty + beta @ held.gram @ beta
                err[i, g] = sse / held.n
        for g, lam in enumerate(grid):
            ok = bool(np.isfinite(err[:, g]).all())
            rows.append({"alpha": alpha, "lam": lam, "cv_mse": err[:, g].mean() if ok else np.nan,
                         "cv_se": err[:, g].std(ddof=1) / np.sqrt(len(folds)) if ok else np.nan, "converged": ok})
    surface = pd.DataFrame(rows)
    if not surface["converged"].any():
        raise ConvergenceError("no grid point converged in every fold", None, [])
    # ties go to the larger penalty
    best = surface[surface["converged"]].sort_values(["cv_mse", "lam"], ascending=[True, False], kind="mergesort").iloc[0]
    return CvResult(config.with_(lam=float(best["lam"]), alpha=float(best["alpha"]), relative=False), surface, lmax_all)


def cv_select(X, y, groups, lambda_grid_=None, alpha_grid=(1.0,), k_folds: int = 5, seed: int = 0,
              config: PenaltyConfig | None = None, names=None) -> CvResult:
    """K-fold cross-validation over ``(lam, alpha)`` with person-level folds.

    Parameters
    ----------
    X, y : design and response (already residualized)
    groups : array
        Person id per row; a person never straddles folds.
    lambda_grid_ : array, optional
        Absolute penalties; default is 50 points below ``lambda_max``.
    alpha_grid : sequence of float
    k_folds : int
    seed : int
        Seeds the fold assignment (``folds`` substream).
    """
    if isinstance(X, pd.DataFrame):
        names = list(X.columns) if names is None else names
        X = X.to_numpy(dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    fold = person_folds(groups, k_folds, seed)
    stats = []
    for f in range(k_folds):
        m = fold == f
        if not m.any():
            raise ValueError(f"fold {f} has no rows")
        stats.append(SuffStats.from_arrays(X[m], y[m], names))
    return cv_select_stats(stats, lambda_grid_, alpha_grid, config)


def postselection_ols(X, y, selected, names=None, unpenalized=(), groups=None, robust=True) -> FitResult:
    """Unpenalized OLS on the selected plus unpenalized columns.

    ``groups`` (person ids) absorbs fixed effects; pass residualized data and
    no groups to reproduce a penalized fit at zero penalty.
    """
    if isinstance(X, pd.DataFrame):
        names = list(X.columns) if names is None else names
        X = X.to_numpy(dtype=np.float64)
    names = [f"x{j}" for j in range(np.shape(X)[1])] if names is None else list(names)
    keep = [j for j, nm in enumerate(names) if nm in set(selected) or nm in set(unpenalized)]
    if not keep:
        raise ValueError("nothing selected and no unpenalized columns")
    return fit(np.asarray(X)[:, keep], y, groups=groups, robust=robust, names=[names[j] for j in keep])


def postselection_stats(stats: SuffStats, columns) -> pd.Series:
    """OLS coefficients from sufficient statistics restricted to ``columns``."""
    idx = [stats.names.index(c) for c in columns]
    coef = pd.Series(0.0, index=stats.names)
    if not idx:
        return coef
    G = stats.gram[np.ix_(idx, idx)]
    R = np.linalg.qr(G, mode="r")
    d = np.abs(np.diag(R))
    if d.min() <= 1e-10 * d.max():
        raise CollinearityError([stats.names[i] for i, v in zip(idx, d) if v <= 1e-10 * d.max()])
    coef.iloc[idx] = np.linalg.solve(G, stats.xty[idx])
    return coef


# ------------------------------------------------------------ lifecycle first step

BASE_CATEGORICAL = (
    "educ_group", "parent_educ_group", "mother_educ_group", "family_size", "birth_order",
    "cog_score", "noncog_score", "region", "parent_age_band", "cohort", "parent_income_quartile",
)
BASE_CONTINUOUS = ("parent_log_income", "parent_log_income_sq", "immigrant")
BASE_INTERACTIONS = (
    ("educ_group", "parent_educ_group"),
    ("educ_group", "parent_log_income"),
    ("educ_group", "immigrant"),
    ("immigrant", "parent_log_income"),
)
PARENTAL_GROWTH_TERMS = ("parent_log_income:age", "parent_log_income:age2")
CHUNK_PERSONS = 2000


@dataclass
class CandidateDesign:
    """Candidate regressors for the penalized first step.

    Person-level base variables (reference-coded categoricals, continuous
    variables and a few pairwise products) each enter as a main effect and
    interacted with age and age squared, next to age and age squared
    themselves. Main effects are constant within person and vanish once
    person effects are removed, but they are kept so column counts match the
    full candidate list.
    """

    levels: dict
    quartile_edges: np.ndarray
    parent_mean: float
    age_center: float
    categorical: tuple = BASE_CATEGORICAL
    continuous: tuple = BASE_CONTINUOUS
    interactions: tuple = BASE_INTERACTIONS

    @classmethod
    def from_persons(cls, persons: pd.DataFrame, age_center: float, categorical=BASE_CATEGORICAL,
                     continuous=BASE_CONTINUOUS, interactions=BASE_INTERACTIONS) -> "CandidateDesign":
        p = persons["parent_log_income"].to_numpy(dtype=float)
        edges = np.quantile(p, [0.25, 0.5, 0.75])
        derived = cls._derived(persons, edges, float(p.mean()))
        levels = {c: np.unique(derived[c].to_numpy()) for c in categorical}
        return cls(levels, edges, float(p.mean()), age_center, tuple(categorical), tuple(continuous), tuple(interactions))

    @staticmethod
    def _derived(persons: pd.DataFrame, edges, pmean) -> pd.DataFrame:
        out = persons.copy()
        p = out["parent_log_income"].to_numpy(dtype=float)
        out["parent_income_quartile"] = np.searchsorted(edges, p, side="right")
        out["parent_log_income_sq"] = (p - pmean) ** 2
        return out

    def _blocks(self, frame: pd.DataFrame) -> dict:
        """Columns contributed by each base variable, as ``{var: (names, matrix)}``."""
        blocks = {}
        for c in self.categorical:
            lv = self.levels[c][1:]
            v = frame[c].to_numpy()
            blocks[c] = ([f"{c}={x}" for x in lv], (v[:, None] == lv[None, :]).astype(np.float64))
        for c in self.continuous:
            blocks[c] = ([c], frame[c].to_numpy(dtype=np.float64)[:, None])
        return blocks

    def base(self, persons: pd.DataFrame) -> pd.DataFrame:
        """Person-level base matrix (one row per person)."""
        frame = self._derived(persons, self.quartile_edges, self.parent_mean)
        blocks = self._blocks(frame)
        names, mats = [], []
        for c in list(self.categorical) + list(self.continuous):
            nm, m = blocks[c]
            names += nm
            mats.append(m)
        for a, b in self.interactions:
            na, ma = blocks[a]
            nb, mb = blocks[b]
            for i, x in enumerate(na):
                for j, z in enumerate(nb):
                    names.append(f"{x}*{z}")
                    mats.append(ma[:, [i]] * mb[:, [j]])
        return pd.DataFrame(np.hstack(mats), columns=names, index=persons.index)

    def names(self, base_names) -> list:
        out = ["age", "age2"]
        for b in base_names:
            out += [b, f"{b}:age", f"{b}:age2"]
        return out

    def rows(self, base: np.ndarray, age: np.ndarray) -> np.ndarray:
        """Candidate rows for person-level ``base`` rows observed at ``age``."""
        a = (np.asarray(age, dtype=np.float64) - self.age_center) / 10.0
        a2 = a * a
        n, k = base.shape
        X = np.empty((n, 2 + 3 * k))
        X[:, 0] = a
        X[:, 1] = a2
        X[:, 2::3] = base
        X[:, 3::3] = base * a[:, None]
        X[:, 4::3] = base * a2[:, None]
        return X


def _chunks(codes: np.ndarray, n_persons: int, size: int):
    """Row slices covering consecutive blocks of ``size`` persons (codes sorted)."""
    for start in range(0, n_persons, size):
        stop = min(start + size, n_persons)
        lo, hi = np.searchsorted(codes, [start, stop])
        yield start, stop, slice(lo, hi)


def candidate_stats(panel, design: CandidateDesign, fold_of_person=None, k_folds: int = 0):
    """Accumulate residualized cross products and person means.

    Returns ``(stats, fold_stats, xbar, ybar, names)`` where ``fold_stats`` is
    a list (empty without folds) and ``xbar``/``ybar`` are per-person means
    of the raw candidate rows and log income.
    """
    base = design.base(panel.persons)
    names = design.names(list(base.columns))
    B = base.to_numpy()
    codes = panel.obs_codes
    if np.any(np.diff(codes) < 0):
        raise ValueError("incomes must be sorted by person")
    y_all = panel.log_income()
    age = panel.incomes["age"].to_numpy()
    stats = SuffStats.zeros(names)
    folds = [SuffStats.zeros(names) for _ in range(k_folds)]
    xbar = np.zeros((panel.n_persons, len(names)))
    ybar = np.zeros(panel.n_persons)
    for start, stop, sl in _chunks(codes, panel.n_persons, CHUNK_PERSONS):
        local = codes[sl] - start
        X = design.rows(B[codes[sl]], age[sl])
        y = y_all[sl]
        m = stop - start
        xbar[start:stop] = kernels.group_means(X, local, m)
        ybar[start:stop] = kernels.group_means(y[:, None], local, m)[:, 0]
        Xd = X - xbar[start:stop][local]
        yd = y - ybar[start:stop][local]
        stats.add(Xd, yd)
        if k_folds:
            f = fold_of_person[codes[sl]]
            for i in range(k_folds):
                sel = f == i
                if sel.any():
                    folds[i].add(Xd[sel], yd[sel])
    return stats, folds, xbar, ybar, names


def ml_lifecycle_estimate(
    panel,
    window,
    config: PenaltyConfig | None = None,
    seed: int = 0,
    postselection: bool = False,
    cv_folds: int | None = None,
    alpha_grid=(1.0,),
    smearing: bool = True,
    prediction_ages=(25, 58),
    split_mode: str = "random_assign",
    design: CandidateDesign | None = None,
):
    """Lifecycle IGE with a penalized first step over a wide candidate set.

    Parameters
    ----------
    panel : Panel
    window : AgeWindow
        Ages observed for the evaluation persons (split as in the parametric
        lifecycle estimator).
    config : PenaltyConfig
        Penalty (``relative=True`` scales by the data's ``lambda_max``). Columns
        named in ``unpenalized`` are never shrunk; age and age squared always
        join them.
    postselection : bool
        Refit the selected plus unpenalized columns by OLS.
    cv_folds : int, optional
        Choose ``lam`` (and ``alpha`` from ``alpha_grid``) by person-level
        cross-validation instead of using ``config.lam``.

    Returns
    -------
    IgeEstimate
        ``extra`` holds ``n_candidates``, ``n_selected``, ``lam`` and ``alpha``.
    """
    from .estimators._base import EstimatorSpec, second_step, true_lifetime_series
    from .estimators.lifecycle import _prepare_samples, smearing_factors

    config = config or PenaltyConfig(lam=0.01, relative=True)
    config = config.with_(unpenalized=config.unpenalized | {"age", "age2"})
    est_panel, eval_panel = _prepare_samples(panel, EstimatorSpec("ParentalQuadFE", split_mode=split_mode), window, seed)
    design = design or CandidateDesign.from_persons(est_panel.persons, 0.5 * (panel.age_min + panel.age_max))
    fold_of_person = person_folds(np.arange(est_panel.n_persons), cv_folds, seed) if cv_folds else None
    stats, folds, xbar, ybar, names = candidate_stats(est_panel, design, fold_of_person, cv_folds or 0)

    if cv_folds:
        cv = cv_select_stats(folds, None, alpha_grid, config)
        config = cv.best
    pf = cd_fit(stats, config=config)
    coef = pf.coefficients
    if postselection:
        live = np.diag(stats.gram) > 1e-12 * np.diag(stats.gram).max()
        keep = [nm for nm, ok in zip(names, live) if ok and (nm in pf.selected or nm in config.unpenalized)]
        coef = postselection_stats(stats, keep)
    b = coef.reindex(names).to_numpy()
    fe = ybar - xbar @ b

    # predict lifetime for evaluation persons
    pos = est_panel.person_index.get_indexer(eval_panel.persons["person_id"])
    B = design.base(eval_panel.persons).to_numpy()
    lo, hi = prediction_ages
    ages = np.arange(lo, hi + 1)
    T = len(ages)
    life = np.empty(len(pos))
    for start in range(0, len(pos), CHUNK_PERSONS):
        stop = min(start + CHUNK_PERSONS, len(pos))
        Xp = design.rows(np.repeat(B[start:stop], T, axis=0), np.tile(ages, stop - start))
        pred = (Xp @ b).reshape(stop - start, T) + fe[pos[start:stop]][:, None]
        peak = pred.max(axis=1, keepdims=True)
        life[start:stop] = peak[:, 0] + np.log(np.exp(pred - peak).sum(axis=1))
    if smearing:
        sm = smearing_factors(est_panel)
        life = life + np.log(sm.reindex(eval_panel.person_index).to_numpy())

    persons = eval_panel.persons
    origin = persons["origin_id"] if "origin_id" in persons else persons["person_id"]
    truth = true_lifetime_series(panel).reindex(origin.to_numpy()).to_numpy()
    est = second_step(life, persons["parent_log_income"].to_numpy(), truth=truth, window=window)
    est.extra.update({
        "estimator": "LassoPostOLS" if postselection else "Lasso",
        "n_candidates": len(names),
        "n_selected": pf.n_selected,
        "lam": pf.lam,
        "lam_relative": pf.lam / pf.lambda_max if pf.lambda_max > 0 else np.nan,
        "alpha": pf.alpha,
        "kkt_max": pf.kkt_max,
        "unpenalized": sorted(config.unpenalized),
    })
    return est

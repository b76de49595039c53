"""Dense OLS with absorbed person fixed effects and robust standard errors.

Designs are described symbolically by a :class:`DesignSpec` built from four
term types: :class:`Poly` (centred age polynomial), :class:`Cat` (dummies
with a dropped reference level), :class:`Cont` (a continuous variable or a
power of it) and :class:`Interact` (products of the above). Interactions are
pure products; main effects must be listed separately.

Least squares is solved by a chunked Householder QR of the augmented matrix
``[X y]``, so memory stays bounded on long panels. Rank deficiency is found by
a pivoted QR of the triangular factor on norm-scaled columns.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Sequence

import numpy as np
import pandas as pd
from scipy import linalg

from . import kernels

RANK_TOL = 1e-10
CHUNK_ROWS = 200_000


class CollinearityError(ValueError):
    """Exact collinearity in a design; ``columns`` names a minimal dependent set."""

    def __init__(self, columns: Sequence[str]):
        self.columns = list(columns)
        super().__init__("collinear design columns: " + ", ".join(self.columns))


# ------------------------------------------------------------------- terms


@dataclass(frozen=True)
class Poly:
    """Powers 1..degree of ``var`` centred at the design's age centre."""

    var: str = "age"
    degree: int = 1


@dataclass(frozen=True)
class Cat:
    """Dummies for every non-reference level of ``var`` (reference = first level)."""

    var: str
    levels: tuple | None = None


@dataclass(frozen=True)
class Cont:
    """Continuous ``var`` centred at its estimation-sample mean, raised to ``power``."""

    var: str
    power: int = 1
    center: bool = True


class Interact:
    """Elementwise products of the columns of each factor (all combinations)."""

    __slots__ = ("factors",)

    def __init__(self, *factors):
        flat = []
        for f in factors:
            flat.extend(f.factors if isinstance(f, Interact) else [f])
        if len(flat) > 3:
            raise ValueError("interaction arity above 3")
        self.factors = tuple(flat)

    def __eq__(self, other):
        return isinstance(other, Interact) and self.factors == other.factors

    def __hash__(self):
        return hash(self.factors)

    def __repr__(self):
        return "Interact(" + ", ".join(map(repr, self.factors)) + ")"


Term = Poly | Cat | Cont | Interact

FE_CHOICES = ("none", "person", "parent-income-intercept")


@dataclass(frozen=True)
class DesignSpec:
    """Symbolic description of a regression design.

    Parameters
    ----------
    terms : tuple of terms
        Regressors besides the intercept.
    fe : {"none", "person", "parent-income-intercept"}
        ``person`` absorbs a person fixed effect (no intercept column);
        ``parent-income-intercept`` replaces it by an intercept linear in
        ``parent_log_income``.
    response : {"log", "level"}
        Dependent variable, taken from ``log_income`` or ``income_level``.
    center_age : float, optional
        Centre of the age polynomials. Defaults to the midpoint of the data's
        age range at fit time.
    robust_se : bool
        HC1 standard errors when true, classical otherwise.
    """

    terms: tuple = ()
    fe: str = "none"
    response: str = "log"
    center_age: float | None = None
    robust_se: bool = True

    def __post_init__(self):
        if self.fe not in FE_CHOICES:
            raise ValueError(f"fe must be one of {FE_CHOICES}")
        if len(set(self.terms)) != len(self.terms):
            raise ValueError("duplicate terms in design")
        if self.response not in ("log", "level"):
            raise ValueError("response must be 'log' or 'level'")

    def effective_terms(self) -> tuple:
        terms = tuple(self.terms)
        if self.fe == "parent-income-intercept":
            pterm = Cont("parent_log_income")
            if pterm not in terms:
                terms = (pterm,) + terms
        return terms

    @property
    def intercept(self) -> bool:
        return self.fe != "person"


@dataclass
class DesignInfo:
    """Everything needed to rebuild the same columns on new rows."""

    spec: DesignSpec
    age_center: float
    cont_centers: dict
    cat_levels: dict
    names: list


@dataclass
class Design:
    X: np.ndarray
    y: np.ndarray | None
    names: list
    info: DesignInfo
    groups: np.ndarray | None = None
    group_ids: np.ndarray | None = None


def _factor_block(frame, factor, info: DesignInfo):
    if isinstance(factor, Poly):
        x = frame[factor.var].to_numpy(dtype=np.float64) - info.age_center
        cols = [x**d for d in range(1, factor.degree + 1)]
        names = [factor.var if d == 1 else f"{factor.var}^{d}" for d in range(1, factor.degree + 1)]
        return names, cols
    if isinstance(factor, Cat):
        levels = info.cat_levels[factor.var]
        v = frame[factor.var].to_numpy()
        names = [f"{factor.var}={lv}" for lv in levels[1:]]
        cols = [(v == lv).astype(np.float64) for lv in levels[1:]]
        return names, cols
    if isinstance(factor, Cont):
        x = frame[factor.var].to_numpy(dtype=np.float64)
        if factor.center:
            x = x - info.cont_centers[factor.var]
        name = factor.var if factor.power == 1 else f"{factor.var}^{factor.power}"
        return [name], [x**factor.power]
    raise TypeError(f"unknown term {factor!r}")


def _term_block(frame, term, info):
    if not isinstance(term, Interact):
        return _factor_block(frame, term, info)
    names, cols = [""], [None]
    for f in term.factors:
        fn, fc = _factor_block(frame, f, info)
        new_names, new_cols = [], []
        for (n0, c0), (n1, c1) in product(zip(names, cols), zip(fn, fc)):
            new_names.append(n1 if n0 == "" else f"{n0}:{n1}")
            new_cols.append(c1 if c0 is None else c0 * c1)
        names, cols = new_names, new_cols
    return names, cols


def _walk_factors(terms):
    for t in terms:
        if isinstance(t, Interact):
            yield from t.factors
        else:
            yield t


def make_info(frame: pd.DataFrame, spec: DesignSpec, age_bounds=None) -> DesignInfo:
    """Fix centres and category levels from ``frame`` (the estimation sample)."""
    terms = spec.effective_terms()
    if spec.center_age is not None:
        center = float(spec.center_age)
    elif age_bounds is not None:
        center = 0.5 * (age_bounds[0] + age_bounds[1])
    elif "age" in frame and len(frame):
        age = frame["age"].to_numpy()
        center = 0.5 * (age.min() + age.max())
    else:
        center = 0.0
    conts, cats = {}, {}
    for f in _walk_factors(terms):
        if isinstance(f, Cont) and f.center and f.var not in conts:
            conts[f.var] = float(frame[f.var].to_numpy(dtype=np.float64).mean())
        elif isinstance(f, Cat):
            levels = f.levels if f.levels is not None else tuple(np.unique(frame[f.var].to_numpy()).tolist())
            if f.var in cats and cats[f.var] != tuple(levels):
                raise ValueError(f"inconsistent levels for {f.var}")
            cats[f.var] = tuple(levels)
    return DesignInfo(spec, center, conts, cats, [])


def build_design(
    frame: pd.DataFrame,
    spec: DesignSpec,
    info: DesignInfo | None = None,
    age_bounds=None,
    with_response: bool = True,
) -> Design:
    """Expand ``spec`` on the rows of ``frame``.

    Parameters
    ----------
    frame : pandas.DataFrame
        One row per observation, holding every variable the terms reference
        (a :meth:`Panel.frame` result, optionally with ``log_income``).
    spec : DesignSpec
    info : DesignInfo, optional
        Reuse centres and levels from an earlier design (for prediction).
    age_bounds : (int, int), optional
        Panel age bounds; age polynomials are centred at their midpoint.

    Returns
    -------
    Design
        ``X`` with an ``Intercept`` column first unless person effects are
        absorbed, the response when requested, and person group codes.
    """
    if info is None:
        info = make_info(frame, spec, age_bounds)
    names, cols = [], []
    if spec.intercept:
        names.append("Intercept")
        cols.append(np.ones(len(frame)))
    for term in spec.effective_terms():
        tn, tc = _term_block(frame, term, info)
        names.extend(tn)
        cols.extend(tc)
    X = np.column_stack(cols) if cols else np.empty((len(frame), 0))
    info.names = names
    y = None
    if with_response:
        y = response_vector(frame, spec.response)
    groups = group_ids = None
    if spec.fe == "person" and "person_id" in frame:
        group_ids, groups = np.unique(frame["person_id"].to_numpy(), return_inverse=True)
        groups = groups.astype(np.intp)
    return Design(X, y, names, info, groups, group_ids)


def response_vector(frame: pd.DataFrame, response: str = "log") -> np.ndarray:
    if response == "level":
        return frame["income_level"].to_numpy(dtype=np.float64)
    if "log_income" in frame:
        return frame["log_income"].to_numpy(dtype=np.float64)
    level = frame["income_level"].to_numpy(dtype=np.float64)
    if (level <= 0).any():
        raise ValueError("nonpositive income in log-response design; bottom-code first")
    return np.log(level)


# ------------------------------------------------------------------- solver


def _augmented_r(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Triangular factor of ``[X y]`` via chunked (tall-skinny) QR."""
    n, k = X.shape
    stack = None
    for start in range(0, n, CHUNK_ROWS):
        block = np.column_stack([X[start : start + CHUNK_ROWS], y[start : start + CHUNK_ROWS]])
        if stack is not None:
            block = np.vstack([stack, block])
        stack = linalg.qr(block, mode="r", check_finite=False)[0][: k + 1]
    return stack


def _dependent_set(R: np.ndarray, names: Sequence[str]):
    """Return names of a minimal dependent set, or None when ``R`` has full rank."""
    k = R.shape[1]
    if k == 0:
        return None
    norms = np.linalg.norm(R, axis=0)
    zero = np.flatnonzero(norms <= RANK_TOL * max(norms.max(), 1e-300))
    if len(zero):
        return [names[zero[0]]]
    Rs = R / norms
    R2, piv = linalg.qr(Rs, mode="r", pivoting=True)
    diag = np.abs(np.diag(R2))
    rank = int((diag > RANK_TOL * diag.max()).sum())
    if rank == k:
        return None
    j = piv[rank]
    indep = piv[:rank]
    coef = linalg.solve_triangular(R2[:rank, :rank], R2[:rank, rank], check_finite=False)
    support = indep[np.abs(coef) > 1e-8 * max(np.abs(coef).max(), 1e-300)]
    return [names[i] for i in sorted([j, *support])]


@dataclass
class FitResult:
    """A fitted linear model.

    ``coefficients`` and ``se`` are indexed by design column name.
    ``fixed_effects`` maps group id to the recovered person effect (empty when
    none is absorbed). ``r2`` is the R-squared of the full model including the
    effects; ``r2_within`` uses demeaned data.
    """

    coefficients: pd.Series
    se: pd.Series
    vcov: np.ndarray
    residuals: np.ndarray
    fitted: np.ndarray
    fixed_effects: pd.Series
    r2: float
    r2_within: float
    n_obs: int
    n_params: int
    n_groups: int = 0
    info: DesignInfo | None = None
    extra: dict = field(default_factory=dict)

    @property
    def df_resid(self) -> int:
        return self.n_obs - self.n_params - self.n_groups


def fit(
    X: np.ndarray,
    y: np.ndarray,
    groups: np.ndarray | None = None,
    robust: bool = True,
    names: Sequence[str] | None = None,
    group_ids: np.ndarray | None = None,
) -> FitResult:
    """Least squares with optional absorbed one-way fixed effects.

    Parameters
    ----------
    X : ndarray, shape (n, k)
        Design. With ``groups`` it must not contain an intercept.
    y : ndarray, shape (n,)
    groups : ndarray of int, optional
        Codes ``0..G-1``; effects are absorbed by within-group demeaning and
        recovered as group means of ``y - X b``.
    robust : bool
        HC1 covariance (factor ``n / (n - k - G)``) when true.
    names : sequence of str, optional
        Column names used in results and collinearity errors.
    group_ids : ndarray, optional
        Labels for the recovered effects (default ``0..G-1``).

    Raises
    ------
    CollinearityError
        If the design (after demeaning) is rank deficient.
    ValueError
        If there are no residual degrees of freedom.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, k = X.shape
    names = list(names) if names is not None else [f"x{j}" for j in range(k)]
    n_groups = 0
    if groups is not None:
        groups = np.asarray(groups, dtype=np.intp)
        n_groups = int(groups.max()) + 1 if n else 0
        Xw = kernels.group_demean(X, groups, n_groups) if k else X
        yw = kernels.group_demean(y, groups, n_groups)
    else:
        Xw, yw = X, y
    if n <= k + n_groups:
        raise ValueError(f"n_obs={n} not above parameter count {k + n_groups}")

    scale = np.linalg.norm(Xw, axis=0) if k else np.ones(0)
    Raug = _augmented_r(Xw / np.where(scale > 0, scale, 1.0), yw)
    R, qty = Raug[:k, :k], Raug[:k, k]
    dep = _dependent_set(R, names) if k else None
    if dep is not None:
        raise CollinearityError(dep)
    bs = linalg.solve_triangular(R, qty, check_finite=False) if k else np.zeros(0)
    beta = bs / scale if k else bs
    resid_w = yw - Xw @ beta
    Rinv = linalg.solve_triangular(R, np.eye(k), check_finite=False) if k else np.zeros((0, 0))
    bread = Rinv @ Rinv.T  # inverse of scaled X'X
    dof = n - k - n_groups
    if robust:
        meat = np.zeros((k, k))
        for start in range(0, n, CHUNK_ROWS):
            sl = slice(start, start + CHUNK_ROWS)
            u = (Xw[sl] / scale) * resid_w[sl, None]
            meat += u.T @ u
        vs = bread @ meat @ bread * (n / dof)
    else:
        vs = bread * (resid_w @ resid_w / dof)
    vcov = vs / np.outer(scale, scale) if k else vs
    se = np.sqrt(np.clip(np.diag(vcov), 0.0, None))

    xb = X @ beta
    if groups is not None:
        fe = kernels.group_means(y - xb, groups, n_groups)
        fitted = xb + fe[groups]
        labels = group_ids if group_ids is not None else np.arange(n_groups)
        fe_series = pd.Series(fe, index=pd.Index(labels, name="group"))
    else:
        fitted = xb
        fe_series = pd.Series(dtype=np.float64)
    resid = y - fitted
    ssr = float(resid @ resid)
    tss = float(((y - y.mean()) ** 2).sum())
    tss_w = float(yw @ yw)
    r2 = 1.0 - ssr / tss if tss > 0 else 1.0
    r2_within = 1.0 - ssr / tss_w if tss_w > 0 else 1.0
    return FitResult(
        coefficients=pd.Series(beta, index=names),
        se=pd.Series(se, index=names),
        vcov=vcov,
        residuals=resid,
        fitted=fitted,
        fixed_effects=fe_series,
        r2=float(np.clip(r2, 0.0, 1.0)),
        r2_within=float(np.clip(r2_within, 0.0, 1.0)),
        n_obs=n,
        n_params=k,
        n_groups=n_groups,
    )


def fit_frame(frame: pd.DataFrame, spec: DesignSpec, robust: bool | None = None, age_bounds=None) -> FitResult:
    """Build the design for ``spec`` on ``frame`` and fit it."""
    d = build_design(frame, spec, age_bounds=age_bounds)
    res = fit(
        d.X, d.y, d.groups,
        robust=spec.robust_se if robust is None else robust,
        names=d.names, group_ids=d.group_ids,
    )
    res.info = d.info
    return res


def residualize(X: np.ndarray, y: np.ndarray, groups: np.ndarray | None = None):
    """Demean the columns of ``X`` and ``y`` within ``groups`` (one group if None).

    OLS on the returned arrays reproduces the slope coefficients of the joint
    regression that includes group dummies (Frisch-Waugh-Lovell).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if groups is None:
        groups = np.zeros(len(y), dtype=np.intp)
    groups = np.asarray(groups, dtype=np.intp)
    g = int(groups.max()) + 1
    return kernels.group_demean(X, groups, g), kernels.group_demean(y, groups, g)


def predict(result: FitResult, frame: pd.DataFrame) -> np.ndarray:
    """Evaluate a fitted design on new rows.

    Rows are built with the centres and levels stored in ``result.info``.
    With absorbed person effects, each row's ``person_id`` effect is added;
    rows whose person has no estimated effect come back as NaN.
    """
    if result.info is None:
        raise ValueError("fit result carries no design info; use fit_frame")
    d = build_design(frame, result.info.spec, info=result.info, with_response=False)
    out = d.X @ result.coefficients.to_numpy()
    if result.info.spec.fe == "person":
        fe = result.fixed_effects.reindex(frame["person_id"].to_numpy()).to_numpy()
        out = out + fe
    return out


def ols(x: np.ndarray, y: np.ndarray, robust: bool = True) -> FitResult:
    """Simple regression of ``y`` on an intercept and the columns of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    X = np.column_stack([np.ones(len(x)), x])
    names = ["Intercept"] + [f"x{j}" for j in range(x.shape[1])]
    return fit(X, y, robust=robust, names=names)

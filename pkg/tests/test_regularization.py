import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from conftest import default_panel
from mobilab import kernels
from mobilab.estimators import EstimatorSpec, estimate_lifecycle
from mobilab.panel import AgeWindow
from mobilab.regression import CollinearityError, fit
from mobilab.regularization import (
    PARENTAL_GROWTH_TERMS,
    CandidateDesign,
    ConvergenceError,
    PenaltyConfig,
    SuffStats,
    candidate_stats,
    cd_fit,
    cd_path,
    cv_select,
    lambda_max,
    ml_lifecycle_estimate,
    person_folds,
    postselection_ols,
    postselection_stats,
)


def _data(n=400, k=6, seed=0, noise=1.0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, k)) * rng.uniform(0.5, 3, k)
    X -= X.mean(axis=0)
    beta = np.r_[1.0, -0.5, 0.25, np.zeros(k - 3)]
    y = X @ beta + rng.normal(0, noise, n)
    return X, y - y.mean()


# ------------------------------------------------------------ config


@pytest.mark.parametrize("kw", [{"lam": -1}, {"alpha": 1.5}, {"alpha": -0.1}, {"tol": 0}])
def test_penalty_config_invariants(kw):
    with pytest.raises(ValueError):
        PenaltyConfig(**kw)


# ------------------------------------------------------------ cd_fit


def test_null_threshold_zeroes_everything():
    X, y = _data()
    lmax = lambda_max(X, y)
    fitres = cd_fit(X, y, PenaltyConfig(lam=lmax))
    assert fitres.n_selected == 0
    assert (fitres.coefficients == 0).all()
    inside = cd_fit(X, y, PenaltyConfig(lam=0.999 * lmax))
    assert inside.n_selected >= 1


def test_null_threshold_unstandardized_is_max_gradient():
    X, y = _data(seed=1)
    lmax = lambda_max(X, y, PenaltyConfig(standardize=False))
    assert lmax == pytest.approx(np.abs(X.T @ y).max() / len(y), rel=1e-12)


def test_zero_penalty_is_ols():
    X, y = _data(seed=2)
    pen = cd_fit(X, y, PenaltyConfig(lam=0.0))
    ols = fit(X, y, robust=False)
    assert np.allclose(pen.coefficients.to_numpy(), ols.coefficients.to_numpy(), atol=1e-8)


@pytest.mark.parametrize("lam", [0.0, 0.1, 0.4, 0.9])
def test_single_predictor_soft_threshold(lam):
    rng = np.random.default_rng(3)
    x = rng.normal(size=300)
    x = (x - x.mean()) / x.std()
    y = 0.6 * x + rng.normal(0, 1, 300)
    y -= y.mean()
    b_ols = x @ y / (x @ x)
    got = cd_fit(x[:, None], y, PenaltyConfig(lam=lam)).coefficients.iloc[0]
    assert got == pytest.approx(np.sign(b_ols) * max(abs(b_ols) - lam, 0.0), abs=1e-10)


def test_unpenalized_column_not_shrunk():
    X, y = _data(seed=4)
    lmax = lambda_max(X, y)
    res = cd_fit(X, y, PenaltyConfig(lam=10 * lmax, unpenalized={"x1"}), names=[f"x{j}" for j in range(6)])
    assert res.selected == []
    # with everything else zero the free column equals its own OLS slope
    x1 = X[:, 1]
    assert res.coefficients["x1"] == pytest.approx(x1 @ y / (x1 @ x1), abs=1e-10)


def test_unknown_unpenalized_column():
    X, y = _data()
    with pytest.raises(KeyError):
        cd_fit(X, y, PenaltyConfig(lam=0.1, unpenalized={"nope"}))


def test_relative_penalty_scales_by_null_threshold():
    X, y = _data(seed=5)
    lmax = lambda_max(X, y)
    a = cd_fit(X, y, PenaltyConfig(lam=0.2, relative=True))
    b = cd_fit(X, y, PenaltyConfig(lam=0.2 * lmax))
    assert a.lam == pytest.approx(b.lam)
    assert np.allclose(a.coefficients, b.coefficients, atol=1e-12)


def test_convergence_error_carries_iterate_and_trace(monkeypatch):
    from mobilab.regularization import _Problem

    # without the active-set shortcut a few sweeps cannot settle a near-collinear pair
    monkeypatch.setattr(_Problem, "polish", lambda self, b, lam, alpha: None)
    rng = np.random.default_rng(6)
    z = rng.normal(size=(500, 1))
    X = np.hstack([z, z + 1e-4 * rng.normal(size=(500, 1)), rng.normal(size=(500, 3))])
    y = X[:, 0] + rng.normal(size=500)
    with pytest.raises(ConvergenceError) as info:
        cd_fit(X, y, PenaltyConfig(lam=1e-6, max_iter=3, tol=1e-14))
    err = info.value
    assert len(err.beta) == 5 and len(err.trace) >= 2


def test_elastic_net_matches_closed_form_ridge():
    X, y = _data(seed=7)
    n = len(y)
    lam = 0.3
    res = cd_fit(X, y, PenaltyConfig(lam=lam, alpha=0.0, standardize=False))
    ridge = np.linalg.solve(X.T @ X / n + lam * np.eye(X.shape[1]), X.T @ y / n)
    assert np.allclose(res.coefficients, ridge, atol=1e-9)


@settings(deadline=None, max_examples=30)
@given(seed=st.integers(0, 10_000), frac=st.floats(0.01, 0.95), alpha=st.sampled_from([0.5, 0.75, 1.0]))
def test_kkt_conditions(seed, frac, alpha):
    X, y = _data(n=200, k=8, seed=seed)
    cfg = PenaltyConfig(lam=frac, alpha=alpha, relative=True)
    res = cd_fit(X, y, cfg)
    assert res.kkt_max <= 1e-6
    # check the conditions directly on the standardized scale
    n = len(y)
    scale = np.sqrt((X**2).mean(axis=0))
    Xs = X / scale
    b = res.extra["standardized"]
    g = Xs.T @ (y - Xs @ b) / n
    lam = res.lam
    for j in range(X.shape[1]):
        if b[j] == 0:
            assert abs(g[j]) <= alpha * lam + 1e-6
        else:
            assert abs(g[j] - (1 - alpha) * lam * b[j] - np.sign(b[j]) * alpha * lam) <= 1e-6


@settings(deadline=None, max_examples=20)
@given(seed=st.integers(0, 10_000))
def test_warm_start_path_monotone(seed):
    X, y = _data(n=200, k=8, seed=seed)
    path = cd_path(X, y, np.geomspace(lambda_max(X, y), 1e-3, 12))
    from mobilab.regularization import _Problem

    prob = _Problem(SuffStats.from_arrays(X, y), PenaltyConfig())
    for prev, cur in zip(path, path[1:]):
        assert cur.objective <= prob.objective(prev.extra["standardized"], cur.lam, 1.0) + 1e-12


@settings(deadline=None, max_examples=20)
@given(seed=st.integers(0, 10_000), col=st.integers(0, 5), factor=st.floats(0.01, 100))
def test_selection_invariant_to_rescaling(seed, col, factor):
    X, y = _data(seed=seed)
    a = cd_fit(X, y, PenaltyConfig(lam=0.3, relative=True))
    X2 = X.copy()
    X2[:, col] *= factor
    b = cd_fit(X2, y, PenaltyConfig(lam=0.3, relative=True))
    assert a.selected == b.selected
    assert b.coefficients.iloc[col] * factor == pytest.approx(a.coefficients.iloc[col], rel=1e-6, abs=1e-10)


def test_compiled_and_python_coordinate_descent_agree(monkeypatch):
    try:
        compiled = kernels.get_backend("compiled")
    except ImportError:
        pytest.skip("compiled kernels not built")
    X, y = _data(seed=8, k=10)
    cfg = PenaltyConfig(lam=0.05, alpha=0.75, relative=True)
    out = []
    for impl in (kernels.get_backend("python"), compiled):
        monkeypatch.setattr(kernels, "_impl", impl)
        out.append(cd_fit(X, y, cfg).coefficients)
    assert np.allclose(out[0], out[1], atol=1e-10)


# ------------------------------------------------------------ cross-validation


def test_person_folds_keep_persons_together_and_are_deterministic():
    groups = np.repeat(np.arange(50), 4)
    a = person_folds(groups, 5, seed=3)
    b = person_folds(groups, 5, seed=3)
    assert np.array_equal(a, b)
    assert (pd.Series(a).groupby(groups).nunique() == 1).all()
    assert set(a) == set(range(5))
    assert not np.array_equal(a, person_folds(groups, 5, seed=4))


def test_folds_need_two():
    with pytest.raises(ValueError):
        person_folds(np.arange(10), 1, 0)


def test_cv_single_point_grid():
    X, y = _data(seed=9)
    cv = cv_select(X, y, np.arange(len(y)), lambda_grid_=[0.05], alpha_grid=(0.75,), k_folds=4, seed=0)
    assert cv.best.lam == 0.05 and cv.best.alpha == 0.75
    assert len(cv.surface) == 1


def test_cv_surface_covers_grid():
    X, y = _data(seed=10)
    cv = cv_select(X, y, np.arange(len(y)) // 2, alpha_grid=(0.5, 1.0), k_folds=5, seed=1)
    assert len(cv.surface) == 100
    assert cv.best.lam == cv.surface.loc[cv.surface["cv_mse"].idxmin(), "lam"]


def test_cv_empty_fold_is_an_error():
    X, y = _data(n=6, k=3)
    with pytest.raises(ValueError):
        cv_select(X, y, np.zeros(6), k_folds=3, seed=0)


def test_cv_pure_noise_selects_null_model():
    hits = 0
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        X = rng.normal(size=(400, 10))
        X -= X.mean(axis=0)
        y = rng.normal(size=400)
        y -= y.mean()
        cv = cv_select(X, y, np.arange(400), k_folds=5, seed=seed)
        hits += cv.best.lam >= 0.3 * cv.lambda_max
    assert hits >= 8


def test_cv_recovers_signal():
    X, y = _data(n=1000, seed=11, noise=0.5)
    cv = cv_select(X, y, np.arange(1000), k_folds=5, seed=0)
    sel = cd_fit(X, y, cv.best).selected
    assert {"x0", "x1", "x2"} <= set(sel)


# ------------------------------------------------------------ postselection


def test_postselection_all_columns_is_ols():
    X, y = _data(seed=12)
    names = [f"x{j}" for j in range(6)]
    a = postselection_ols(X, y, names, names=names, robust=False)
    b = fit(X, y, robust=False, names=names)
    assert np.allclose(a.coefficients, b.coefficients, atol=1e-12)


def test_postselection_of_zero_penalty_fit():
    X, y = _data(seed=13)
    pen = cd_fit(X, y, PenaltyConfig(lam=0.0))
    post = postselection_ols(X, y, pen.selected)
    assert np.allclose(post.coefficients.to_numpy(), pen.coefficients.to_numpy(), atol=1e-8)


def test_postselection_empty_selection_keeps_unpenalized():
    X, y = _data(seed=14)
    names = [f"x{j}" for j in range(6)]
    post = postselection_ols(X, y, [], names=names, unpenalized=["x0", "x1"])
    ref = fit(X[:, :2], y, names=["x0", "x1"])
    assert np.allclose(post.coefficients, ref.coefficients, atol=1e-12)
    with pytest.raises(ValueError):
        postselection_ols(X, y, [], names=names)


def test_postselection_collinear():
    X, y = _data(seed=15)
    X = np.hstack([X, X[:, [0]]])
    with pytest.raises(CollinearityError):
        postselection_ols(X, y, [f"x{j}" for j in range(7)])
    stats = SuffStats.from_arrays(X, y)
    with pytest.raises(CollinearityError):
        postselection_stats(stats, ["x0", "x6"])


def test_postselection_stats_matches_arrays():
    X, y = _data(seed=16)
    stats = SuffStats.from_arrays(X, y)
    a = postselection_stats(stats, ["x0", "x2"])
    b = fit(X[:, [0, 2]], y).coefficients
    assert a["x0"] == pytest.approx(b.iloc[0]) and a["x2"] == pytest.approx(b.iloc[1])
    assert a["x1"] == 0.0


# ------------------------------------------------------------ lifecycle candidate set


@pytest.fixture(scope="module")
def young_panel():
    return default_panel(4000, 21)


def test_candidate_set_has_233_columns(young_panel):
    design = CandidateDesign.from_persons(young_panel.persons, 41.5)
    base = design.base(young_panel.persons)
    names = design.names(list(base.columns))
    assert len(names) == 233
    assert set(PARENTAL_GROWTH_TERMS) <= set(names)


def test_candidate_stats_are_within_person(young_panel):
    small = young_panel.with_("head", {}, persons=young_panel.persons.iloc[:50],
                              incomes=young_panel.incomes[young_panel.incomes["person_id"].isin(young_panel.persons["person_id"].iloc[:50])])
    design = CandidateDesign.from_persons(small.persons, 41.5)
    stats, _, xbar, ybar, names = candidate_stats(small, design)
    base = design.base(small.persons).to_numpy()
    X = design.rows(base[small.obs_codes], small.incomes["age"].to_numpy())
    Xd = kernels.group_demean(X, small.obs_codes, small.n_persons)
    assert np.allclose(stats.gram, Xd.T @ Xd, atol=1e-6)


def test_ml_zero_penalty_close_to_parametric(young_panel):
    w = AgeWindow(25, 27)
    ml = ml_lifecycle_estimate(young_panel, w, PenaltyConfig(lam=0.0), seed=1, smearing=True)
    par = estimate_lifecycle(young_panel, EstimatorSpec("ParentalQuadFE"), w, seed=1)
    assert ml.extra["n_candidates"] == 233
    assert abs(ml.slope - par.slope) < 0.02


def test_ml_reports_selection(young_panel):
    ml = ml_lifecycle_estimate(young_panel, AgeWindow(25, 30), PenaltyConfig(lam=0.01, relative=True), seed=1)
    assert 0 < ml.extra["n_selected"] < 233
    assert ml.extra["kkt_max"] <= 1e-6
    post = ml_lifecycle_estimate(young_panel, AgeWindow(25, 30), PenaltyConfig(lam=0.01, relative=True), seed=1,
                                 postselection=True)
    assert post.extra["estimator"] == "LassoPostOLS"
    assert np.isfinite(post.slope)


def test_cv_skips_unconverged_points(monkeypatch):
    from mobilab.regularization import _Problem

    X, y = _data(seed=17)
    solve = _Problem.solve

    def flaky(self, lam, alpha, config, beta0=None):
        if lam < 0.01:
            raise ConvergenceError("forced", None, [])
        return solve(self, lam, alpha, config, beta0)

    monkeypatch.setattr(_Problem, "solve", flaky)
    cv = cv_select(X, y, np.arange(len(y)), lambda_grid_=[0.2, 0.02, 0.001], k_folds=3, seed=0)
    assert list(cv.surface["converged"]) == [True, True, False]
    assert np.isnan(cv.surface["cv_mse"].iloc[2])
    assert cv.best.lam in (0.2, 0.02)

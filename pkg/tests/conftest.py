"""Shared fixtures: toy panels, kernel backends and cached synthetic panels."""

from __future__ import annotations

import functools

import numpy as np
import pandas as pd
import pytest

from mobilab import kernels
from mobilab.income_process import SimConfig, scenario_config, simulate_panel
from mobilab.panel import make_panel


def toy_panel(log_y: np.ndarray, parent=None, educ=None, parent_educ=None, age_min=25, cohort=1950,
              extra_persons: dict | None = None) -> "Panel":  # noqa: F821
    """Panel from an ``(n, T)`` matrix of log incomes (NaN = not observed)."""
    log_y = np.atleast_2d(np.asarray(log_y, dtype=float))
    n, T = log_y.shape
    pid = np.arange(n, dtype=np.int64)
    persons = pd.DataFrame({
        "person_id": pid,
        "family_id": pid + 1000,
        "cohort": np.full(n, cohort, dtype=np.int64) if np.isscalar(cohort) else np.asarray(cohort, dtype=np.int64),
        "sex": np.ones(n, dtype=np.int64),
        "educ_group": np.zeros(n, dtype=np.int64) if educ is None else np.asarray(educ, dtype=np.int64),
        "parent_educ_group": np.zeros(n, dtype=np.int64) if parent_educ is None else np.asarray(parent_educ, dtype=np.int64),
        "parent_log_income": np.zeros(n) if parent is None else np.asarray(parent, dtype=float),
    })
    for k, v in (extra_persons or {}).items():
        persons[k] = v
    ages = np.arange(age_min, age_min + T)
    ii, tt = np.nonzero(np.isfinite(log_y))
    incomes = pd.DataFrame({
        "person_id": pid[ii],
        "year": persons["cohort"].to_numpy()[ii] + ages[tt],
        "age": ages[tt].astype(np.int64),
        "income_level": np.exp(log_y[ii, tt]),
    })
    return make_panel(persons, incomes, age_min, age_min + T - 1)


@pytest.fixture(params=["python", "compiled"])
def backend(request, monkeypatch):
    """Run a test under each kernel backend (compiled skipped when unbuilt)."""
    try:
        impl = kernels.get_backend(request.param)
    except ImportError:
        pytest.skip("compiled kernels not built")
    monkeypatch.setattr(kernels, "_impl", impl)
    return request.param


@functools.lru_cache(maxsize=None)
def default_panel(n_persons: int = 4000, seed: int = 0, scenario: str = "default"):
    return simulate_panel(scenario_config(scenario, n_persons=n_persons, seed=seed))


@pytest.fixture(scope="session")
def small_panel():
    return default_panel(4000, 0)


def quiet_config(**changes) -> SimConfig:
    """A config with every variance and parental loading switched off."""
    base = SimConfig(n_persons=50, seed=3).with_updates(
        hip={"theta": (10.0, 0.0, 0.0, 0.0), "sigma2_alpha": 0.0, "sigma2_beta": 0.0, "sigma_alpha_beta": 0.0,
             "sigma2_eta": 0.0, "sigma2_eps": 0.0},
        link={"load_intercept": 0.0, "load_growth_linear": 0.0, "load_growth_quad": 0.0,
              "educ_profiles": ((0, 0, 0),) * 4},
    )
    return base.with_updates(**changes)


# lines from the acceptance suite, echoed in the terminal summary
ACCEPTANCE: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)

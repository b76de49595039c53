import json
import textwrap

import numpy as np
import pandas as pd
import pytest

from conftest import toy_panel
from mobilab import cli
from mobilab.config import ConfigError, GridSpec, estimator_spec, load_config, parse_config, rep_seed
from mobilab.panel import write_csv


def _config(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(textwrap.dedent(text), encoding="utf-8")
    return path


def _run(cmd, path, *extra):
    return cli.main([cmd, "--config", str(path), *extra])


def _manifest(out):
    return json.loads((out / "manifest.json").read_text())


def _csv_panel(tmp_path, log_y, parent):
    panel = toy_panel(log_y, parent=parent)
    write_csv(panel, tmp_path / "persons.csv", tmp_path / "incomes.csv")


# ------------------------------------------------------------ config parsing


def test_rep_seed():
    assert rep_seed(5, 0) == 5
    assert rep_seed(5, 1) == rep_seed(5, 1) != rep_seed(5, 2)


def test_unknown_keys_rejected(tmp_path):
    with pytest.raises(ConfigError):
        parse_config({"sed": 1})
    with pytest.raises(ConfigError):
        parse_config({"panel": {"n_person": 10}})
    with pytest.raises(ConfigError):
        GridSpec.from_dict({"windows": ["25-27"], "estimators": ["DirectAnnual"], "repetition": 2})


def test_grid_spec_validation():
    with pytest.raises(ConfigError):
        GridSpec.from_dict({"windows": ["25-27"], "estimators": ["Nope"]})
    with pytest.raises(ConfigError):
        GridSpec.from_dict({"windows": ["25-27"], "estimators": ["Trends"]})
    with pytest.raises(ConfigError):
        GridSpec.from_dict({"windows": ["25-27"], "estimators": ["DirectAnnual"], "subsample_fraction": 0})
    assert estimator_spec("ParentalQuadNoFE", {"fe": True}).fe is not True


def test_cli_overrides(tmp_path):
    path = _config(tmp_path, """
        seed = 1
        out = "a"
        format = "csv"
    """)
    cfg = load_config(path, seed=9, out=tmp_path / "b", fmt=["md"])
    assert cfg.seed == 9 and cfg.out == tmp_path / "b" and cfg.formats == ("md",)


def test_all_configs_parse():
    from pathlib import Path

    root = Path(__file__).resolve().parents[1] / "configs"
    found = sorted(p.stem for p in root.glob("*.toml"))
    assert found == sorted(cli.HANDLERS)
    for p in root.glob("*.toml"):
        cfg = load_config(p)
        assert cfg.seed is not None and p.stem in cfg.commands


# ------------------------------------------------------------ simulate


def test_simulate_rows_and_determinism(tmp_path):
    path = _config(tmp_path, """
        seed = 4
        [panel]
        n_persons = 10
        [simulate]
    """)
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert _run("simulate", path, "--out", str(out)) == 0
    persons = pd.read_csv(outs[0] / "persons.csv")
    incomes = pd.read_csv(outs[0] / "incomes.csv")
    assert len(persons) == 10 and len(incomes) == 340
    for name in ("persons.csv", "incomes.csv", "manifest.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    m = _manifest(outs[0])
    assert m["status"] == "ok" and m["seed"] == 4 and "timestamp" not in json.dumps(m)


def test_simulate_requires_seed(tmp_path):
    path = _config(tmp_path, """
        [panel]
        n_persons = 10
    """)
    assert _run("simulate", path, "--out", str(tmp_path / "o")) == cli.EXIT_CONFIG


def test_simulate_with_fathers(tmp_path):
    path = _config(tmp_path, """
        seed = 4
        [panel]
        n_persons = 10
        [simulate]
        with_fathers = true
    """)
    out = tmp_path / "o"
    assert _run("simulate", path, "--out", str(out)) == 0
    assert (out / "fathers_incomes.csv").exists()


# ------------------------------------------------------------ grid


GRID = """
    seed = 2
    format = ["csv", "md"]
    [panel]
    n_persons = {n}
    [grid]
    windows = {windows}
    estimators = {estimators}
    repetitions = {reps}
"""


def _grid(tmp_path, windows, estimators, reps=1, n=600, out="g"):
    text = GRID.format(n=n, windows=json.dumps(windows), estimators=json.dumps(estimators), reps=reps)
    path = _config(tmp_path, text)
    code = _run("grid", path, "--out", str(tmp_path / out))
    return code, pd.read_csv(tmp_path / out / "grid.csv")


def test_grid_single_cell(tmp_path):
    code, frame = _grid(tmp_path, ["25-30"], ["ParentalQuadFE"])
    assert code == 0 and len(frame) == 1
    assert frame.loc[0, "repetitions"] == 1 and np.isnan(frame.loc[0, "slope_sd"])


def test_grid_full_table(tmp_path):
    windows = ["25-27", "25-30", "25-35", "25-40", "25-45"]
    estimators = ["Benchmark", "DirectAnnual", "BaselineFE", "ParentalLinearFE", "ParentalQuadFE",
                  "ParentalQuadNoFE", "SlopeLevelQuad"]
    code, frame = _grid(tmp_path, windows, estimators)
    assert code == 0 and len(frame) == 35
    assert list(frame["window"].unique()) == windows
    md = (tmp_path / "g" / "grid.md").read_text()
    assert "Age 25-27" in md and "R² 1st step" in md


def test_grid_repetitions_report_sd(tmp_path):
    code, frame = _grid(tmp_path, ["25-30"], ["DirectAnnual", "ParentalQuadNoFE"], reps=3, n=300)
    assert code == 0
    assert (frame["repetitions"] == 3).all()
    assert (frame["slope_sd"] > 0).all()
    assert "Standard deviation" in (tmp_path / "g" / "grid.md").read_text()


def test_grid_deterministic_across_threads(tmp_path, monkeypatch):
    monkeypatch.setenv("MOBILAB_THREADS", "1")
    _grid(tmp_path, ["25-27", "25-30"], ["DirectAnnual", "ParentalQuadFE"], out="one")
    monkeypatch.setenv("MOBILAB_THREADS", "4")
    _grid(tmp_path, ["25-27", "25-30"], ["DirectAnnual", "ParentalQuadFE"], out="four")
    for name in ("grid.csv", "grid.md", "manifest.json"):
        assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "four" / name).read_bytes()


def test_grid_cell_error_continues(tmp_path):
    rng = np.random.default_rng(0)
    _csv_panel(tmp_path, rng.normal(10, 0.5, (40, 6)), rng.normal(size=40))
    path = _config(tmp_path, """
        seed = 1
        [panel]
        source = "csv"
        persons = "persons.csv"
        incomes = "incomes.csv"
        [grid]
        windows = ["25-27", "40-45"]
        estimators = ["DirectAnnual"]
    """)
    out = tmp_path / "o"
    assert _run("grid", path, "--out", str(out)) == cli.EXIT_CELLS
    frame = pd.read_csv(out / "grid.csv")
    assert len(frame) == 2 and np.isfinite(frame.loc[0, "slope"]) and np.isnan(frame.loc[1, "slope"])
    m = _manifest(out)
    assert m["status"] == "partial" and m["n_errors"] == 1 and m["errors"][0]["window"] == "40-45"


def test_command_failure_exit_code(tmp_path):
    path = _config(tmp_path, """
        seed = 1
        [panel]
        source = "csv"
        persons = "missing.csv"
        incomes = "missing.csv"
        [geiv]
    """)
    out = tmp_path / "o"
    assert _run("geiv", path, "--out", str(out)) == cli.EXIT_FAILED
    assert _manifest(out)["notes"]["failed"] is True


def test_bad_config_exit_code(tmp_path):
    path = _config(tmp_path, "seed = 1\nbogus = 2\n")
    assert _run("grid", path) == cli.EXIT_CONFIG
    path = _config(tmp_path, "seed = [", name="broken.toml")
    assert _run("grid", path) == cli.EXIT_CONFIG


# ------------------------------------------------------------ other commands


def test_geiv_annual_equals_lifetime(tmp_path):
    c = np.random.default_rng(1).normal(10, 0.5, 60)
    _csv_panel(tmp_path, np.tile(c[:, None], (1, 34)), 0.4 * c)
    path = _config(tmp_path, """
        [panel]
        source = "csv"
        persons = "persons.csv"
        incomes = "incomes.csv"
        [geiv]
    """)
    out = tmp_path / "o"
    assert _run("geiv", path, "--out", str(out)) == 0
    frame = pd.read_csv(out / "geiv.csv")
    assert len(frame) == 34
    assert np.allclose(frame["lambda"], 1.0, atol=1e-9)


def test_estimate(tmp_path):
    path = _config(tmp_path, """
        seed = 3
        [panel]
        n_persons = 500
        [estimate]
        estimator = "ParentalQuadFE"
        window = "25-30"
        bootstrap = 3
    """)
    out = tmp_path / "o"
    assert _run("estimate", path, "--out", str(out)) == 0
    frame = pd.read_csv(out / "estimate.csv")
    assert list(frame["estimator"]) == ["Benchmark", "ParentalQuadFE"]
    assert frame.loc[1, "se_bootstrap"] > 0


def test_creedy_rows(tmp_path):
    path = _config(tmp_path, """
        seed = 3
        [panel]
        scenario = "creedy"
        n_persons = 800
        [creedy]
        observed_ages = [30, 35]
    """)
    out = tmp_path / "o"
    assert _run("creedy", path, "--out", str(out)) == 0
    frame = pd.read_csv(out / "creedy.csv")
    assert list(frame["observed_age"]) == list(range(30, 36))
    assert np.allclose(frame["bias"], frame["slope"] - frame["benchmark"])


def test_trends_rows(tmp_path):
    path = _config(tmp_path, """
        seed = 1
        [panel]
        scenario = "trends"
        n_persons = 2000
        max_year = 2018
        [trends]
        cohort_groups = [[1950, 1959], [1960, 1969], [1970, 1979], [1980, 1989]]
    """)
    out = tmp_path / "o"
    assert _run("trends", path, "--out", str(out), "--format", "csv", "--format", "md") == 0
    frame = pd.read_csv(out / "trends.csv")
    assert (frame.groupby("estimator").size() == 4).all()
    assert set(frame["estimator"]) == {"DirectPooled", "Direct25-30", "Baseline", "Parental", "CohortFE", "CohortNoFE"}
    assert frame.loc[frame["cohort_group"] == "1980-1989", "extrapolated"].any()
    assert (out / "trends.md").exists()


def test_lasso_columns(tmp_path):
    path = _config(tmp_path, """
        seed = 1
        [panel]
        n_persons = 800
        [lasso]
        window = "25-27"
        [[lasso.columns]]
        name = "Parametric"
        kind = "parametric"
        [[lasso.columns]]
        name = "Lasso 0.05"
        lam = 0.05
    """)
    out = tmp_path / "o"
    assert _run("lasso", path, "--out", str(out), "--format", "md", "--format", "csv") == 0
    frame = pd.read_csv(out / "lasso.csv")
    assert list(frame["column"]) == ["Lifetime", "Parametric", "Lasso 0.05"]
    assert {"# vars", "# vars selected"} <= set(frame.columns)
    assert frame.loc[2, "# vars"] == 233 and 0 <= frame.loc[2, "# vars selected"] <= 233
    assert "# vars selected" in (out / "lasso.md").read_text()


def test_growth(tmp_path):
    path = _config(tmp_path, """
        seed = 1
        [panel]
        n_persons = 1500
        [growth]
        father_windows = ["30-40"]
    """)
    out = tmp_path / "o"
    assert _run("growth", path, "--out", str(out)) == 0
    assert len(pd.read_csv(out / "growth_gradient.csv")) > 0
    assert (out / "growth_on_growth.csv").exists()


def test_csv_round_trip_precision(tmp_path):
    from mobilab import tables

    frame = pd.DataFrame({"a": [0.1 + 0.2, np.pi, np.nan], "b": ["x", "y", "z"]})
    tables.emit(frame, tmp_path, "t", ["csv"])
    back = pd.read_csv(tmp_path / "t.csv", float_precision="round_trip")
    assert back["a"].iloc[0] == 0.1 + 0.2 and back["a"].iloc[1] == np.pi and np.isnan(back["a"].iloc[2])

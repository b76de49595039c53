"""``mobilab`` command-line front end.

Usage::

    mobilab <subcommand> --config PATH [--seed N] [--out DIR] [--format csv|md]

Subcommands: simulate, estimate, grid, geiv, creedy, trends, lasso, growth.
Each writes its tables plus ``manifest.json`` into the output directory.
Exit status is 0 on success, 1 when some table cells failed (the manifest
lists them), 2 for configuration errors and 3 when the command itself failed.
``MOBILAB_THREADS`` caps the worker pool used for independent cells.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields

import numpy as np
import pandas as pd

from . import tables
from .config import COMMANDS, ConfigError, GridSpec, RunConfig, estimator_spec, load_config, rep_seed
from .estimators import (
    LIFECYCLE_VARIANTS,
    TrendsSpec,
    creedy_estimate,
    creedy_fit,
    direct_by_group,
    decade_groups,
    estimate_benchmark,
    estimate_direct_annual,
    estimate_lifecycle,
    estimate_trends,
    geiv_diagnostics,
    thin_observations,
)
from .income_process import growth_gradient_table, growth_on_growth_table
from .panel import AgeWindow, Panel, sample_persons, write_csv
from .regularization import PARENTAL_GROWTH_TERMS, PenaltyConfig, ml_lifecycle_estimate

EXIT_OK, EXIT_CELLS, EXIT_CONFIG, EXIT_FAILED = 0, 1, 2, 3


# ------------------------------------------------------------ helpers


def n_workers() -> int:
    value = os.environ.get("MOBILAB_THREADS")
    if value:
        try:
            return max(1, int(value))
        except ValueError:
            raise ConfigError("MOBILAB_THREADS must be an integer") from None
    return max(1, min(8, os.cpu_count() or 1))


def run_cells(tasks: list) -> list:
    """Run ``(key, fn)`` tasks; returns ``(key, result, error)`` in task order."""

    def call(task):
        key, fn = task
        try:
            return key, fn(), None
        except Exception as exc:  # recorded per cell, the table continues
            return key, None, f"{type(exc).__name__}: {exc}"

    workers = min(n_workers(), max(1, len(tasks)))
    if workers == 1:
        return [call(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(call, tasks))


def _error(cell: dict, message: str) -> dict:
    return {**{k: (str(v) if isinstance(v, AgeWindow) else v) for k, v in cell.items()}, "error": message}


def _window(value, default: str | None = None) -> AgeWindow:
    value = value if value is not None else default
    if value is None:
        raise ConfigError("a window is required")
    try:
        return AgeWindow.parse(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad window {value!r}: {exc}") from exc


def _check_keys(section: dict, allowed, name: str):
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown [{name}] keys: {sorted(unknown)}")


def estimate_cell(panel: Panel, variant: str, window: AgeWindow, spec, seed: int,
                  max_obs_per_person: int | None = None, bootstrap: int = 0):
    """One estimator on one window.

    ``Creedy`` rebuilds lifetime income from the observation at the window's
    upper age with moments fit on the whole panel.
    """
    if variant == "Benchmark":
        return estimate_benchmark(panel)
    if variant == "DirectAnnual":
        if max_obs_per_person is not None:
            panel = thin_observations(panel, max_obs_per_person, window, seed)
        return estimate_direct_annual(panel, window)
    if variant == "Creedy":
        return creedy_estimate(panel, creedy_fit(panel), window.hi)
    if variant in LIFECYCLE_VARIANTS:
        return estimate_lifecycle(panel, spec, window, seed=seed, max_obs_per_person=max_obs_per_person,
                                  bootstrap=bootstrap)
    raise ConfigError(f"{variant} is not a windowed estimator")


def _row(est) -> dict:
    row = est.as_row()
    row["estimator"] = est.extra.get("estimator", row["estimator"])
    return row


# ------------------------------------------------------------ commands


def cmd_simulate(cfg: RunConfig):
    sec = cfg.section("simulate")
    _check_keys(sec, ("with_fathers",), "simulate")
    if cfg.panel.source != "simulate":
        raise ConfigError("simulate needs panel.source = 'simulate'")
    seed = cfg.require_seed()
    children, fathers = cfg.panel.load(seed, with_fathers=bool(sec.get("with_fathers", False)))
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_csv(children, cfg.out / "persons.csv", cfg.out / "incomes.csv")
    files = ["persons.csv", "incomes.csv"]
    if fathers is not None:
        write_csv(fathers, cfg.out / "fathers_persons.csv", cfg.out / "fathers_incomes.csv")
        files += ["fathers_persons.csv", "fathers_incomes.csv"]
    notes = {"n_persons": children.n_persons, "n_obs": children.n_obs}
    return files, [], notes


def cmd_estimate(cfg: RunConfig):
    sec = cfg.section("estimate")
    _check_keys(sec, ("estimator", "window", "options", "max_obs_per_person", "bootstrap"), "estimate")
    seed = cfg.require_seed()
    variant = sec.get("estimator", "ParentalQuadFE")
    window = _window(sec.get("window"))
    spec = estimator_spec(variant, sec.get("options"))
    panel, _ = cfg.panel.load(seed)
    rows = [_row(estimate_benchmark(panel))]
    est = estimate_cell(panel, variant, window, spec, seed, sec.get("max_obs_per_person"), int(sec.get("bootstrap", 0)))
    row = _row(est)
    row["se_bootstrap"] = est.se_bootstrap
    rows.append(row)
    frame = pd.DataFrame(rows)
    return tables.emit(frame, cfg.out, "estimate", cfg.formats), [], {}


def _aggregate(window, variant, ests: list, benches: list) -> dict:
    slopes = np.array([e.slope for e in ests])
    get = lambda attr: np.array([np.nan if getattr(e, attr) is None else getattr(e, attr) for e in ests], dtype=float)  # noqa: E731
    nan = float("nan")
    return {
        "window": str(window),
        "estimator": variant,
        "repetitions": len(ests),
        "slope": float(slopes.mean()) if len(ests) else nan,
        "slope_sd": float(slopes.std(ddof=1)) if len(ests) > 1 else nan,
        "se": float(get("se").mean()) if len(ests) else nan,
        "r2_first_step_lifetime": float(np.nanmean(get("r2_first_step_lifetime"))) if len(ests) and np.isfinite(get("r2_first_step_lifetime")).any() else nan,
        "r2_second_step": float(get("r2_second_step").mean()) if len(ests) else nan,
        "n_persons": int(round(np.mean([e.n_persons for e in ests]))) if len(ests) else 0,
        "benchmark": float(np.mean(benches)) if benches else nan,
    }


def cmd_grid(cfg: RunConfig):
    grid = GridSpec.from_dict(cfg.section("grid"))
    seed = cfg.require_seed()
    specs = {v: grid.spec(v) for v in grid.estimators}
    cells = [(w, v) for w in grid.windows for v in grid.estimators]
    collected = {c: [] for c in cells}
    benches = {c: [] for c in cells}
    errors = []
    resample = grid.subsample_fraction < 1
    base = cfg.panel.load(seed)[0] if (resample or not cfg.panel.stochastic) else None
    for r in range(grid.repetitions):
        s = rep_seed(seed, r)
        if resample:
            panel = sample_persons(base, grid.subsample_fraction, seed, r)
        elif base is not None:
            panel = base
        else:
            panel = cfg.panel.load(s)[0]
        try:
            bench = estimate_benchmark(panel).slope
        except Exception:
            bench = None
        tasks = [((w, v), (lambda w=w, v=v: estimate_cell(panel, v, w, specs[v], s, grid.max_obs_per_person)))
                 for w, v in cells]
        for key, est, err in run_cells(tasks):
            if err is not None:
                errors.append(_error({"window": key[0], "estimator": key[1], "repetition": r, "seed": s}, err))
                continue
            collected[key].append(est)
            if bench is not None:
                benches[key].append(bench)
    frame = pd.DataFrame([_aggregate(w, v, collected[(w, v)], benches[(w, v)]) for w, v in cells])
    files = tables.emit(frame, cfg.out, "grid", cfg.formats, tables.grid_markdown(frame))
    return files, errors, {"repetitions": grid.repetitions, "subsample_fraction": grid.subsample_fraction}


def cmd_geiv(cfg: RunConfig):
    sec = cfg.section("geiv")
    _check_keys(sec, ("ages",), "geiv")
    seed = cfg.require_seed() if cfg.panel.stochastic else (cfg.seed or 0)
    panel, _ = cfg.panel.load(seed)
    ages = np.arange(sec["ages"][0], sec["ages"][1] + 1) if "ages" in sec else None
    res = geiv_diagnostics(panel, ages)
    frame = res.to_frame()
    frame["benchmark"] = res.benchmark
    md = tables.frame_markdown(frame.drop(columns=["benchmark"]))
    md += f"\nBenchmark IGE: {tables.fmt_cell(res.benchmark)}. "
    md += f"lambda reaches 1 at age {tables.fmt_cell(res.t_star, 1)}.\n" if res.t_star is not None else "lambda never reaches 1.\n"
    files = tables.emit(frame, cfg.out, "geiv", cfg.formats, md)
    return files, [], {"benchmark": res.benchmark, "t_star": res.t_star}


def cmd_creedy(cfg: RunConfig):
    sec = cfg.section("creedy")
    _check_keys(sec, ("grouping", "mode", "observed_ages", "target_ages"), "creedy")
    seed = cfg.require_seed() if cfg.panel.stochastic else (cfg.seed or 0)
    panel, _ = cfg.panel.load(seed)
    lo, hi = sec.get("observed_ages", (panel.age_min, panel.age_max))
    targets = sec.get("target_ages")
    targets = np.arange(targets[0], targets[1] + 1) if targets is not None else None
    model = creedy_fit(panel, sec.get("grouping", "educ_group"), sec.get("mode", "parametric"))
    bench = estimate_benchmark(panel).slope
    tasks = [(a, (lambda a=a: creedy_estimate(panel, model, a, targets))) for a in range(lo, hi + 1)]
    rows, errors = [], []
    for age, est, err in run_cells(tasks):
        if err is not None:
            errors.append(_error({"observed_age": age}, err))
            continue
        rows.append({"observed_age": age, "slope": est.slope, "se": est.se, "benchmark": bench,
                     "bias": est.slope - bench, "r2_first_step_lifetime": est.r2_first_step_lifetime,
                     "n_persons": est.n_persons})
    frame = pd.DataFrame(rows, columns=["observed_age", "slope", "se", "benchmark", "bias",
                                        "r2_first_step_lifetime", "n_persons"])
    return tables.emit(frame, cfg.out, "creedy", cfg.formats), errors, {"mode": model.mode}


DEFAULT_TRENDS_VARIANTS = (
    {"name": "Baseline", "parent_income_degree": 0, "parent_educ": False, "cohort_interaction": False},
    {"name": "Parental", "cohort_interaction": False},
    {"name": "CohortFE"},
    {"name": "CohortNoFE", "fe": False},
)


def cmd_trends(cfg: RunConfig):
    sec = cfg.section("trends")
    _check_keys(sec, ("cohort_groups", "direct_window", "variants"), "trends")
    seed = cfg.require_seed() if cfg.panel.stochastic else (cfg.seed or 0)
    panel, _ = cfg.panel.load(seed)
    groups = tuple(tuple(g) for g in sec["cohort_groups"]) if "cohort_groups" in sec else decade_groups(panel)
    direct_window = _window(sec.get("direct_window"), "25-30")
    variants = sec.get("variants", DEFAULT_TRENDS_VARIANTS)
    allowed = {f.name for f in fields(TrendsSpec)}
    tasks = [("DirectPooled", lambda: direct_by_group(panel, groups, AgeWindow(panel.age_min, panel.age_max))),
             (f"Direct{direct_window}", lambda: direct_by_group(panel, groups, direct_window))]
    for v in variants:
        v = dict(v)
        name = v.pop("name", None)
        if not name:
            raise ConfigError("every trends variant needs a name")
        _check_keys(v, allowed, f"trends.variants.{name}")
        spec = TrendsSpec(**v)
        tasks.append((name, lambda spec=spec: estimate_trends(panel, groups, spec).estimates))
    rows, errors, flags = [], [], []
    for name, ests, err in run_cells(tasks):
        if err is not None:
            errors.append(_error({"estimator": name}, err))
            continue
        for label, est in ests.items():
            if est.flags:
                flags.append(f"{name} {label}: {'; '.join(est.flags)}")
            rows.append({"estimator": name, "cohort_group": label, "slope": est.slope, "se": est.se,
                         "truth": est.extra.get("truth_slope", np.nan), "n_persons": est.n_persons,
                         "r2_second_step": est.r2_second_step, "extrapolated": bool(est.extra.get("extrapolated", False))})
    frame = pd.DataFrame(rows, columns=["estimator", "cohort_group", "slope", "se", "truth", "n_persons",
                                        "r2_second_step", "extrapolated"])
    md = tables.wide_markdown(frame, "cohort_group", "estimator", "slope", "se") if len(frame) else None
    return tables.emit(frame, cfg.out, "trends", cfg.formats, md), errors, {"flags": flags}


DEFAULT_LASSO_COLUMNS = (
    {"name": "Parental Quadratic", "kind": "parametric"},
    {"name": "Lasso 0.01", "lam": 0.01},
    {"name": "Lasso 0.001", "lam": 0.001},
    {"name": "Lasso 0.0001", "lam": 0.0001},
    {"name": "Lasso 0.00001", "lam": 0.00001},
    {"name": "Lasso 0.01 (not pen.)", "lam": 0.01, "parental_unpenalized": True},
)
LASSO_KEYS = ("name", "kind", "lam", "relative", "alpha", "parental_unpenalized", "postselection", "cv_folds",
              "max_iter", "tol")


def _lasso_column(panel, col: dict, window: AgeWindow, seed: int, spec_options) -> dict:
    if col.get("kind", "lasso") == "parametric":
        est = estimate_lifecycle(panel, estimator_spec("ParentalQuadFE", spec_options), window, seed=seed)
        k = est.extra["n_first_step_vars"]
        return {"slope": est.slope, "se": est.se, "lam": np.nan, "# vars": k, "# vars selected": k,
                "n_persons": est.n_persons}
    unpen = frozenset(PARENTAL_GROWTH_TERMS) if col.get("parental_unpenalized", False) else frozenset()
    config = PenaltyConfig(lam=float(col.get("lam", 0.01)), alpha=float(col.get("alpha", 1.0)),
                           relative=bool(col.get("relative", True)), unpenalized=unpen,
                           max_iter=int(col.get("max_iter", 100_000)), tol=float(col.get("tol", 1e-12)))
    est = ml_lifecycle_estimate(panel, window, config, seed=seed, postselection=bool(col.get("postselection", False)),
                                cv_folds=col.get("cv_folds"))
    return {"slope": est.slope, "se": est.se, "lam": est.extra["lam_relative"] if config.relative else est.extra["lam"],
            "# vars": est.extra["n_candidates"], "# vars selected": est.extra["n_selected"],
            "n_persons": est.n_persons}


def cmd_lasso(cfg: RunConfig):
    sec = cfg.section("lasso")
    _check_keys(sec, ("window", "columns", "options"), "lasso")
    seed = cfg.require_seed()
    window = _window(sec.get("window"), "25-27")
    columns = [dict(c) for c in sec.get("columns", DEFAULT_LASSO_COLUMNS)]
    for c in columns:
        _check_keys(c, LASSO_KEYS, "lasso.columns")
        if "name" not in c:
            raise ConfigError("every lasso column needs a name")
    panel, _ = cfg.panel.load(seed)
    bench = estimate_benchmark(panel)
    rows = [{"column": "Lifetime", "slope": bench.slope, "se": bench.se, "lam": np.nan, "# vars": np.nan,
             "# vars selected": np.nan, "n_persons": bench.n_persons}]
    tasks = [(c["name"], (lambda c=c: _lasso_column(panel, c, window, seed, sec.get("options")))) for c in columns]
    errors = []
    for name, res, err in run_cells(tasks):
        if err is not None:
            errors.append(_error({"column": name, "window": window}, err))
            continue
        rows.append({"column": name, **res})
    frame = pd.DataFrame(rows, columns=["column", "slope", "se", "lam", "# vars", "# vars selected", "n_persons"])
    md = tables.columns_markdown(frame, "column", [
        (f"Age {window}", "slope", "num"), ("", "se", "paren"), ("λ", "lam", "lam"),
        ("# vars", "# vars", "int"), ("# vars selected", "# vars selected", "int"),
    ])
    return tables.emit(frame, cfg.out, "lasso", cfg.formats, md), errors, {"window": str(window)}


def cmd_growth(cfg: RunConfig):
    sec = cfg.section("growth")
    _check_keys(sec, ("age_breaks", "controls", "floor_share", "parent_scale", "father_windows",
                      "father_controls"), "growth")
    seed = cfg.require_seed() if cfg.panel.stochastic else (cfg.seed or 0)
    want_fathers = "father_windows" in sec
    children, fathers = cfg.panel.load(seed, with_fathers=want_fathers)
    kw = {k: sec[k] for k in ("age_breaks", "controls", "floor_share", "parent_scale") if k in sec}
    grad = growth_gradient_table(children, **kw)
    files = tables.emit(grad.rows, cfg.out, "growth_gradient", cfg.formats)
    notes = {"omitted_bins": grad.omitted}
    if want_fathers:
        windows = tuple(_window(w) for w in sec["father_windows"])
        gog = growth_on_growth_table(children, fathers, windows, bool(sec.get("father_controls", False)))
        files += tables.emit(gog.rows, cfg.out, "growth_on_growth", cfg.formats)
        notes["omitted_windows"] = gog.omitted
    return files, [], notes


HANDLERS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "grid": cmd_grid,
    "geiv": cmd_geiv,
    "creedy": cmd_creedy,
    "trends": cmd_trends,
    "lasso": cmd_lasso,
    "growth": cmd_growth,
}
HELP = {
    "simulate": "write a synthetic panel as persons.csv and incomes.csv",
    "estimate": "one estimator on one window, next to the benchmark",
    "grid": "windows by estimators, optionally repeated over seeds or subsamples",
    "geiv": "per-age projection slopes of annual on lifetime and parental income",
    "creedy": "rank-preserving rescaling estimates by observed age",
    "trends": "per-cohort-group estimates from direct and lifecycle estimators",
    "lasso": "penalized first steps over the wide candidate set",
    "growth": "parental gradients in income growth by age",
}


# ------------------------------------------------------------ entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mobilab", description="Lifecycle IGE estimation and simulation tables.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="subcommand")
    for name in COMMANDS:
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("--config", required=True, help="TOML config file")
        p.add_argument("--seed", type=int, default=None, help="run seed (overrides the config)")
        p.add_argument("--out", default=None, help="output directory (overrides the config)")
        p.add_argument("--format", choices=("csv", "md"), action="append", default=None,
                       help="output format; repeat for both")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed=args.seed, out=args.out, fmt=args.format)
    except (ConfigError, OSError) as exc:
        print(f"mobilab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        files, errors, notes = HANDLERS[args.command](cfg)
    except ConfigError as exc:
        print(f"mobilab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        message = f"{type(exc).__name__}: {exc}"
        print(f"mobilab {args.command}: {message}", file=sys.stderr)
        tables.write_manifest(cfg.out, args.command, cfg.seed, [], [{"error": message}], {"failed": True})
        return EXIT_FAILED
    tables.write_manifest(cfg.out, args.command, cfg.seed, files, errors, notes)
    for e in errors:
        print(f"mobilab {args.command}: cell error: {e}", file=sys.stderr)
    return EXIT_OK if not errors else EXIT_CELLS


if __name__ == "__main__":
    sys.exit(main())

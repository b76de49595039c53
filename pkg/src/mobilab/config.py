"""Run configuration read from TOML.

A config file has top-level run settings, a ``[panel]`` table saying where the
data come from and one table per subcommand::

    seed = 7
    out = "results"
    format = ["csv", "md"]

    [panel]
    source = "simulate"        # or "csv"
    scenario = "default"
    n_persons = 20000

    [grid]
    windows = ["25-27", "25-30"]
    estimators = ["DirectAnnual", "ParentalQuadFE"]

Command-line ``--seed``, ``--out`` and ``--format`` override the file.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .estimators._base import VARIANTS, EstimatorSpec
from .income_process import SimConfig, scenario_config, simulate_families
from .panel import AgeWindow, Panel, bottom_code, load_csv, restrict_years

FORMATS = ("csv", "md")
COMMANDS = ("simulate", "estimate", "grid", "geiv", "creedy", "trends", "lasso", "growth")


class ConfigError(ValueError):
    """The configuration is incomplete or inconsistent."""


def _tuplify(value):
    # TOML arrays arrive as lists; the frozen dataclasses expect tuples
    if isinstance(value, list):
        return tuple(_tuplify(v) for v in value)
    if isinstance(value, dict):
        return {k: _tuplify(v) for k, v in value.items()}
    return value


def rep_seed(seed: int, rep: int) -> int:
    """Seed for repetition ``rep``; repetition 0 runs on ``seed`` itself."""
    if rep == 0:
        return int(seed)
    return int(np.random.SeedSequence([int(seed), int(rep)]).generate_state(1, np.uint32)[0])


@dataclass
class PanelSource:
    """Where a command gets its panel.

    ``source = "simulate"`` builds a ``SimConfig`` from ``scenario`` plus any
    ``hip``/``link`` overrides and the simulation sizes. ``source = "csv"``
    reads ``persons`` and ``incomes`` paths (relative to the config file).
    ``min_year``/``max_year`` and ``bottom_code`` are applied afterwards.
    """

    source: str = "simulate"
    scenario: str = "default"
    n_persons: int | None = None
    cohorts: tuple | None = None
    hip: dict = field(default_factory=dict)
    link: dict = field(default_factory=dict)
    extras: bool = True
    persons: Path | None = None
    incomes: Path | None = None
    min_year: int | None = None
    max_year: int | None = None
    bottom_code: float | None = None

    @classmethod
    def from_dict(cls, d: Mapping[str, Any], base_dir: Path) -> "PanelSource":
        d = _tuplify(dict(d))
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown [panel] keys: {sorted(unknown)}")
        src = cls(**d)
        if src.source not in ("simulate", "csv"):
            raise ConfigError("panel.source must be 'simulate' or 'csv'")
        if src.source == "csv":
            if src.persons is None or src.incomes is None:
                raise ConfigError("csv panel source needs 'persons' and 'incomes' paths")
            src.persons = base_dir / src.persons
            src.incomes = base_dir / src.incomes
        return src

    @property
    def stochastic(self) -> bool:
        return self.source == "simulate"

    def sim_config(self, seed: int) -> SimConfig:
        over: dict = {"seed": int(seed), "extras": self.extras}
        if self.n_persons is not None:
            over["n_persons"] = int(self.n_persons)
        if self.cohorts is not None:
            over["cohorts"] = tuple(self.cohorts)
        if self.hip:
            hip = dict(self.hip)
            for key in ("pi", "phi"):
                # TOML table keys are strings; year-varying loadings are keyed by year
                if isinstance(hip.get(key), Mapping):
                    hip[key] = {int(y): float(v) for y, v in hip[key].items()}
            over["hip"] = hip
        if self.link:
            over["link"] = dict(self.link)
        try:
            return scenario_config(self.scenario, **over)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid simulation settings: {exc}") from exc

    def _post(self, panel: Panel) -> Panel:
        if self.min_year is not None or self.max_year is not None:
            panel = restrict_years(panel, self.min_year, self.max_year)
        if self.bottom_code is not None:
            panel = bottom_code(panel, self.bottom_code)
        return panel

    def load(self, seed: int, with_fathers: bool = False) -> tuple[Panel, Panel | None]:
        """Return ``(children, fathers)``; fathers only for simulated panels."""
        if self.source == "csv":
            if with_fathers:
                raise ConfigError("father profiles are only available for simulated panels")
            panel, _ = load_csv(self.persons, self.incomes)
            return self._post(panel), None
        children, fathers = simulate_families(self.sim_config(seed), with_fathers=with_fathers)
        return self._post(children), fathers


@dataclass
class RunConfig:
    """A parsed config file.

    Attributes
    ----------
    command : dict
        Subcommand tables keyed by command name (raw, validated on use).
    """

    seed: int | None
    out: Path
    formats: tuple
    panel: PanelSource
    commands: dict
    base_dir: Path

    def section(self, name: str) -> dict:
        return _tuplify(dict(self.commands.get(name, {})))

    def require_seed(self) -> int:
        if self.seed is None:
            raise ConfigError("a seed is required (config 'seed' or --seed)")
        return int(self.seed)


def _formats(value) -> tuple:
    if isinstance(value, str):
        value = [value]
    out = tuple("md" if v in ("md", "markdown") else v for v in value)
    bad = [v for v in out if v not in FORMATS]
    if bad or not out:
        raise ConfigError(f"format must be csv and/or md, got {value!r}")
    return out


def parse_config(data: Mapping[str, Any], base_dir: Path | str = ".") -> RunConfig:
    base_dir = Path(base_dir)
    data = dict(data)
    known = {"seed", "out", "format", "panel", *COMMANDS}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    seed = data.get("seed")
    if seed is not None and (not isinstance(seed, int) or seed < 0):
        raise ConfigError("seed must be a non-negative integer")
    return RunConfig(
        seed=seed,
        out=base_dir / data.get("out", "out"),
        formats=_formats(data.get("format", "csv")),
        panel=PanelSource.from_dict(data.get("panel", {}), base_dir),
        commands={k: data[k] for k in COMMANDS if k in data},
        base_dir=base_dir,
    )


def load_config(path, seed: int | None = None, out=None, fmt=None) -> RunConfig:
    """Read a TOML config; non-None arguments override the file's values."""
    path = Path(path)
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    cfg = parse_config(data, path.parent)
    if seed is not None:
        if seed < 0:
            raise ConfigError("seed must be non-negative")
        cfg.seed = seed
    if out is not None:
        cfg.out = Path(out)
    if fmt is not None:
        cfg.formats = _formats(fmt)
    return cfg


# ------------------------------------------------------------------ grid


SPEC_FIELDS = tuple(f for f in EstimatorSpec.__dataclass_fields__ if f != "variant")


def estimator_spec(variant: str, options: Mapping[str, Any] | None = None) -> EstimatorSpec:
    """``EstimatorSpec`` for ``variant`` with shared option overrides."""
    options = dict(options or {})
    unknown = set(options) - set(SPEC_FIELDS)
    if unknown:
        raise ConfigError(f"unknown estimator options: {sorted(unknown)}")
    if variant == "ParentalQuadNoFE":
        options.pop("fe", None)
    try:
        return EstimatorSpec(variant, **_tuplify(options))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


@dataclass
class GridSpec:
    """Windows by estimators, optionally repeated.

    ``repetitions`` above one repeats every cell on fresh panels (simulated
    sources, one seed per repetition) or, with ``subsample_fraction`` below
    one, on random person subsamples of one panel; cells then report the mean
    and SD of the estimates.
    """

    windows: tuple
    estimators: tuple
    repetitions: int = 1
    subsample_fraction: float = 1.0
    options: dict = field(default_factory=dict)
    max_obs_per_person: int | None = None

    def __post_init__(self):
        if not self.windows or not self.estimators:
            raise ConfigError("grid needs at least one window and one estimator")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be at least 1")
        if not 0 < self.subsample_fraction <= 1:
            raise ConfigError("subsample_fraction must be in (0, 1]")
        bad = [e for e in self.estimators if e not in VARIANTS or e == "Trends"]
        if bad:
            raise ConfigError(f"unknown or non-windowed estimators: {bad}")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "GridSpec":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown [grid] keys: {sorted(unknown)}")
        if "windows" not in d or "estimators" not in d:
            raise ConfigError("grid needs 'windows' and 'estimators'")
        try:
            windows = tuple(AgeWindow.parse(w) for w in d.pop("windows"))
        except ValueError as exc:
            raise ConfigError(f"bad window: {exc}") from exc
        return cls(windows=windows, estimators=tuple(d.pop("estimators")), **d)

    def spec(self, variant: str) -> EstimatorSpec:
        return estimator_spec(variant, self.options)

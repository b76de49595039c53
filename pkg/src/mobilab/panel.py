"""Panel data model, CSV input/output and sample-construction transforms.

A :class:`Panel` pairs a persons table (one row per individual) with an
incomes table (one row per person-year, incomes in levels). Transforms never
mutate their input: each returns a new panel whose ``provenance`` records the
chain of operations that produced it.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable

import numpy as np
import pandas as pd

from .rng import substream

PERSON_REQUIRED = (
    "person_id",
    "family_id",
    "cohort",
    "sex",
    "educ_group",
    "parent_educ_group",
    "parent_log_income",
)
PERSON_OPTIONAL = ("true_log_lifetime", "group_tag")
INCOME_COLUMNS = ("person_id", "year", "age", "income_level")

_INT_PERSON = ("cohort", "sex", "educ_group", "parent_educ_group")


class PanelError(ValueError):
    """Raised when a panel violates its invariants or a transform cannot proceed."""


@dataclass(frozen=True)
class AgeWindow:
    """Inclusive age range ``[lo, hi]``."""

    lo: int
    hi: int

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError(f"age window lo={self.lo} exceeds hi={self.hi}")

    @property
    def ages(self) -> np.ndarray:
        return np.arange(self.lo, self.hi + 1)

    def __str__(self) -> str:
        return f"{self.lo}-{self.hi}"

    @classmethod
    def parse(cls, text: str | Iterable[int]) -> "AgeWindow":
        """Build from ``"25-27"`` or a ``(lo, hi)`` pair."""
        if isinstance(text, str):
            lo, hi = text.split("-")
            return cls(int(lo), int(hi))
        lo, hi = text
        return cls(int(lo), int(hi))


@dataclass(frozen=True)
class Panel:
    """Persons plus person-year income observations.

    Attributes
    ----------
    persons : pandas.DataFrame
        One row per person with the columns in ``PERSON_REQUIRED`` and
        optionally ``true_log_lifetime``, ``group_tag`` and extra covariates.
    incomes : pandas.DataFrame
        Columns ``person_id, year, age, income_level`` sorted by person and age.
    age_min, age_max : int
        Declared age bounds.
    n_educ_groups : int
        Number of education groups; ``educ_group`` lies in ``[0, n)``.
    provenance : tuple
        ``(transform_name, details)`` pairs, oldest first.
    """

    persons: pd.DataFrame
    incomes: pd.DataFrame
    age_min: int = 25
    age_max: int = 58
    n_educ_groups: int = 4
    provenance: tuple = field(default=())

    # cached_property writes to the instance dict, which a frozen dataclass allows
    @cached_property
    def person_index(self) -> pd.Index:
        return pd.Index(self.persons["person_id"].to_numpy())

    @cached_property
    def obs_codes(self) -> np.ndarray:
        """Row position in ``persons`` for every income observation."""
        codes = self.person_index.get_indexer(self.incomes["person_id"].to_numpy())
        if (codes < 0).any():
            raise PanelError("income observation refers to unknown person_id")
        return codes.astype(np.intp)

    @property
    def n_persons(self) -> int:
        return len(self.persons)

    @property
    def n_obs(self) -> int:
        return len(self.incomes)

    def log_income(self) -> np.ndarray:
        """Log of ``income_level``; zero or negative incomes are a hard error."""
        level = self.incomes["income_level"].to_numpy(dtype=np.float64)
        if (level <= 0).any():
            raise PanelError(
                f"{int((level <= 0).sum())} nonpositive incomes; apply bottom_code first"
            )
        return np.log(level)

    def frame(self, columns: Iterable[str] | None = None) -> pd.DataFrame:
        """Person-year rows joined with person covariates (``columns`` or all)."""
        cols = [c for c in self.persons.columns if c != "person_id"]
        if columns is not None:
            wanted = set(columns)
            cols = [c for c in cols if c in wanted]
        out = self.incomes.reset_index(drop=True).copy()
        codes = self.obs_codes
        for c in cols:
            out[c] = self.persons[c].to_numpy()[codes]
        return out

    def with_(self, step: str, details: dict | None = None, **changes) -> "Panel":
        return replace(self, provenance=self.provenance + ((step, details or {}),), **changes)

    def validate(self) -> None:
        """Check all panel invariants, raising :class:`PanelError` on failure."""
        missing = [c for c in PERSON_REQUIRED if c not in self.persons.columns]
        if missing:
            raise PanelError(f"persons table lacks columns {missing}")
        if self.persons["person_id"].duplicated().any():
            raise PanelError("person_id not unique")
        eg = self.persons["educ_group"].to_numpy()
        if len(eg) and (eg.min() < 0 or eg.max() >= self.n_educ_groups):
            raise PanelError("educ_group outside declared group count")
        _ = self.obs_codes
        if self.incomes.duplicated(["person_id", "age"]).any():
            raise PanelError("duplicate (person_id, age) observation")
        ages = self.incomes["age"].to_numpy()
        if len(ages) and (ages.min() < self.age_min or ages.max() > self.age_max):
            raise PanelError("observation age outside panel bounds")
        if (self.incomes["income_level"].to_numpy() < 0).any():
            raise PanelError("negative income_level")


def make_panel(persons, incomes, age_min=25, age_max=58, n_educ_groups=4, provenance=()):
    """Assemble and validate a panel; incomes are sorted by person then age."""
    persons = persons.reset_index(drop=True)
    order_index = pd.Index(persons["person_id"].to_numpy())
    pos = order_index.get_indexer(incomes["person_id"].to_numpy())
    key = np.lexsort((incomes["age"].to_numpy(), pos))
    incomes = incomes.iloc[key].reset_index(drop=True)
    panel = Panel(persons, incomes, int(age_min), int(age_max), int(n_educ_groups), tuple(provenance))
    panel.validate()
    return panel


# --------------------------------------------------------------------------- CSV


@dataclass
class LoadReport:
    """Row-level problems found while reading CSV files."""

    errors: list = field(default_factory=list)

    def add(self, path, line, message):
        self.errors.append((str(path), int(line), message))

    def __bool__(self):
        return bool(self.errors)


def _read_rows(path, required, report, strict, int_cols, float_cols):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in required if c not in header]
        if missing:
            raise PanelError(f"{path}: missing required column(s) {missing}")
        rows, lines = [], []
        for row in reader:
            line = reader.line_num
            try:
                for c in int_cols:
                    if c in row and row[c] != "":
                        row[c] = int(row[c])
                for c in float_cols:
                    if c in row:
                        row[c] = float(row[c]) if row[c] != "" else math.nan
            except (TypeError, ValueError) as exc:
                if strict:
                    raise PanelError(f"{path}:{line}: {exc}") from None
                report.add(path, line, str(exc))
                continue
            rows.append(row)
            lines.append(line)
    return header, rows, lines


def _coerce_id(values: pd.Series) -> pd.Series:
    try:
        return values.astype(np.int64)
    except (TypeError, ValueError):
        return values.astype(str)


def load_csv(
    persons_path,
    incomes_path,
    age_min: int | None = None,
    age_max: int | None = None,
    n_educ_groups: int = 4,
    strict: bool = True,
) -> tuple[Panel, LoadReport]:
    """Read a panel from the two-file CSV schema.

    Parameters
    ----------
    persons_path, incomes_path : path-like
        Files with headers ``person_id,family_id,cohort,sex,educ_group,
        parent_educ_group,parent_log_income[,true_log_lifetime,...]`` and
        ``person_id,year,age,income_level``. Extra person columns are kept.
    age_min, age_max : int, optional
        Panel bounds; default to the observed age range.
    strict : bool
        If true, an unparseable number raises; otherwise the row is skipped and
        recorded in the returned report.

    Returns
    -------
    (Panel, LoadReport)
    """
    report = LoadReport()
    header, prow, plines = _read_rows(
        persons_path, PERSON_REQUIRED, report, strict, _INT_PERSON,
        ("parent_log_income", "true_log_lifetime"),
    )
    _, irow, ilines = _read_rows(
        incomes_path, INCOME_COLUMNS, report, strict, ("year", "age"), ("income_level",)
    )
    persons = pd.DataFrame(prow, columns=header)
    for c in header:
        if c in _INT_PERSON:
            persons[c] = persons[c].astype(np.int64)
        elif c in ("parent_log_income", "true_log_lifetime"):
            persons[c] = persons[c].astype(np.float64)
        elif c not in ("person_id", "family_id", "group_tag"):
            persons[c] = _maybe_numeric(persons[c])
    if "group_tag" in persons:
        persons["group_tag"] = persons["group_tag"].fillna("").astype(str)
    persons["person_id"] = _coerce_id(persons["person_id"])
    persons["family_id"] = _coerce_id(persons["family_id"])
    incomes = pd.DataFrame(irow, columns=list(INCOME_COLUMNS))
    incomes["person_id"] = _coerce_id(incomes["person_id"]).astype(persons["person_id"].dtype)
    incomes["year"] = incomes["year"].astype(np.int64)
    incomes["age"] = incomes["age"].astype(np.int64)
    incomes["income_level"] = incomes["income_level"].astype(np.float64)

    dup = incomes.duplicated(["person_id", "age"], keep=False).to_numpy()
    if dup.any():
        where = np.flatnonzero(dup)[:2]
        raise PanelError(
            "duplicate (person_id, age) at lines "
            + " and ".join(str(ilines[i]) for i in where)
        )
    dup = persons["person_id"].duplicated(keep=False).to_numpy()
    if dup.any():
        where = np.flatnonzero(dup)[:2]
        raise PanelError("duplicate person_id at lines " + " and ".join(str(plines[i]) for i in where))
    lo = int(incomes["age"].min()) if age_min is None else age_min
    hi = int(incomes["age"].max()) if age_max is None else age_max
    panel = make_panel(persons, incomes, lo, hi, n_educ_groups, (("load_csv", {"persons": str(persons_path)}),))
    return panel, report


def _maybe_numeric(col: pd.Series) -> pd.Series:
    try:
        return pd.to_numeric(col)
    except (TypeError, ValueError):
        return col


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        if math.isnan(v):
            return ""
        return repr(float(v))
    return str(v)


def frame_to_csv(df: pd.DataFrame, path) -> None:
    """Write ``df`` with floats at full round-trip precision and NaN as empty."""
    path = Path(path)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(df.columns)
    cols = [df[c].to_numpy() for c in df.columns]
    for row in zip(*cols):
        writer.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue(), encoding="utf-8")


def write_csv(panel: Panel, persons_path, incomes_path) -> None:
    """Write ``panel`` in the two-file CSV schema (17 significant digits for floats)."""
    persons = panel.persons.copy()
    if "group_tag" in persons:
        persons["group_tag"] = persons["group_tag"].fillna("")
    frame_to_csv(persons, persons_path)
    frame_to_csv(panel.incomes[list(INCOME_COLUMNS)], incomes_path)


# -------------------------------------------------------------------- transforms


def bottom_code(panel: Panel, floor: float) -> Panel:
    """Replace incomes below ``floor`` by ``floor``; the affected count is recorded."""
    if not floor > 0:
        raise ValueError("floor must be positive")
    level = panel.incomes["income_level"].to_numpy()
    low = level < floor
    incomes = panel.incomes.copy()
    incomes["income_level"] = np.where(low, float(floor), level)
    return panel.with_("bottom_code", {"floor": floor, "affected": int(low.sum())}, incomes=incomes)


def _drop_empty_persons(panel: Panel, incomes: pd.DataFrame):
    keep = panel.persons["person_id"].isin(incomes["person_id"].unique())
    return panel.persons[keep.to_numpy()].reset_index(drop=True), int((~keep).sum())


def restrict_window(panel: Panel, window: AgeWindow) -> Panel:
    """Keep observations with age in ``window``; persons left empty are dropped."""
    if window.lo < panel.age_min or window.hi > panel.age_max:
        raise PanelError(f"window {window} outside panel bounds {panel.age_min}-{panel.age_max}")
    age = panel.incomes["age"].to_numpy()
    incomes = panel.incomes[(age >= window.lo) & (age <= window.hi)].reset_index(drop=True)
    if incomes.empty:
        raise PanelError(f"no observations in window {window}")
    persons, dropped = _drop_empty_persons(panel, incomes)
    return panel.with_(
        "restrict_window", {"window": str(window), "dropped_persons": dropped},
        persons=persons, incomes=incomes,
    )


def restrict_years(panel: Panel, min_year: int | None = None, max_year: int | None = None) -> Panel:
    """Keep observations with calendar year in ``[min_year, max_year]``."""
    year = panel.incomes["year"].to_numpy()
    mask = np.ones(len(year), dtype=bool)
    if min_year is not None:
        mask &= year >= min_year
    if max_year is not None:
        mask &= year <= max_year
    incomes = panel.incomes[mask].reset_index(drop=True)
    if incomes.empty:
        raise PanelError("no observations in year range")
    persons, dropped = _drop_empty_persons(panel, incomes)
    return panel.with_(
        "restrict_years", {"min_year": min_year, "max_year": max_year, "dropped_persons": dropped},
        persons=persons, incomes=incomes,
    )


def split_young_old(panel: Panel, threshold_age: int, mode: str = "random_assign", seed: int = 0) -> Panel:
    """Split profiles at ``threshold_age`` into young (age <= threshold) and old parts.

    Parameters
    ----------
    mode : {"random_assign", "duplicate"}
        ``random_assign`` tags each person young or old with probability 1/2 and
        keeps only the matching side. ``duplicate`` turns each person into two
        pseudo-persons, one per side; integer ids map to ``2*id`` (young) and
        ``2*id + 1`` (old), string ids gain ``":y"``/``":o"`` suffixes. The
        original id is kept in ``origin_id``.
    seed : int
        Run seed; draws come from the ``splitting`` substream.
    """
    if not panel.age_min < threshold_age < panel.age_max:
        raise PanelError("threshold_age must lie strictly inside the panel bounds")
    persons = panel.persons
    young_obs = panel.incomes["age"].to_numpy() <= threshold_age
    if mode == "random_assign":
        rng = substream(seed, "splitting", threshold_age)
        is_young = rng.random(panel.n_persons) < 0.5
        keep = young_obs == is_young[panel.obs_codes]
        incomes = panel.incomes[keep].reset_index(drop=True)
        persons = persons.copy()
        persons["group_tag"] = np.where(is_young, "young", "old")
        present = persons["person_id"].isin(incomes["person_id"].unique()).to_numpy()
        dropped = int((~present).sum())
        persons = persons[present].reset_index(drop=True)
    elif mode == "duplicate":
        ids = persons["person_id"]
        integer = pd.api.types.is_integer_dtype(ids)

        def relabel(values, young):
            if integer:
                return values * 2 + (0 if young else 1)
            return values.astype(str) + (":y" if young else ":o")

        parts_p, parts_i = [], []
        for young, tag in ((True, "young"), (False, "old")):
            p = persons.copy()
            p["origin_id"] = ids.to_numpy()
            p["person_id"] = relabel(ids, young).to_numpy()
            p["group_tag"] = tag
            inc = panel.incomes[young_obs == young].copy()
            inc["person_id"] = relabel(inc["person_id"], young).to_numpy()
            parts_p.append(p)
            parts_i.append(inc)
        persons = pd.concat(parts_p, ignore_index=True)
        incomes = pd.concat(parts_i, ignore_index=True)
        present = persons["person_id"].isin(incomes["person_id"].unique()).to_numpy()
        dropped = int((~present).sum())
        persons = persons[present].reset_index(drop=True)
    else:
        raise ValueError(f"unknown split mode {mode!r}")
    out = make_panel(persons, incomes, panel.age_min, panel.age_max, panel.n_educ_groups, panel.provenance)
    return out.with_("split_young_old", {"threshold": threshold_age, "mode": mode, "dropped_persons": dropped})


def remove_year_effects(panel: Panel) -> Panel:
    """Demean log income by calendar year, re-centred on the grand mean."""
    y = panel.log_income()
    year = panel.incomes["year"].to_numpy()
    years, codes = np.unique(year, return_inverse=True)
    means = np.bincount(codes, weights=y) / np.bincount(codes)
    adj = y - means[codes] + y.mean()
    incomes = panel.incomes.copy()
    incomes["income_level"] = np.exp(adj)
    return panel.with_("remove_year_effects", {"n_years": len(years)}, incomes=incomes)


def sample_persons(panel: Panel, fraction: float, seed: int, rep: int = 0) -> Panel:
    """Random subsample of persons without replacement (``sampling`` substream)."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    rng = substream(seed, "sampling", rep)
    n = max(1, int(round(fraction * panel.n_persons)))
    pick = np.sort(rng.choice(panel.n_persons, size=n, replace=False))
    persons = panel.persons.iloc[pick].reset_index(drop=True)
    incomes = panel.incomes[np.isin(panel.obs_codes, pick)].reset_index(drop=True)
    return panel.with_("sample_persons", {"fraction": fraction, "rep": rep}, persons=persons, incomes=incomes)


def build_parent_income(
    fathers: Panel,
    n_obs_max: int = 5,
    age_range: tuple[int, int] = (40, 55),
    target_age: int = 50,
    seed: int = 0,
    cohort_width: int = 10,
) -> pd.DataFrame:
    """Predict each father's log income at ``target_age`` from a few observations.

    Up to ``n_obs_max`` observations in ``age_range`` are drawn per father
    (``parent-selection`` substream). A pooled OLS of log income on father
    fixed effects plus a quadratic age profile for every cohort-group by
    education cell is then evaluated at ``target_age``.

    Returns
    -------
    pandas.DataFrame
        Indexed by father ``person_id`` with columns ``predicted`` and
        ``fallback`` (true where fewer than two observations were available and
        the person mean was used).
    """
    from .regression import Cat, DesignSpec, Interact, Poly, fit_frame, predict

    lo, hi = age_range
    age = fathers.incomes["age"].to_numpy()
    in_range = np.flatnonzero((age >= lo) & (age <= hi))
    codes = fathers.obs_codes[in_range]
    rng = substream(seed, "parent-selection")
    # random priority per observation; keep the n_obs_max smallest within each father
    priority = rng.random(len(in_range))
    order = np.lexsort((priority, codes))
    sorted_codes = codes[order]
    starts = np.r_[0, np.flatnonzero(np.diff(sorted_codes)) + 1]
    rank = np.arange(len(order)) - np.repeat(starts, np.diff(np.r_[starts, len(order)]))
    chosen = np.sort(in_range[order[rank < n_obs_max]])
    sub = fathers.with_(
        "parent_selection", {"n_obs_max": n_obs_max},
        incomes=fathers.incomes.iloc[chosen].reset_index(drop=True),
    )
    frame = sub.frame()
    frame["log_income"] = sub.log_income()
    frame["cell"] = _cell(frame, cohort_width)
    counts = frame.groupby("person_id").size()
    enough = counts.index[counts >= 2]
    est = frame[frame["person_id"].isin(enough)].reset_index(drop=True)
    # one quadratic age profile per cohort-group by education cell
    spec = DesignSpec(
        terms=(Poly("age", 2), Interact(Poly("age", 2), Cat("cell"))),
        fe="person",
        center_age=target_age,
    )
    out = pd.DataFrame(index=fathers.person_index.rename("person_id"))
    out["predicted"] = np.nan
    out["fallback"] = True
    if len(est):
        res = fit_frame(est, spec, robust=False)
        targets = fathers.persons[fathers.persons["person_id"].isin(enough)].copy()
        targets["cell"] = _cell(targets, cohort_width)
        targets["age"] = target_age
        pred = predict(res, targets)
        out.loc[targets["person_id"].to_numpy(), "predicted"] = pred
        out.loc[targets["person_id"].to_numpy(), "fallback"] = False
    means = frame.groupby("person_id")["log_income"].mean()
    few = out.index[out["fallback"].to_numpy()]
    have = few.intersection(means.index)
    out.loc[have, "predicted"] = means.loc[have].to_numpy()
    return out


def _cell(frame: pd.DataFrame, cohort_width: int) -> np.ndarray:
    group = frame["cohort"].to_numpy() // cohort_width
    return group * 100 + frame["educ_group"].to_numpy()

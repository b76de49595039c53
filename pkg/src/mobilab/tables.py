"""Table emission: full-precision CSV, 3-decimal markdown and a JSON manifest.

Every writer is deterministic: row order comes from the caller, floats are
written with round-trip precision in CSV and the manifest has sorted keys
and no timestamps.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .panel import frame_to_csv

DECIMALS = 3


def fmt_cell(v, decimals: int = DECIMALS) -> str:
    """Markdown cell text: floats rounded, missing values as ``-``."""
    if v is None:
        return "-"
    if isinstance(v, (bool, np.bool_)):
        return "yes" if v else "no"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        if math.isnan(v):
            return "-"
        return f"{float(v):.{decimals}f}"
    return str(v)


def markdown_table(header: Sequence[str], rows: Iterable[Sequence], align: str | None = None) -> str:
    """Pipe table from pre-formatted or raw cells (raw floats get 3 decimals)."""
    header = [str(h) for h in header]
    align = align or "l" + "r" * (len(header) - 1)
    rule = [":---" if a == "l" else "---:" for a in align]
    lines = ["| " + " | ".join(header) + " |", "| " + " | ".join(rule) + " |"]
    for r in rows:
        lines.append("| " + " | ".join(c if isinstance(c, str) else fmt_cell(c) for c in r) + " |")
    return "\n".join(lines) + "\n"


def frame_markdown(df: pd.DataFrame) -> str:
    """Generic markdown rendering of a frame, one table row per frame row."""
    return markdown_table(list(df.columns), df.itertuples(index=False, name=None))


def emit(frame: pd.DataFrame, out_dir: Path, stem: str, formats: Sequence[str], markdown: str | None = None) -> list:
    """Write ``stem.csv`` and/or ``stem.md``; returns the file names written."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if "csv" in formats:
        frame_to_csv(frame, out_dir / f"{stem}.csv")
        written.append(f"{stem}.csv")
    if "md" in formats:
        text = markdown if markdown is not None else frame_markdown(frame)
        (out_dir / f"{stem}.md").write_text(text, encoding="utf-8")
        written.append(f"{stem}.md")
    return written


def _json_default(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return None if math.isnan(v) else float(v)
    if isinstance(v, (Path,)):
        return str(v)
    if isinstance(v, (set, frozenset, tuple)):
        return sorted(v) if isinstance(v, (set, frozenset)) else list(v)
    return str(v)


def write_manifest(out_dir: Path, command: str, seed, files: Sequence[str], errors: Sequence[dict],
                   notes: dict | None = None) -> Path:
    """Write ``manifest.json`` listing outputs and per-cell errors.

    ``status`` is ``"ok"`` without errors and ``"partial"`` otherwise.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "command": command,
        "seed": seed,
        "files": list(files),
        "errors": list(errors),
        "n_errors": len(errors),
        "status": "ok" if not errors else "partial",
        "notes": notes or {},
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")
    return path


# ------------------------------------------------------------ layouts


def grid_markdown(grid: pd.DataFrame) -> str:
    """Window blocks with one column per estimator.

    Each block has the slope row labelled by the window, the persons row with
    the SE (or the SD across repetitions) in parentheses, and the two
    R-squared rows, followed by a blank separator row.
    """
    estimators = list(dict.fromkeys(grid["estimator"]))
    header = ["Age"] + estimators
    repeated = "slope_sd" in grid and grid["repetitions"].max() > 1
    rows = []
    for window, block in grid.groupby("window", sort=False):
        cells = block.set_index("estimator")
        get = lambda col: [cells[col].get(e, np.nan) for e in estimators]  # noqa: E731
        n = int(np.nanmax(cells["n_persons"].to_numpy(dtype=float))) if cells["n_persons"].notna().any() else 0
        rows.append([f"Age {window}"] + get("slope"))
        paren = get("slope_sd") if repeated else get("se")
        rows.append([f"N={n:,}"] + [f"({fmt_cell(v)})" if not pd.isna(v) else "-" for v in paren])
        rows.append(["R² 1st step"] + get("r2_first_step_lifetime"))
        rows.append(["R² 2nd step"] + get("r2_second_step"))
        rows.append([""] * len(header))
    note = "Standard deviation across repetitions in parentheses.\n" if repeated else "Robust standard errors in parentheses.\n"
    return markdown_table(header, rows[:-1]) + "\n" + note


def columns_markdown(table: pd.DataFrame, label_col: str, stat_rows: Sequence[tuple]) -> str:
    """Transpose ``table`` so each row becomes a column labelled by ``label_col``.

    ``stat_rows`` lists ``(row_label, column, style)`` with style ``"num"``,
    ``"paren"`` (value in parentheses) or ``"int"``.
    """
    header = [""] + [str(v) for v in table[label_col]]
    rows = []
    for label, col, style in stat_rows:
        vals = table[col].tolist() if col in table else [np.nan] * len(table)
        cells = []
        for v in vals:
            if v is None or (isinstance(v, float) and math.isnan(v)):
                cells.append("")
            elif style == "paren":
                cells.append(f"({fmt_cell(v)})")
            elif style == "int":
                cells.append(str(int(v)))
            elif style == "lam":
                cells.append(f"{float(v):g}")
            else:
                cells.append(fmt_cell(v))
        rows.append([label] + cells)
    return markdown_table(header, rows)


def wide_markdown(long: pd.DataFrame, row_col: str, col_col: str, value: str, paren: str | None = None) -> str:
    """Rows by ``row_col``, columns by ``col_col``; ``paren`` adds a row of SEs."""
    cols = list(dict.fromkeys(long[col_col]))
    header = [row_col] + cols
    rows = []
    for key, block in long.groupby(row_col, sort=False):
        cells = block.set_index(col_col)
        rows.append([str(key)] + [cells[value].get(c, np.nan) for c in cols])
        if paren:
            rows.append([""] + [f"({fmt_cell(cells[paren].get(c))})" if c in cells.index else "-" for c in cols])
    return markdown_table(header, rows)

"""Pivot run reports into architecture x window-size (or ordering) comparison tables."""

from __future__ import annotations

import csv
import json
from pathlib import Path

MISSING = "—"


def format_cell(acc: float, mcc: float) -> str:
    return f"{acc:.6f} ({mcc:.6f})"


def collect_reports(results_dir) -> list[dict]:
    root = Path(results_dir)
    paths = sorted(root.rglob("report.json"))
    if not paths:
        raise FileNotFoundError(f"no report.json found under {root}")
    return [json.loads(p.read_text(encoding="utf-8")) for p in paths]


def _column_key(reports: list[dict]) -> str:
    orderings = {r["config"]["ordering"]["kind"] for r in reports}
    windows = {r["config"]["window"]["window_s"] for r in reports}
    return "ordering" if len(orderings) > 1 and len(windows) == 1 else "window_s"


def pivot(reports: list[dict]) -> tuple[str, list, list[tuple[str, str, str]], dict]:
    """Returns (column field, column values, row keys, cells).

    Rows are (target, cv, architecture); cells map (row, column) -> "acc (mcc)".
    """
    col_key = _column_key(reports)

    def col_of(r):
        c = r["config"]
        return c["ordering"]["kind"] if col_key == "ordering" else c["window"]["window_s"]

    columns = sorted({col_of(r) for r in reports}, key=lambda v: (isinstance(v, str), v))
    rows = sorted({(r["config"]["target"], r["config"]["cv"], r["config"]["architecture"]) for r in reports})
    cells = {}
    for r in reports:
        c = r["config"]
        cells[((c["target"], c["cv"], c["architecture"]), col_of(r))] = format_cell(
            r["mean_accuracy"], r["mean_mcc"])
    return col_key, columns, rows, cells


def _label(v) -> str:
    return f"{v:g}" if isinstance(v, float) else str(v)


def render_table(reports: list[dict]) -> tuple[list[list[str]], str]:
    """(csv rows, plain-text table)."""
    col_key, columns, rows, cells = pivot(reports)
    header = ["target", "cv", "architecture"] + [_label(c) for c in columns]
    table = [header]
    for row in rows:
        table.append(list(row) + [cells.get((row, c), MISSING) for c in columns])
    widths = [max(len(r[i]) for r in table) for i in range(len(header))]
    title = f"accuracy (mcc) by {'ordering' if col_key == 'ordering' else 'window size (s)'}"
    lines = [title, ""]
    for i, r in enumerate(table):
        lines.append("  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return table, "\n".join(lines) + "\n"


def write_summary(results_dir, out_dir=None) -> tuple[Path, Path]:
    reports = collect_reports(results_dir)
    table, text = render_table(reports)
    out = Path(out_dir) if out_dir is not None else Path(results_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "comparison.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh, lineterminator="\n").writerows(table)
    txt_path = out / "comparison.txt"
    txt_path.write_text(text, encoding="utf-8")
    return csv_path, txt_path

"""File formats: numeric CSV in, JSON and CSV reports out."""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from .montecarlo import to_json

__all__ = ["read_numeric_csv", "write_json", "write_csv", "BOUND_COLUMNS", "bound_rows"]

BOUND_COLUMNS = ("r_or_z", "bound_raw", "bound_clamped", "empirical", "n_reps")


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def read_numeric_csv(path) -> tuple[list[str] | None, np.ndarray]:
    """Comma-separated numbers with an optional single header row.

    LF and CRLF line endings are both accepted; blank lines are skipped.
    Returns ``(header, data)`` where ``header`` is None when the first row
    is numeric.
    """
    text = Path(path).read_text(encoding="utf-8-sig")
    rows = [r for r in csv.reader(io.StringIO(text, newline="")) if any(c.strip() for c in r)]
    if not rows:
        raise ValueError(f"{path}: no data rows")
    header = None
    if not all(_is_number(c) for c in rows[0]):
        header = [c.strip() for c in rows[0]]
        rows = rows[1:]
    if not rows:
        raise ValueError(f"{path}: header without data")
    width = len(rows[0])
    for k, r in enumerate(rows):
        if len(r) != width:
            raise ValueError(f"{path}: row {k + 1} has {len(r)} fields, expected {width}")
        bad = [c for c in r if not _is_number(c)]
        if bad:
            raise ValueError(f"{path}: row {k + 1} has non-numeric field {bad[0]!r}")
    if header is not None and len(header) != width:
        raise ValueError(f"{path}: header has {len(header)} fields, data has {width}")
    return header, np.array([[float(c) for c in r] for r in rows])


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(to_json(obj) + "\n", encoding="utf-8")
    return path


def write_csv(path, rows: list[dict], columns) -> Path:
    """Rows as LF-terminated CSV; missing cells are left empty."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: ("" if row.get(k) is None else repr(row[k]) if isinstance(row[k], float) else row[k])
                        for k in columns})
    return path


def bound_rows(rows: list[dict], key: str) -> list[dict]:
    """Tail or coverage rows reshaped to the shared bound-table columns."""
    out = []
    for r in rows:
        out.append({
            "r_or_z": float(r[key]),
            "bound_raw": r.get("bound_raw"),
            "bound_clamped": r.get("bound"),
            "empirical": r.get("empirical"),
            "n_reps": r.get("n_reps"),
        })
    return out

"""Per-cell summaries of the block CSV and before/after ratio reports."""

from __future__ import annotations

import csv
import math
import statistics
from collections import defaultdict
from pathlib import Path

from valphase.errors import ValphaseError

COMPONENTS = ("vscc", "statedb_read", "mvcc", "ledger_write", "statedb_write", "others",
              "vscc_statedb_read", "ledger_statedb_write", "total")
SUMMARY_COLUMNS = (
    ("mode", "backend", "workers", "block_size", "reps", "blocks", "txs", "valid")
    + tuple(f"{c}_us_{s}" for c in COMPONENTS for s in ("mean", "std"))
    + ("throughput_mean", "throughput_std", "error")
)


class CompareError(ValphaseError):
    pass


def summary_path_for(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_name(p.stem + ".summary.csv")


def _mean_std(values) -> tuple:
    values = list(values)
    if not values:
        return 0.0, 0.0
    return statistics.fmean(values), statistics.pstdev(values)


def rep_throughputs(rows) -> list:
    """Throughput (tx/s) of each repetition, in rep order."""
    txs = defaultdict(int)
    us = defaultdict(int)
    for r in rows:
        txs[int(r["rep"])] += int(r["num_txs"])
        us[int(r["rep"])] += int(r["total_us"])
    return [txs[k] / us[k] * 1e6 if us[k] else 0.0 for k in sorted(txs)]


def summarize_cell(mode: str, backend: str, workers: int, block_size: int, rows,
                   error: str = "") -> dict:
    out = {"mode": mode, "backend": backend, "workers": workers, "block_size": block_size,
           "reps": len({int(r["rep"]) for r in rows}), "blocks": len(rows),
           "txs": sum(int(r["num_txs"]) for r in rows),
           "valid": sum(int(r["num_valid"]) for r in rows)}
    for c in COMPONENTS:
        m, s = _mean_std(int(r[f"{c}_us"]) for r in rows)
        out[f"{c}_us_mean"] = m
        out[f"{c}_us_std"] = s
    out["throughput_mean"], out["throughput_std"] = _mean_std(rep_throughputs(rows))
    out["error"] = error
    return out


def summarize(mode: str, backend: str, rows_by_cell: dict, errors: dict | None = None) -> list:
    errors = errors or {}
    return [summarize_cell(mode, backend, w, b, rows, errors.get((w, b), ""))
            for (w, b), rows in rows_by_cell.items()]


def summarize_csv(csv_path) -> list:
    """Recompute the summary from a block CSV (one mode/backend per file)."""
    cells: dict = defaultdict(list)
    meta = {}
    with open(csv_path, newline="") as f:
        for r in csv.DictReader(f):
            key = (int(r["workers"]), int(r["block_size"]))
            cells[key].append(r)
            meta[key] = (r["mode"], r["backend"])
    return [summarize_cell(*meta[k], k[0], k[1], rows) for k, rows in cells.items()]


def write_summary(summary, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=SUMMARY_COLUMNS)
        w.writeheader()
        for cell in summary:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in cell.items()})


def read_summary(path) -> list:
    try:
        with open(path, newline="") as f:
            rows = list(csv.DictReader(f))
    except OSError as e:
        raise CompareError(f"cannot read summary {path}: {e}") from None
    out = []
    for r in rows:
        missing = [c for c in SUMMARY_COLUMNS if c not in r]
        if missing:
            raise CompareError(f"{path} is not a summary file (missing {missing[0]})")
        cell = {}
        for k in SUMMARY_COLUMNS:
            v = r[k]
            if k in ("mode", "backend", "error"):
                cell[k] = v
            elif k in ("workers", "block_size", "reps", "blocks", "txs", "valid"):
                cell[k] = int(v)
            else:
                cell[k] = float(v)
        out.append(cell)
    return out


def _ratio(num: float, den: float) -> float:
    if den == 0:
        return 1.0 if num == 0 else math.inf
    return num / den


def compare(summary_a, summary_b) -> list:
    """Ratios of B relative to A, one row per (workers, block_size) cell.

    ``throughput_ratio`` is B/A (speedup); each ``<component>_ratio`` is A/B
    (latency reduction). Values above 1 mean B is faster.
    """
    a = {(c["workers"], c["block_size"]): c for c in summary_a}
    b = {(c["workers"], c["block_size"]): c for c in summary_b}
    if set(a) != set(b):
        only_a = sorted(set(a) - set(b))
        only_b = sorted(set(b) - set(a))
        raise CompareError(f"cells differ: only in A {only_a}, only in B {only_b}")
    rows = []
    for key in sorted(a):
        ca, cb = a[key], b[key]
        row = {"workers": key[0], "block_size": key[1],
               "a": f"{ca['mode']}/{ca['backend']}", "b": f"{cb['mode']}/{cb['backend']}",
               "throughput_ratio": _ratio(cb["throughput_mean"], ca["throughput_mean"])}
        for c in COMPONENTS:
            row[f"{c}_ratio"] = _ratio(ca[f"{c}_us_mean"], cb[f"{c}_us_mean"])
        rows.append(row)
    return rows


COMPARE_COLUMNS = (("workers", "block_size", "a", "b", "throughput_ratio")
                   + tuple(f"{c}_ratio" for c in COMPONENTS))


def write_compare(rows, f) -> None:
    w = csv.DictWriter(f, fieldnames=COMPARE_COLUMNS)
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{v:.4f}" if isinstance(v, float) else v) for k, v in r.items()})

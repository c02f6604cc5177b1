"""Runs experiment cells and writes the per-block CSV."""

from __future__ import annotations

import csv
import logging
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from valphase.bench.config import ExperimentSpec, cell_workload
from valphase.bench.report import summarize, summary_path_for, write_summary
from valphase.committer import Mode
from valphase.errors import ValphaseError
from valphase.pipeline import Pipeline, PipelineConfig, StreamAborted, Stores
from valphase.vscc import VsccConfig
from valphase.workload import SmallbankWorkload

log = logging.getLogger(__name__)

ID_COLUMNS = ("mode", "backend", "workers", "block_size", "rep", "block_num", "num_txs", "num_valid")
TIME_COLUMNS = ("vscc_us", "statedb_read_us", "mvcc_us", "ledger_write_us", "statedb_write_us",
                "others_us", "vscc_statedb_read_us", "ledger_statedb_write_us", "total_us")
CSV_COLUMNS = ID_COLUMNS + TIME_COLUMNS


@dataclass
class ExperimentResult:
    csv_path: Path
    summary_path: Path
    summary: list
    figures: list = field(default_factory=list)

    @property
    def failed(self) -> bool:
        return any(c["error"] for c in self.summary)


def breakdown_row(spec: ExperimentSpec, workers: int, block_size: int, rep: int, bd) -> dict:
    row = {
        "mode": spec.mode.value, "backend": spec.backend.value, "workers": workers,
        "block_size": block_size, "rep": rep, "block_num": bd.block_num,
        "num_txs": bd.num_txs, "num_valid": bd.num_valid,
    }
    for col in TIME_COLUMNS:
        row[col] = getattr(bd, col[:-3])
    return row


def pipeline_config(spec: ExperimentSpec, workers: int, block_size: int) -> PipelineConfig:
    return PipelineConfig(
        mode=spec.mode,
        backend=spec.backend,
        vscc=VsccConfig(workers=workers, verification_cost_us=spec.verification_cost_us,
                        cache_enabled=spec.cache_enabled, cache_policy=spec.cache_policy),
        ledger_retry_limit=spec.ledger_retry_limit,
        block_size=block_size,
    )


def run_cell(spec: ExperimentSpec, workload: SmallbankWorkload, blocks, workers: int,
             block_size: int, rep: int) -> list:
    """One repetition on fresh stores; returns the LatencyBreakdown list."""
    root = Path(tempfile.mkdtemp(prefix="valphase-", dir=spec.data_dir))
    stores = Stores.open(root, spec.backend, latency=spec.latency, sync=spec.sync,
                         server_threads=spec.server_threads)
    try:
        workload.seed(stores)
        with Pipeline(pipeline_config(spec, workers, block_size), stores) as p:
            return p.run_stream([b.copy() for b in blocks]).breakdowns
    finally:
        stores.close()
        shutil.rmtree(root, ignore_errors=True)


def run_experiment(spec: ExperimentSpec) -> ExperimentResult:
    out = spec.output_path()
    out.parent.mkdir(parents=True, exist_ok=True)
    if spec.data_dir is not None:
        Path(spec.data_dir).mkdir(parents=True, exist_ok=True)
    rows_by_cell: dict = {}
    errors: dict = {}
    with open(out, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for block_size in spec.block_sizes:
            # generated offline, before any timing starts
            workload = SmallbankWorkload(cell_workload(spec, block_size))
            blocks = workload.blocks()
            for workers in spec.workers:
                cell = (workers, block_size)
                rows_by_cell[cell] = []
                for rep in range(spec.reps):
                    log.info("%s/%s workers=%d block_size=%d rep=%d", spec.mode.value,
                             spec.backend.value, workers, block_size, rep)
                    try:
                        bds = run_cell(spec, workload, blocks, workers, block_size, rep)
                    except StreamAborted as e:
                        errors[cell] = f"rep {rep} block {e.block_number}: {e.__cause__}"
                        log.error("cell %s aborted: %s", cell, errors[cell])
                        bds = e.results
                    except ValphaseError as e:  # seeding the fresh stores failed
                        errors[cell] = f"rep {rep} setup: {e}"
                        log.error("cell %s aborted: %s", cell, errors[cell])
                        bds = []
                    rows = [breakdown_row(spec, workers, block_size, rep, bd) for bd in bds]
                    writer.writerows(rows)
                    rows_by_cell[cell].extend(rows)
                    if cell in errors:
                        break
    summary = summarize(spec.mode.value, spec.backend.value, rows_by_cell, errors)
    summary_path = summary_path_for(out)
    write_summary(summary, summary_path)
    result = ExperimentResult(out, summary_path, summary)
    if spec.plot:
        from valphase.bench.plots import plot_summary
        result.figures = plot_summary(summary, out.with_suffix(""))
    return result

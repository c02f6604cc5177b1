"""Benchmark harness: experiment configs, runs, summaries, figures."""

from valphase.bench.config import ExperimentSpec, load_config, parse_config
from valphase.bench.report import compare, read_summary, summarize_csv
from valphase.bench.runner import CSV_COLUMNS, ExperimentResult, run_experiment

__all__ = ["CSV_COLUMNS", "ExperimentResult", "ExperimentSpec", "compare", "load_config",
           "parse_config", "read_summary", "run_experiment", "summarize_csv"]

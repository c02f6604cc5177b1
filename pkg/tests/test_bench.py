import csv

import pytest

from valphase.bench import cli
from valphase.bench.config import ExperimentSpec, parse_config
from valphase.bench.report import (
    COMPONENTS, CompareError, compare, read_summary, summarize_csv,
)
from valphase.bench.runner import CSV_COLUMNS, run_experiment
from valphase.committer import Mode
from valphase.errors import ConfigError
from valphase.statedb import BackendKind

HEADER = ("mode,backend,workers,block_size,rep,block_num,num_txs,num_valid,vscc_us,statedb_read_us,"
          "mvcc_us,ledger_write_us,statedb_write_us,others_us,vscc_statedb_read_us,"
          "ledger_statedb_write_us,total_us")
TIMING = {c for c in CSV_COLUMNS if c.endswith("_us")}


def small_config(tmp_path, name="run", **extra):
    lines = {
        "mode": "optimized", "backend": "slow", "workers": "2, 4", "block_sizes": "10",
        "reps": "2", "total_txs": "60", "num_accounts": "50", "seed": "3", "conflict_prob": "0.1",
        "read_base_us": "0", "read_per_key_us": "0", "write_base_us": "0", "write_per_key_us": "0",
        "bulk_base_us": "0", "bulk_per_key_us": "0", "sync": "off", "out": str(tmp_path / f"{name}.csv"),
    }
    lines.update({k: str(v) for k, v in extra.items()})
    path = tmp_path / f"{name}.conf"
    path.write_text("# test config\n" + "".join(f"{k} = {v}\n" for k, v in lines.items()))
    return path


def read_rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


# -- config -----------------------------------------------------------------

def test_parse_config_fields():
    spec = parse_config("""
        mode = baseline      # comment
        backend = couchdb
        workers = 16,24
        block_sizes = 50 100
        reps = 3
        conflict_prob = 0.05
        read_base_us = 123
        cc_cache = auto
    """)
    assert spec.mode is Mode.BASELINE and spec.backend is BackendKind.SLOW_REMOTE
    assert spec.workers == [16, 24] and spec.block_sizes == [50, 100] and spec.reps == 3
    assert spec.workload.conflict_prob == 0.05 and spec.latency.read_base_us == 123
    assert spec.cache_enabled is False
    assert parse_config("mode = optimized").cache_enabled is True


@pytest.mark.parametrize("text,line", [
    ("mode = baseline\nbogus = 1\n", 2),
    ("reps = 2\n\nreps = 3\n", 3),
    ("# c\nworkers = a,b\n", 2),
    ("mode = sideways\n", 1),
    ("just a line\n", 1),
    ("policy = AND(Org1\n", 1),
])
def test_config_errors_carry_line_numbers(text, line):
    with pytest.raises(ConfigError) as ei:
        parse_config(text)
    assert ei.value.line == line
    assert f"line {line}" in str(ei.value)


def test_spec_invariants():
    with pytest.raises(ConfigError):
        ExperimentSpec(workers=[])
    with pytest.raises(ConfigError):
        ExperimentSpec(reps=0)


# -- runs --------------------------------------------------------------------

def test_run_writes_rows_and_summary(tmp_path):
    spec = parse_config(small_config(tmp_path).read_text())
    result = run_experiment(spec)
    text = result.csv_path.read_text().splitlines()
    assert text[0] == HEADER
    # 2 worker counts x 2 reps x 6 blocks
    assert len(text) == 2 * 2 * 6 + 1
    assert not result.failed
    assert [(c["workers"], c["block_size"], c["reps"]) for c in result.summary] == [(2, 10, 2), (4, 10, 2)]
    assert result.figures and all(f.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n" for f in result.figures)


def test_rows_deterministic_except_timings(tmp_path):
    a = run_experiment(parse_config(small_config(tmp_path, "a", plot="off").read_text()))
    b = run_experiment(parse_config(small_config(tmp_path, "b", plot="off").read_text()))
    strip = lambda rows: [{k: v for k, v in r.items() if k not in TIMING} for r in rows]  # noqa: E731
    assert strip(read_rows(a.csv_path)) == strip(read_rows(b.csv_path))


def test_summary_equals_recomputation(tmp_path):
    result = run_experiment(parse_config(small_config(tmp_path, plot="off").read_text()))
    recomputed = summarize_csv(result.csv_path)
    assert read_summary(result.summary_path) == recomputed
    rows = read_rows(result.csv_path)
    cell = [r for r in rows if r["workers"] == "2"]
    totals = [int(r["total_us"]) for r in cell]
    assert recomputed[0]["total_us_mean"] == pytest.approx(sum(totals) / len(totals), rel=0, abs=1e-9)


def test_compare_identical_is_all_ones(tmp_path):
    result = run_experiment(parse_config(small_config(tmp_path, plot="off").read_text()))
    s = read_summary(result.summary_path)
    for row in compare(s, s):
        assert row["throughput_ratio"] == 1.0
        assert all(row[f"{c}_ratio"] == 1.0 for c in COMPONENTS)


def test_compare_cell_mismatch(tmp_path):
    a = run_experiment(parse_config(small_config(tmp_path, "a", plot="off").read_text()))
    b = run_experiment(parse_config(small_config(tmp_path, "b", plot="off", workers="2").read_text()))
    with pytest.raises(CompareError):
        compare(read_summary(a.summary_path), read_summary(b.summary_path))


@pytest.fixture
def faulty_stores(monkeypatch):
    """Every cell's stores get a FaultInjector; returns the list of injectors."""
    from valphase.bench import runner
    from valphase.kvstore import FaultInjector

    injectors = []
    real_open = runner.Stores.open

    def open_with_faults(root, backend, **kw):
        kw["faults"] = FaultInjector()
        injectors.append(kw["faults"])
        return real_open(root, backend, **kw)

    monkeypatch.setattr(runner.Stores, "open", staticmethod(open_with_faults))
    return injectors


def test_store_error_mid_stream_aborts_cell(tmp_path, monkeypatch, faulty_stores):
    from valphase.bench import runner

    real_seed = runner.SmallbankWorkload.seed

    def seed_then_arm(self, stores):
        block = real_seed(self, stores)
        stores.faults.arm("statedb.apply", times=None)
        return block

    monkeypatch.setattr(runner.SmallbankWorkload, "seed", seed_then_arm)
    result = run_experiment(parse_config(small_config(tmp_path, plot="off").read_text()))
    assert result.failed
    assert all("block 1" in c["error"] and "statedb" in c["error"] for c in result.summary)
    # the abort stops each cell in its first rep, before any block row was produced
    assert all(c["error"].startswith("rep 0 ") for c in result.summary)
    assert [c["blocks"] for c in result.summary] == [0, 0]
    assert read_summary(result.summary_path)[0]["error"] == result.summary[0]["error"]


def test_store_error_during_setup_aborts_cell(tmp_path, monkeypatch, faulty_stores):
    from valphase.bench import runner

    real_seed = runner.SmallbankWorkload.seed

    def arm_then_seed(self, stores):
        stores.faults.arm("ledger.append", times=None)
        return real_seed(self, stores)

    monkeypatch.setattr(runner.SmallbankWorkload, "seed", arm_then_seed)
    result = run_experiment(parse_config(small_config(tmp_path, plot="off").read_text()))
    assert all("setup" in c["error"] for c in result.summary)
    assert cli.main(["run", "--config", str(small_config(tmp_path, "again", plot="off"))]) == 2


# -- cli ---------------------------------------------------------------------

def test_cli_run_and_compare(tmp_path, capsys):
    base = small_config(tmp_path, "base", mode="baseline")
    opt = small_config(tmp_path, "opt", mode="optimized")
    assert cli.main(["run", "--config", str(base)]) == 0
    assert cli.main(["run", "--config", str(opt), "--no-plot"]) == 0
    assert (tmp_path / "base_breakdown.png").exists()
    assert not (tmp_path / "opt_breakdown.png").exists()
    out = tmp_path / "ratio.csv"
    png = tmp_path / "ratio.png"
    rc = cli.main(["compare", str(tmp_path / "base.summary.csv"), str(tmp_path / "opt.summary.csv"),
                   "--out", str(out), "--plot", str(png)])
    assert rc == 0
    assert read_rows(out)[0]["a"] == "baseline/slow"
    assert png.read_bytes()[:4] == b"\x89PNG"
    assert "throughput_ratio" in capsys.readouterr().out


def test_cli_exit_codes(tmp_path):
    bad = tmp_path / "bad.conf"
    bad.write_text("mode = optimized\nnope = 1\n")
    assert cli.main(["run", "--config", str(bad)]) == 1
    assert cli.main(["run", "--config", str(tmp_path / "missing.conf")]) == 1
    assert cli.main(["compare", str(tmp_path / "x"), str(tmp_path / "y")]) == 1
    assert cli.main(["frobnicate"]) == 1
    blocker = tmp_path / "not_a_dir"
    blocker.write_text("")
    broken = small_config(tmp_path, "broken", data_dir=str(blocker / "sub"))
    assert cli.main(["run", "--config", str(broken)]) == 2


def test_cli_compare_mismatch_exit_code(tmp_path):
    a = small_config(tmp_path, "a", plot="off")
    b = small_config(tmp_path, "b", plot="off", workers="8")
    assert cli.main(["run", "--config", str(a)]) == 0
    assert cli.main(["run", "--config", str(b)]) == 0
    assert cli.main(["compare", str(tmp_path / "a.summary.csv"), str(tmp_path / "b.summary.csv")]) == 1


def test_out_dir_env_override(tmp_path, monkeypatch):
    elsewhere = tmp_path / "elsewhere"
    monkeypatch.setenv("VALPHASE_OUT_DIR", str(elsewhere))
    assert cli.main(["run", "--config", str(small_config(tmp_path, plot="off"))]) == 0
    assert (elsewhere / "run.csv").exists() and (elsewhere / "run.summary.csv").exists()
    assert not (tmp_path / "run.csv").exists()

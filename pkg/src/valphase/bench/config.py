"""Experiment description and the flat ``key = value`` config format."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from valphase.committer import Mode
from valphase.core import parse_policy
from valphase.errors import ConfigError
from valphase.statedb import BackendKind, LatencyModel
from valphase.vscc import CachePolicy
from valphase.workload import OpKind, WorkloadConfig

OUT_DIR_ENV = "VALPHASE_OUT_DIR"


@dataclass
class ExperimentSpec:
    mode: Mode = Mode.OPTIMIZED
    backend: BackendKind = BackendKind.FAST_EMBEDDED
    workers: list = field(default_factory=lambda: [16])
    block_sizes: list = field(default_factory=lambda: [50])
    reps: int = 20
    latency: LatencyModel = field(default_factory=LatencyModel)
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    cc_cache: Optional[bool] = None  # None: on for optimized, off for baseline
    cache_policy: CachePolicy = CachePolicy.ON_UPGRADE
    verification_cost_us: int = 0
    ledger_retry_limit: int = 3
    server_threads: int = 1
    sync: bool = True
    out: Path = Path("valphase_results.csv")
    plot: bool = True
    data_dir: Optional[Path] = None

    def __post_init__(self):
        if not self.workers or not self.block_sizes:
            raise ConfigError("workers and block_sizes must be non-empty")
        if any(w < 1 for w in self.workers) or any(b < 1 for b in self.block_sizes):
            raise ConfigError("workers and block sizes must be positive")
        if self.reps < 1:
            raise ConfigError("reps must be >= 1")

    @property
    def cache_enabled(self) -> bool:
        if self.cc_cache is None:
            return self.mode is Mode.OPTIMIZED
        return self.cc_cache

    def output_path(self) -> Path:
        env = os.environ.get(OUT_DIR_ENV)
        if env:
            return Path(env) / Path(self.out).name
        return Path(self.out)


def _bool(v: str) -> bool:
    t = v.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {v!r}")


def _int_list(v: str) -> list:
    items = [x for x in v.replace(";", ",").replace(" ", ",").split(",") if x]
    if not items:
        raise ValueError("empty list")
    return [int(x) for x in items]


def _op_mix(v: str) -> dict:
    # create_account:1, transfer_money:2, ...
    mix = {}
    for part in v.split(","):
        name, _, weight = part.strip().partition(":")
        mix[OpKind(name.strip())] = float(weight) if weight else 1.0
    return mix


_LATENCY = ("read_base_us", "read_per_key_us", "write_base_us", "write_per_key_us",
            "bulk_base_us", "bulk_per_key_us")
_WORKLOAD = {
    "total_txs": int, "num_accounts": int, "seed": int, "conflict_prob": float,
    "policy_fail_prob": float, "unknown_cc_prob": float, "bad_syntax_prob": float,
    "num_chaincodes": int, "initial_balance": int, "max_amount": int, "upgrade_every": int,
    "orgs": lambda v: tuple(o.strip() for o in v.split(",") if o.strip()),
    "policy": lambda v: str(parse_policy(v)),
    "op_mix": _op_mix,
}
_SPEC = {
    "mode": Mode.parse,
    "backend": BackendKind.parse,
    "workers": _int_list,
    "block_sizes": _int_list,
    "reps": int,
    "cc_cache": lambda v: None if v.strip().lower() == "auto" else _bool(v),
    "cache_policy": lambda v: CachePolicy(v.strip().lower()),
    "verification_cost_us": int,
    "ledger_retry_limit": int,
    "server_threads": int,
    "sync": _bool,
    "out": Path,
    "plot": _bool,
    "data_dir": Path,
}
KEYS = sorted(set(_SPEC) | set(_WORKLOAD) | set(_LATENCY))


def parse_config(text: str) -> ExperimentSpec:
    spec_kw: dict = {}
    work_kw: dict = {}
    lat_kw: dict = {}
    seen: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not sep or not key:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        if key in seen:
            raise ConfigError(f"duplicate key {key!r} (first set on line {seen[key]})", lineno)
        seen[key] = lineno
        try:
            if key in _SPEC:
                spec_kw[key] = _SPEC[key](value)
            elif key in _WORKLOAD:
                work_kw[key] = _WORKLOAD[key](value)
            elif key in _LATENCY:
                lat_kw[key] = int(value)
            else:
                raise ConfigError(f"unknown key {key!r}", lineno)
        except ConfigError as e:
            if e.line is None:
                raise ConfigError(str(e), lineno) from None
            raise
        except (ValueError, KeyError) as e:
            raise ConfigError(f"bad value for {key!r}: {e}", lineno) from None
    try:
        latency = LatencyModel(**lat_kw)
        workload = WorkloadConfig(**work_kw)
        spec = ExperimentSpec(latency=latency, workload=workload, **spec_kw)
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(str(e)) from None
    return spec


def load_config(path) -> ExperimentSpec:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return parse_config(text)


def cell_workload(spec: ExperimentSpec, block_size: int) -> WorkloadConfig:
    return replace(spec.workload, block_size=block_size)

"""Per-block validation-and-commit orchestration with stage timings.

Baseline runs every stage back to back. Optimized overlaps vscc with the
bulk state read (slow backend only) and the ledger write with the state and
history writes. Final codes and store contents do not depend on the mode.
"""

from __future__ import annotations

import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from valphase.committer import CommitPlan, Mode, commit_baseline, commit_optimized
from valphase.core import SYSTEM_NAMESPACE, ZERO_HASH, Block, ValidationCode, compute_data_hash
from valphase.errors import ProtocolError, ValphaseError
from valphase.kvstore import FaultInjector
from valphase.ledger import BlockStore, HistoryDB
from valphase.mvcc import build_snapshot_bulk, mvcc_validate
from valphase.statedb import BackendKind, LatencyModel, open_statedb
from valphase.vscc import ChaincodeCache, VsccConfig, syntactic_validate, vscc_validate

_now = time.perf_counter_ns
NV = ValidationCode.NOT_VALIDATED


@dataclass
class PipelineConfig:
    mode: Mode = Mode.OPTIMIZED
    backend: BackendKind = BackendKind.FAST_EMBEDDED
    vscc: VsccConfig = field(default_factory=VsccConfig)
    ledger_retry_limit: int = 3
    retry_backoff_s: float = 0.010
    block_size: int = 50  # informational only

    @property
    def plan(self) -> CommitPlan:
        return CommitPlan(self.mode, self.backend, self.ledger_retry_limit, self.retry_backoff_s)


COMPONENTS = ("vscc", "statedb_read", "mvcc", "ledger_write", "statedb_write", "others",
              "vscc_statedb_read", "ledger_statedb_write", "total")


@dataclass
class LatencyBreakdown:
    """Per-block stage timings in whole microseconds.

    ``others`` is the residual of ``total`` after the named stages, so the
    accounting identities hold exactly. In optimized mode ``vscc``,
    ``statedb_read``, ``ledger_write`` and ``statedb_write`` are the durations
    of the overlapped tasks and are not part of the sum.
    """

    block_num: int
    num_txs: int
    num_valid: int
    vscc: int = 0
    statedb_read: int = 0
    mvcc: int = 0
    ledger_write: int = 0
    statedb_write: int = 0
    others: int = 0
    vscc_statedb_read: int = 0
    ledger_statedb_write: int = 0
    total: int = 0

    def stage_sum(self, mode: Mode) -> int:
        if mode is Mode.BASELINE:
            return (self.vscc + self.statedb_read + self.mvcc + self.ledger_write
                    + self.statedb_write + self.others)
        return self.vscc_statedb_read + self.mvcc + self.ledger_statedb_write + self.others

    def as_dict(self) -> dict:
        return asdict(self)


def throughput(breakdowns) -> float:
    """Committed transactions (valid and invalid) per second of block latency."""
    total_us = sum(b.total for b in breakdowns)
    if total_us <= 0:
        return 0.0
    return sum(b.num_txs for b in breakdowns) / total_us * 1e6


@dataclass
class StreamResult:
    breakdowns: list
    throughput: float


class StreamAborted(ValphaseError):
    def __init__(self, block_number, results, cause):
        super().__init__(f"stream stopped at block {block_number}: {cause}")
        self.block_number = block_number
        self.results = results
        self.__cause__ = cause


@dataclass
class Stores:
    ledger: BlockStore
    statedb: object
    history: HistoryDB
    faults: Optional[FaultInjector] = None

    @classmethod
    def open(cls, root, backend: BackendKind, latency: Optional[LatencyModel] = None,
             sync: bool = True, faults: Optional[FaultInjector] = None,
             server_threads: int = 1) -> "Stores":
        root = Path(root)
        return cls(
            BlockStore(root / "ledger", sync=sync, faults=faults),
            open_statedb(backend, root / "statedb", latency=latency, sync=sync,
                         faults=faults, server_threads=server_threads),
            HistoryDB(root / "history", sync=sync, faults=faults),
            faults,
        )

    def close(self) -> None:
        self.ledger.close()
        self.statedb.close()
        self.history.close()

    def fingerprint(self) -> tuple:
        """Everything the commit-equivalence checks compare."""
        return self.ledger.raw_bytes(), self.statedb.dump(), self.history.dump()


class Pipeline:
    """Validates and commits one block at a time against a set of stores."""

    def __init__(self, cfg: PipelineConfig, stores: Stores, cache: Optional[ChaincodeCache] = None):
        if stores.statedb.kind is not cfg.backend:
            raise ValueError(f"stores use {stores.statedb.kind}, config says {cfg.backend}")
        self.cfg = cfg
        self.stores = stores
        self.cache = cache if cache is not None else ChaincodeCache(cfg.vscc.cache_policy)
        self._vscc_pool = ThreadPoolExecutor(cfg.vscc.workers, thread_name_prefix="vscc")
        self._aux_pool = ThreadPoolExecutor(2, thread_name_prefix="stage")
        self._busy = threading.Lock()
        self.trace: Optional[list] = None  # (block, stage, start_ns, end_ns) when enabled

    def close(self) -> None:
        self._vscc_pool.shutdown()
        self._aux_pool.shutdown()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _span(self, number, stage, start, end):
        if self.trace is not None:
            self.trace.append((number, stage, start, end))

    def check_structure(self, block: Block) -> None:
        ledger = self.stores.ledger
        expected = ledger.height() + 1
        if block.number != expected:
            raise ProtocolError(f"expected block {expected}, got {block.number}")
        prev = ledger.last_hash if expected > 0 else ZERO_HASH
        if block.prev_hash != prev:
            raise ProtocolError(f"block {block.number} does not link to the previous block")
        if not block.transactions or compute_data_hash(block.transactions) != block.data_hash:
            raise ProtocolError(f"block {block.number} data hash mismatch")

    def validate_and_commit(self, block: Block) -> LatencyBreakdown:
        if not self._busy.acquire(blocking=False):
            raise RuntimeError("another block is already in flight")
        try:
            for tx in block.transactions:
                tx.validation_code = NV
            if self.cfg.mode is Mode.BASELINE:
                bd = self._baseline(block)
            else:
                bd = self._optimized(block)
            self._after_commit(block)
            return bd
        finally:
            self._busy.release()

    def _after_commit(self, block: Block) -> None:
        # a committed write to the system namespace is a chaincode upgrade
        for tx in block.transactions:
            if tx.validation_code == ValidationCode.VALID:
                for key, _ in tx.write_set:
                    if key.namespace == SYSTEM_NAMESPACE:
                        self.cache.invalidate(key.name.decode())

    def _baseline(self, block: Block) -> LatencyBreakdown:
        st = self.stores
        slow = self.cfg.backend is BackendKind.SLOW_REMOTE
        n = block.number
        t0 = _now()
        self.check_structure(block)
        t1 = _now()
        codes = syntactic_validate(block)
        codes = vscc_validate(block, self.cfg.vscc, self.cache, st.statedb,
                              pool=self._vscc_pool, codes=codes)
        t2 = _now()
        snapshot = None
        if slow:
            snapshot = build_snapshot_bulk(
                st.statedb, [tx for tx, c in zip(block.transactions, codes) if c == NV])
        t3 = _now()
        codes = mvcc_validate(block, snapshot, st.statedb, codes)
        block.set_codes(codes)
        t4 = _now()
        ct = commit_baseline(block, st.ledger, st.statedb, st.history)
        t5 = _now()
        self._span(n, "validate", t1, t4)
        self._span(n, "commit", t4, t5)

        bd = self._new_breakdown(block)
        bd.vscc = (t2 - t1) // 1000
        bd.statedb_read = (t3 - t2) // 1000
        bd.mvcc = (t4 - t3) // 1000
        bd.ledger_write = ct.ledger // 1000
        bd.statedb_write = ct.statedb // 1000
        bd.total = (_now() - t0) // 1000
        bd.others = bd.total - (bd.vscc + bd.statedb_read + bd.mvcc
                                + bd.ledger_write + bd.statedb_write)
        return bd

    def _optimized(self, block: Block) -> LatencyBreakdown:
        st = self.stores
        slow = self.cfg.backend is BackendKind.SLOW_REMOTE
        n = block.number
        t0 = _now()
        self.check_structure(block)
        t1 = _now()
        codes = syntactic_validate(block)
        fut = None
        if slow:
            # superset of what mvcc will look at: vscc may still reject some
            candidates = [tx for tx, c in zip(block.transactions, codes) if c == NV]
            fut = self._aux_pool.submit(self._timed_bulk, st.statedb, candidates)
        codes = vscc_validate(block, self.cfg.vscc, self.cache, st.statedb,
                              pool=self._vscc_pool, codes=codes)
        tv = _now()
        snapshot, read_ns = (None, 0) if fut is None else fut.result()
        t2 = _now()
        codes = mvcc_validate(block, snapshot, st.statedb, codes)
        block.set_codes(codes)
        t3 = _now()
        ct = commit_optimized(block, self.cfg.plan, st.ledger, st.statedb, st.history,
                              executor=self._aux_pool)
        t4 = _now()
        self._span(n, "validate", t1, t3)
        self._span(n, "commit", t3, t4)

        bd = self._new_breakdown(block)
        bd.vscc = (tv - t1) // 1000
        bd.statedb_read = read_ns // 1000
        bd.vscc_statedb_read = (t2 - t1) // 1000
        bd.mvcc = (t3 - t2) // 1000
        bd.ledger_write = ct.ledger // 1000
        bd.statedb_write = ct.statedb // 1000
        bd.ledger_statedb_write = (t4 - t3) // 1000
        bd.total = (_now() - t0) // 1000
        bd.others = bd.total - (bd.vscc_statedb_read + bd.mvcc + bd.ledger_statedb_write)
        return bd

    @staticmethod
    def _timed_bulk(statedb, txs):
        t = _now()
        snap = build_snapshot_bulk(statedb, txs)
        return snap, _now() - t

    @staticmethod
    def _new_breakdown(block: Block) -> LatencyBreakdown:
        valid = sum(1 for tx in block.transactions if tx.validation_code == ValidationCode.VALID)
        return LatencyBreakdown(block.number, len(block.transactions), valid)

    def run_stream(self, blocks: Iterable[Block]) -> StreamResult:
        results = []
        for block in blocks:
            try:
                results.append(self.validate_and_commit(block))
            except Exception as e:
                raise StreamAborted(block.number, results, e) from e
        return StreamResult(results, throughput(results))

"""Commit a validated block to the ledger, state DB, and history DB."""

from __future__ import annotations

import enum
import time
from concurrent.futures import Executor, ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple, Optional

from valphase.core import Block, ValidationCode
from valphase.errors import CommitAbort, LedgerBehindError, StorageError, Unrepairable
from valphase.statedb import BackendKind

_now = time.perf_counter_ns


class Mode(enum.Enum):
    BASELINE = "baseline"
    OPTIMIZED = "optimized"

    @classmethod
    def parse(cls, text: str) -> "Mode":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise ValueError(f"unknown mode {text!r} (baseline|optimized)") from None


class HistoryPlacement(enum.Enum):
    AFTER_STATEDB = "after_statedb"
    WITH_LEDGER = "with_ledger"


@dataclass(frozen=True)
class CommitPlan:
    mode: Mode = Mode.OPTIMIZED
    backend: BackendKind = BackendKind.FAST_EMBEDDED
    ledger_retry_limit: int = 3
    retry_backoff_s: float = 0.010

    def __post_init__(self):
        if self.ledger_retry_limit < 1:
            raise ValueError("ledger_retry_limit must be >= 1")

    @property
    def history_placement(self) -> HistoryPlacement:
        # the history write rides with whichever side is faster
        if self.backend is BackendKind.FAST_EMBEDDED:
            return HistoryPlacement.AFTER_STATEDB
        return HistoryPlacement.WITH_LEDGER


class CommitTimings(NamedTuple):
    """Nanoseconds. In optimized mode ``ledger``/``statedb`` are the two task
    durations (history included in whichever task ran it)."""

    ledger: int
    statedb: int
    history: int
    wall: int


def valid_writes(block: Block) -> list:
    return [(i, tx.write_set) for i, tx in enumerate(block.transactions)
            if tx.validation_code == ValidationCode.VALID]


def _check_final(block: Block) -> None:
    if any(tx.validation_code == ValidationCode.NOT_VALIDATED for tx in block.transactions):
        raise ValueError(f"block {block.number} still has unvalidated transactions")


def commit_baseline(block: Block, ledger, statedb, history) -> CommitTimings:
    """ledger, then state DB, then history; each finishes before the next starts."""
    _check_final(block)
    t0 = _now()
    try:
        ledger.append_block(block)
    except StorageError as e:
        raise CommitAbort("ledger", e) from e
    t1 = _now()
    try:
        statedb.apply_write_batch(block.number, valid_writes(block))
    except StorageError as e:
        raise CommitAbort("statedb", e) from e
    t2 = _now()
    try:
        history.append_history(block)
    except StorageError as e:
        raise CommitAbort("history", e) from e
    t3 = _now()
    return CommitTimings(t1 - t0, t2 - t1, t3 - t2, t3 - t0)


class _Outcome:
    __slots__ = ("ns", "history_ns", "error", "appended", "attempts")

    def __init__(self):
        self.ns = 0
        self.history_ns = 0
        self.error = None
        self.appended = False
        self.attempts = 0


def _ledger_task(block, plan, ledger, history) -> _Outcome:
    out = _Outcome()
    t0 = _now()
    last = None
    for attempt in range(1, plan.ledger_retry_limit + 1):
        out.attempts = attempt
        try:
            ledger.append_block(block)
            out.appended = True
            break
        except StorageError as e:
            last = e
            if attempt < plan.ledger_retry_limit and plan.retry_backoff_s:
                time.sleep(plan.retry_backoff_s)
    if not out.appended:
        out.error = ("ledger", last)
    elif plan.history_placement is HistoryPlacement.WITH_LEDGER:
        th = _now()
        try:
            history.append_history(block)
        except StorageError as e:
            out.error = ("history", e)
        out.history_ns = _now() - th
    out.ns = _now() - t0
    return out


def _state_task(block, plan, statedb, history) -> _Outcome:
    out = _Outcome()
    t0 = _now()
    try:
        statedb.apply_write_batch(block.number, valid_writes(block))
        out.appended = True
    except StorageError as e:
        out.error = ("statedb", e)
    if out.appended and plan.history_placement is HistoryPlacement.AFTER_STATEDB:
        th = _now()
        try:
            history.append_history(block)
        except StorageError as e:
            out.error = ("history", e)
        out.history_ns = _now() - th
    out.ns = _now() - t0
    return out


def commit_optimized(block: Block, plan: CommitPlan, ledger, statedb, history,
                     executor: Optional[Executor] = None) -> CommitTimings:
    """Ledger task and state task run concurrently; both finish before return.

    Raises LedgerBehindError when the state side landed but every ledger
    attempt failed, CommitAbort for any other failure.
    """
    _check_final(block)
    own = executor is None
    if own:
        executor = ThreadPoolExecutor(1, thread_name_prefix="commit")
    t0 = _now()
    try:
        # The ledger task runs on this thread and holds the GIL until its
        # frame is handed to the disk; the state task then encodes its batch
        # while that durable write is in flight.
        fut = executor.submit(_state_task, block, plan, statedb, history)
        lo = _ledger_task(block, plan, ledger, history)
        s = fut.result()
    finally:
        if own:
            executor.shutdown()
    wall = _now() - t0
    if not lo.appended:
        if s.appended:
            raise LedgerBehindError(block.number, lo.attempts, lo.error[1])
        raise CommitAbort("ledger+statedb", s.error[1])
    if lo.error is not None:
        raise CommitAbort(lo.error[0], lo.error[1])
    if s.error is not None:
        raise CommitAbort(s.error[0], s.error[1])
    return CommitTimings(lo.ns, s.ns, lo.history_ns + s.history_ns, wall)


def reconstruct(ledger, statedb, history) -> tuple:
    """Replay ledger blocks the state and history DBs are missing.

    Returns ``(state_blocks_replayed, history_blocks_replayed)``.
    """
    height = ledger.height()
    sp = statedb.get_savepoint()
    sp = -1 if sp is None else sp
    hsp = history.get_savepoint()
    hsp = -1 if hsp is None else hsp
    if sp > height or hsp > height:
        raise Unrepairable(
            f"databases (state {sp}, history {hsp}) are ahead of the ledger ({height}); "
            f"missing blocks must come from another peer"
        )
    for n in range(min(sp, hsp) + 1, height + 1):
        block = ledger.get_block(n)
        if n > sp:
            statedb.apply_write_batch(n, valid_writes(block))
        if n > hsp:
            history.append_history(block)
    return height - sp, height - hsp

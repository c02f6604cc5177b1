"""Syntactic checks, endorsement-policy validation, and the chaincode cache."""

from __future__ import annotations

import enum
import threading
from concurrent.futures import Executor, ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

from valphase.core import (
    SYSTEM_NAMESPACE, And, Block, ChaincodeInfo, Key, Or, OutOf, Principal,
    ValidationCode, digest, verify_endorsement,
)
from valphase.errors import UnknownChaincode

NV = ValidationCode.NOT_VALIDATED


class CachePolicy(enum.Enum):
    ON_UPGRADE = "on_upgrade"
    PER_BLOCK = "per_block"


@dataclass
class VsccConfig:
    workers: int = 16
    verification_cost_us: int = 0
    cache_enabled: bool = True
    cache_policy: CachePolicy = CachePolicy.ON_UPGRADE

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("vscc needs at least one worker")
        if self.verification_cost_us < 0:
            raise ValueError("verification_cost_us must be non-negative")


class ChaincodeCache:
    """chaincode id -> ChaincodeInfo, shared by all vscc workers.

    Misses are single-flight: workers that miss on the same id queue behind
    one fetch lock, so a cold block costs one database read per chaincode.
    """

    def __init__(self, policy: CachePolicy = CachePolicy.ON_UPGRADE):
        self.policy = policy
        self._entries: dict[str, ChaincodeInfo] = {}
        self._lock = threading.Lock()
        self._fetch_locks: dict[str, threading.Lock] = {}
        self.hits = 0
        self.misses = 0

    def get(self, chaincode_id: str) -> Optional[ChaincodeInfo]:
        with self._lock:
            info = self._entries.get(chaincode_id)
            if info is None:
                self.misses += 1
            else:
                self.hits += 1
            return info

    def peek(self, chaincode_id: str) -> Optional[ChaincodeInfo]:
        """Lookup that leaves the hit/miss counters alone."""
        with self._lock:
            return self._entries.get(chaincode_id)

    def fetch_lock(self, chaincode_id: str) -> threading.Lock:
        with self._lock:
            return self._fetch_locks.setdefault(chaincode_id, threading.Lock())

    def put(self, info: ChaincodeInfo) -> None:
        with self._lock:
            self._entries[info.chaincode_id] = info

    def invalidate(self, chaincode_id: str) -> None:
        with self._lock:
            self._entries.pop(chaincode_id, None)

    def clear(self) -> None:
        with self._lock:
            self._entries.clear()

    def begin_block(self) -> None:
        if self.policy is CachePolicy.PER_BLOCK:
            self.clear()

    def __contains__(self, chaincode_id) -> bool:
        return chaincode_id in self._entries

    def __len__(self) -> int:
        return len(self._entries)


def lookup_chaincode(cache: Optional[ChaincodeCache], statedb, chaincode_id: str) -> ChaincodeInfo:
    if cache is None:
        return _fetch_chaincode(statedb, chaincode_id)
    info = cache.get(chaincode_id)
    if info is not None:
        return info
    with cache.fetch_lock(chaincode_id):
        info = cache.peek(chaincode_id)  # another worker may have just filled it
        if info is None:
            info = _fetch_chaincode(statedb, chaincode_id)
            cache.put(info)
    return info


def _fetch_chaincode(statedb, chaincode_id: str) -> ChaincodeInfo:
    vv = statedb.get(Key(SYSTEM_NAMESPACE, chaincode_id.encode()))
    if vv is None:
        raise UnknownChaincode(chaincode_id)
    return ChaincodeInfo.decode(vv.value)


def invalidate_chaincode(cache: Optional[ChaincodeCache], chaincode_id: str) -> None:
    if cache is not None:
        cache.invalidate(chaincode_id)


def eval_policy(policy, satisfied_orgs) -> bool:
    if isinstance(policy, Principal):
        return policy.org_id in satisfied_orgs
    if isinstance(policy, And):
        return all(eval_policy(c, satisfied_orgs) for c in policy.children)
    if isinstance(policy, Or):
        return any(eval_policy(c, satisfied_orgs) for c in policy.children)
    if isinstance(policy, OutOf):
        need = policy.m
        if need == 0:
            return True
        for c in policy.children:
            if eval_policy(c, satisfied_orgs):
                need -= 1
                if need == 0:
                    return True
        return False
    raise TypeError(f"not a policy node: {policy!r}")


def _rw_set_ok(entries) -> bool:
    seen = set()
    for key, _ in entries:
        ns, name = key
        if not ns or "\x00" in ns or not name or key in seen:
            return False
        seen.add(key)
    return True


def syntactic_validate(block: Block) -> list:
    """Codes after the per-transaction syntax check; well-formed txs keep theirs."""
    codes = block.codes
    seen_ids = set()
    for i, tx in enumerate(block.transactions):
        bad = (
            not tx.tx_id
            or not tx.chaincode_id
            or not tx.endorsements
            or tx.tx_id in seen_ids
            or not _rw_set_ok(tx.read_set)
            or not _rw_set_ok(tx.write_set)
        )
        if tx.tx_id:
            seen_ids.add(tx.tx_id)
        if bad:
            codes[i] = ValidationCode.BAD_SYNTAX
    return codes


def validate_tx(tx, cache, statedb, cost_us: int) -> ValidationCode:
    try:
        info = lookup_chaincode(cache, statedb, tx.chaincode_id)
    except UnknownChaincode:
        return ValidationCode.UNKNOWN_CHAINCODE
    d = digest(tx.endorsed_bytes)
    orgs = {e.org_id for e in tx.endorsements if verify_endorsement(e, d, cost_us)}
    return NV if eval_policy(info.policy, orgs) else ValidationCode.POLICY_FAILURE


def vscc_validate(block: Block, cfg: VsccConfig, cache: Optional[ChaincodeCache], statedb,
                  pool: Optional[Executor] = None, codes: Optional[list] = None) -> list:
    """Run vscc over every not-yet-invalid tx; returns the updated code list.

    Work is split by tx index modulo ``cfg.workers``. ``codes`` defaults to the
    block's current codes. ``cache`` is ignored when ``cfg.cache_enabled`` is off.
    """
    codes = list(block.codes if codes is None else codes)
    if not cfg.cache_enabled:
        cache = None
    elif cache is not None:
        cache.begin_block()
    todo = [i for i, c in enumerate(codes) if c == NV]
    txs = block.transactions
    cost = cfg.verification_cost_us

    def work(part):
        return [(i, validate_tx(txs[i], cache, statedb, cost)) for i in part]

    n = cfg.workers
    parts = [[] for _ in range(n)]
    for i in todo:
        parts[i % n].append(i)
    parts = [p for p in parts if p]
    if len(parts) <= 1:
        results = [work(p) for p in parts]
    else:
        own_pool = pool is None
        if own_pool:
            pool = ThreadPoolExecutor(cfg.workers, thread_name_prefix="vscc")
        try:
            futures = [pool.submit(work, p) for p in parts]
            results = [f.result() for f in futures]
        finally:
            if own_pool:
                pool.shutdown()
    for part in results:
        for i, code in part:
            codes[i] = code
    return codes

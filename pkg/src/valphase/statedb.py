"""Versioned state database with a fast embedded and a slow "remote" backend.

Both backends keep the same on-disk layout (a :class:`~valphase.kvstore.KVStore`).
Stored keys are ``namespace \\x00 name``; stored values are
``u64 block_height | u32 tx_index | value`` (little-endian). The savepoint
lives under the reserved key ``\\x00savepoint`` in the same atomic batch as
the writes it covers.
"""

from __future__ import annotations

import enum
import functools
import struct
import threading
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from operator import itemgetter
from typing import NamedTuple, Optional, Sequence

from valphase.core import Key, Version
from valphase.errors import StorageError
from valphase.kvstore import FaultInjector, KVStore

SAVEPOINT_KEY = b"\x00savepoint"

_VERSION = struct.Struct("<QI")
_U64 = struct.Struct("<Q")


class BackendKind(enum.Enum):
    FAST_EMBEDDED = "fast"  # LevelDB-like: reads folded into mvcc, no bulk read
    SLOW_REMOTE = "slow"  # CouchDB-like: every call pays a round trip, bulk read

    @classmethod
    def parse(cls, text: str) -> "BackendKind":
        aliases = {"fast": cls.FAST_EMBEDDED, "leveldb": cls.FAST_EMBEDDED,
                   "slow": cls.SLOW_REMOTE, "couchdb": cls.SLOW_REMOTE}
        try:
            return aliases[text.strip().lower()]
        except KeyError:
            raise ValueError(f"unknown backend {text!r} (fast|slow)") from None


class VersionedValue(NamedTuple):
    value: bytes
    version: Version


@dataclass(frozen=True)
class LatencyModel:
    """Per-call delays in microseconds for the slow backend."""

    read_base_us: int = 300
    read_per_key_us: int = 20
    write_base_us: int = 500
    write_per_key_us: int = 30
    bulk_base_us: int = 400
    bulk_per_key_us: int = 5

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be non-negative")

    @classmethod
    def zero(cls) -> "LatencyModel":
        return cls(0, 0, 0, 0, 0, 0)

    def read_cost(self, n: int = 1) -> int:
        return n * (self.read_base_us + self.read_per_key_us)

    def bulk_cost(self, n: int) -> int:
        return self.bulk_base_us + n * self.bulk_per_key_us

    def write_cost(self, n: int) -> int:
        return self.write_base_us + n * self.write_per_key_us


@functools.lru_cache(maxsize=1 << 16)
def encode_key(key: Key) -> bytes:
    ns = key.namespace
    if not ns or "\x00" in ns:
        raise ValueError(f"invalid namespace {ns!r}")
    return ns.encode() + b"\x00" + key.name


def decode_key(raw: bytes) -> Key:
    ns, _, name = raw.partition(b"\x00")
    return Key(ns.decode(), name)


def encode_value(value: bytes, version: Version) -> bytes:
    return _VERSION.pack(version[0], version[1]) + value


def decode_value(raw: bytes) -> VersionedValue:
    h, i = _VERSION.unpack_from(raw)
    return VersionedValue(raw[12:], Version(h, i))


class StateDB:
    """Fast embedded backend; also the base the slow backend wraps."""

    kind = BackendKind.FAST_EMBEDDED

    def __init__(self, path, sync: bool = True, faults: Optional[FaultInjector] = None):
        self.store = KVStore(path, sync=sync, faults=faults, fault_point="statedb.apply")
        self._stats_lock = threading.Lock()
        self.stats = Counter()

    def _count(self, what: str, n: int = 1) -> None:
        with self._stats_lock:
            self.stats[what] += n

    def reset_stats(self) -> None:
        with self._stats_lock:
            self.stats.clear()

    # -- reads ----------------------------------------------------------------

    def _get(self, key: Key) -> Optional[VersionedValue]:
        raw = self.store.get(encode_key(key))
        return None if raw is None else decode_value(raw)

    def _bulk_get(self, keys: Sequence[Key]) -> list:
        raws = self.store.get_many([encode_key(k) for k in keys])
        return [None if r is None else decode_value(r) for r in raws]

    def get(self, key: Key) -> Optional[VersionedValue]:
        self._count("get")
        self._count("get:" + key.namespace)
        return self._get(key)

    def bulk_get(self, keys: Sequence[Key]) -> list:
        self._count("bulk_get")
        self._count("bulk_keys", len(keys))
        return self._bulk_get(keys)

    def _savepoint(self) -> Optional[int]:
        raw = self.store.get(SAVEPOINT_KEY)
        return None if raw is None else _U64.unpack(raw)[0]

    def get_savepoint(self) -> Optional[int]:
        return self._savepoint()

    # -- writes ---------------------------------------------------------------

    def _batch_ops(self, block_height: int, writes) -> list:
        sp = self._savepoint()
        if block_height < 0 or (sp is not None and block_height <= sp):
            raise StorageError(
                f"write batch for height {block_height} does not advance savepoint {sp}"
            )
        ops = []
        pack = _VERSION.pack
        for tx_index, write_set in sorted(writes, key=itemgetter(0)):
            vh = pack(block_height, tx_index)
            ops += [(encode_key(key), None if value is None else vh + value)
                    for key, value in write_set]
        ops.append((SAVEPOINT_KEY, _U64.pack(block_height)))
        return ops

    def _apply(self, ops) -> None:
        self.store.write_batch(ops)

    def apply_write_batch(self, block_height: int, writes) -> None:
        """Apply ``[(tx_index, write_set), ...]`` atomically at ``block_height``."""
        ops = self._batch_ops(block_height, writes)
        self._count("write_batch")
        self._apply(ops)

    # -- maintenance ----------------------------------------------------------

    def dump(self) -> list:
        """Raw ``(key, value)`` pairs in key order, savepoint included."""
        return self.store.items()

    def snapshot_map(self) -> dict:
        return {decode_key(k): decode_value(v) for k, v in self.store.items()
                if k != SAVEPOINT_KEY}

    def wipe(self) -> None:
        self.store.wipe()

    def close(self) -> None:
        self.store.close()


class RemoteStateDB(StateDB):
    """The embedded store behind a simulated client-server hop.

    Every call is shipped to a service thread pool that sleeps for the
    :class:`LatencyModel` cost before touching the store, and the caller
    blocks on the reply.
    """

    kind = BackendKind.SLOW_REMOTE

    def __init__(self, path, latency: Optional[LatencyModel] = None, sync: bool = True,
                 faults: Optional[FaultInjector] = None, server_threads: int = 1):
        super().__init__(path, sync=sync, faults=faults)
        self.latency = latency or LatencyModel()
        if server_threads < 1:
            raise ValueError("server_threads must be >= 1")
        self._server = ThreadPoolExecutor(server_threads, thread_name_prefix="statedb-server")

    def _call(self, cost_us: int, fn, *args):
        def serve():
            if cost_us:
                time.sleep(cost_us / 1e6)
            return fn(*args)
        return self._server.submit(serve).result()

    def get(self, key: Key) -> Optional[VersionedValue]:
        self._count("get")
        self._count("get:" + key.namespace)
        return self._call(self.latency.read_cost(1), self._get, key)

    def bulk_get(self, keys: Sequence[Key]) -> list:
        self._count("bulk_get")
        self._count("bulk_keys", len(keys))
        keys = list(keys)
        if not keys:
            return []
        return self._call(self.latency.bulk_cost(len(keys)), self._bulk_get, keys)

    def get_savepoint(self) -> Optional[int]:
        return self._call(self.latency.read_cost(1), self._savepoint)

    def apply_write_batch(self, block_height: int, writes) -> None:
        ops = self._batch_ops(block_height, writes)
        self._count("write_batch")
        self._call(self.latency.write_cost(len(ops) - 1), self._apply, ops)

    def close(self) -> None:
        self._server.shutdown(wait=True)
        super().close()


def open_statedb(kind: BackendKind, path, latency: Optional[LatencyModel] = None,
                 sync: bool = True, faults: Optional[FaultInjector] = None,
                 server_threads: int = 1) -> StateDB:
    if kind is BackendKind.FAST_EMBEDDED:
        return StateDB(path, sync=sync, faults=faults)
    return RemoteStateDB(path, latency=latency, sync=sync, faults=faults,
                         server_threads=server_threads)

"""Small embedded ordered key-value store with atomic, durable write batches.

Data lives in memory; every batch is appended to ``kv.log`` as one framed
record (``u32 length | u32 crc32 | payload``) before it is applied, so a
torn or corrupt tail is simply dropped on reopen. The sorted key order
needed by prefix scans is rebuilt lazily after inserts or deletes, since
writes vastly outnumber scans.
"""

from __future__ import annotations

import binascii
import bisect
import os
import struct
import threading
import zlib
from pathlib import Path
from typing import Iterable, Iterator, Optional

from valphase.errors import StorageError

_FRAME = struct.Struct("<II")
_U32 = struct.Struct("<I")

LOG_NAME = "kv.log"


class FaultInjector:
    """Scheduled failures at named points, e.g. ``"statedb.apply"``.

    ``arm(point, times=1)`` makes the next ``times`` hits at that point raise
    StorageError; ``times=None`` fails forever. ``torn=True`` writes half of
    the record before failing, for stores that support it.
    """

    def __init__(self):
        self._plan: dict[str, list] = {}
        self._lock = threading.Lock()
        self.hits: dict[str, int] = {}

    def arm(self, point: str, times: Optional[int] = 1, torn: bool = False) -> None:
        with self._lock:
            self._plan[point] = [times, torn]

    def disarm(self, point: Optional[str] = None) -> None:
        with self._lock:
            if point is None:
                self._plan.clear()
            else:
                self._plan.pop(point, None)

    def check(self, point: str) -> Optional[bool]:
        """Return None to proceed, else the torn flag of the failure to inject."""
        with self._lock:
            self.hits[point] = self.hits.get(point, 0) + 1
            entry = self._plan.get(point)
            if entry is None:
                return None
            times, torn = entry
            if times is not None:
                if times <= 0:
                    return None
                entry[0] = times - 1
            return torn


def encode_batch(ops) -> bytes:
    pack = _U32.pack
    out = [pack(len(ops))]
    for key, value in ops:
        if value is None:
            out += (pack(len(key)), key, b"\x00")
        else:
            out += (pack(len(key)), key, b"\x01", pack(len(value)), value)
    return b"".join(out)


def decode_batch(payload: bytes) -> list:
    mv = memoryview(payload)
    (n,) = _U32.unpack_from(mv, 0)
    pos = 4
    ops = []
    for _ in range(n):
        (klen,) = _U32.unpack_from(mv, pos)
        pos += 4
        key = bytes(mv[pos:pos + klen])
        pos += klen
        flag = mv[pos]
        pos += 1
        if flag:
            (vlen,) = _U32.unpack_from(mv, pos)
            pos += 4
            value = bytes(mv[pos:pos + vlen])
            pos += vlen
        else:
            value = None
        ops.append((key, value))
    if pos != len(payload):
        raise ValueError("trailing bytes in batch")
    return ops


class KVStore:
    def __init__(self, path, sync: bool = True, faults: Optional[FaultInjector] = None,
                 fault_point: str = "kv.write"):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self.sync = sync
        self.faults = faults
        self.fault_point = fault_point
        self._data: dict[bytes, bytes] = {}
        self._sorted: Optional[list] = []  # None: rebuild before the next scan
        self._lock = threading.RLock()
        self._log_path = self.path / LOG_NAME
        self._end = 0
        self._replay()
        durable = os.O_SYNC if sync else 0  # write + fsync in one syscall
        self._fd = os.open(self._log_path, os.O_WRONLY | os.O_CREAT | os.O_APPEND | durable, 0o644)

    def _replay(self) -> None:
        if not self._log_path.exists():
            return
        buf = self._log_path.read_bytes()
        pos = 0
        good = 0
        while pos + _FRAME.size <= len(buf):
            length, crc = _FRAME.unpack_from(buf, pos)
            start = pos + _FRAME.size
            payload = buf[start:start + length]
            if len(payload) < length or zlib.crc32(payload) != crc:
                break
            try:
                ops = decode_batch(payload)
            except (ValueError, struct.error):
                break
            self._apply(ops)
            pos = start + length
            good = pos
        if good != len(buf):
            with open(self._log_path, "r+b") as f:
                f.truncate(good)
        self._end = good

    def _apply(self, ops) -> None:
        data = self._data
        before = len(data)
        for key, value in ops:
            if value is None:
                if data.pop(key, None) is not None:
                    self._sorted = None
            else:
                data[key] = value
        if len(data) != before:
            self._sorted = None

    def _sorted_keys(self) -> list:
        if self._sorted is None:
            self._sorted = sorted(self._data)
        return self._sorted

    def write_batch(self, ops) -> None:
        """Atomically apply ``[(key, value_or_None), ...]``; later ops win."""
        ops = list(ops)
        payload = encode_batch(ops)
        # same value as zlib.crc32, but computed without releasing the GIL
        record = _FRAME.pack(len(payload), binascii.crc32(payload)) + payload
        with self._lock:
            end = self._end
            if self.faults is not None:
                torn = self.faults.check(self.fault_point)
                if torn is not None:
                    if torn:
                        # what a crash mid-write leaves behind; a live store
                        # cuts it off so later appends stay parseable
                        os.write(self._fd, record[: len(record) // 2])
                        os.ftruncate(self._fd, end)
                    raise StorageError(f"injected failure at {self.fault_point}")
            try:
                os.write(self._fd, record)
            except OSError as e:
                os.ftruncate(self._fd, end)
                raise StorageError(str(e)) from e
            self._end = end + len(record)
            self._apply(ops)

    def get(self, key: bytes) -> Optional[bytes]:
        with self._lock:
            return self._data.get(key)

    def get_many(self, keys: Iterable[bytes]) -> list:
        with self._lock:
            data = self._data
            return [data.get(k) for k in keys]

    def scan_prefix(self, prefix: bytes) -> Iterator[tuple]:
        with self._lock:
            keys = self._sorted_keys()
            i = bisect.bisect_left(keys, prefix)
            out = []
            while i < len(keys) and keys[i].startswith(prefix):
                out.append((keys[i], self._data[keys[i]]))
                i += 1
        return iter(out)

    def items(self) -> list:
        with self._lock:
            return [(k, self._data[k]) for k in self._sorted_keys()]

    def __len__(self) -> int:
        return len(self._data)

    def close(self) -> None:
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None

    def wipe(self) -> None:
        """Delete all contents (used to simulate a lost database)."""
        with self._lock:
            os.ftruncate(self._fd, 0)
            self._end = 0
            self._data.clear()
            self._sorted = []

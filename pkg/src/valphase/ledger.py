"""Append-only block store and the key history index.

Block file ``blocks.dat`` holds one frame per block,
``u32 length | u32 crc32 | block bytes`` (little-endian, block bytes as in
:mod:`valphase.core`). ``index.dat`` holds one little-endian u64 file offset
per block number and is rebuilt from the block file if it is short or stale.

History entries live in their own :class:`KVStore` under composite keys
``u32be len(ns) | ns | u32be len(name) | name | u64be height | u32be tx_index``
so the history of one key is a prefix scan in (height, tx_index) order.
"""

from __future__ import annotations

import binascii
import functools
import os
import struct
import threading
import zlib
from pathlib import Path
from typing import Optional

from valphase.core import Block, Key, ValidationCode
from valphase.errors import NotFound, ProtocolError, StorageError
from valphase.kvstore import FaultInjector, KVStore

_FRAME = struct.Struct("<II")
_OFFSET = struct.Struct("<Q")
_BE_LEN = struct.Struct(">I")
_BE_POS = struct.Struct(">QI")
_U64 = struct.Struct("<Q")

HISTORY_SAVEPOINT_KEY = b"\x00savepoint"


class BlockStore:
    def __init__(self, path, sync: bool = True, faults: Optional[FaultInjector] = None):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self.sync = sync
        self.faults = faults
        self._lock = threading.RLock()
        self._blocks_path = self.path / "blocks.dat"
        self._index_path = self.path / "index.dat"
        self._offsets: list[int] = []
        self._last_hash: Optional[bytes] = None
        self._recover()
        # O_SYNC makes each write durable in one syscall, so a commit thread
        # gives up the GIL once per append instead of twice
        durable = os.O_SYNC if sync else 0
        self._fd = os.open(self._blocks_path, os.O_RDWR | os.O_CREAT | durable, 0o644)
        self._index_fd = os.open(self._index_path, os.O_WRONLY | os.O_CREAT | os.O_APPEND, 0o644)

    def _recover(self) -> None:
        """Load the index, extend it from the block file, cut torn tails."""
        data = self._blocks_path.read_bytes() if self._blocks_path.exists() else b""
        offsets = []
        if self._index_path.exists():
            raw = self._index_path.read_bytes()
            offsets = [o for (o,) in _OFFSET.iter_unpack(raw[: len(raw) // 8 * 8])]
        # trust indexed frames only while they are intact and contiguous
        good = []
        pos = 0
        for off in offsets:
            if off != pos or self._frame_end(data, off) is None:
                break
            good.append(off)
            pos = self._frame_end(data, off)
        while True:
            end = self._frame_end(data, pos)
            if end is None:
                break
            good.append(pos)
            pos = end
        self._offsets = good
        self._end = pos
        if len(data) != pos:
            with open(self._blocks_path, "r+b") as f:
                f.truncate(pos)
        if good != offsets:
            self._index_path.write_bytes(b"".join(_OFFSET.pack(o) for o in good))
        if good:
            self._last_hash = self._read_block(good[-1], data).header_hash()

    @staticmethod
    def _frame_end(data: bytes, pos: int) -> Optional[int]:
        if pos + _FRAME.size > len(data):
            return None
        length, crc = _FRAME.unpack_from(data, pos)
        start = pos + _FRAME.size
        body = data[start:start + length]
        if len(body) < length or zlib.crc32(body) != crc:
            return None
        return start + length

    @staticmethod
    def _read_block(off: int, data: bytes) -> Block:
        length, _ = _FRAME.unpack_from(data, off)
        start = off + _FRAME.size
        return Block.decode(data[start:start + length])

    def height(self) -> int:
        """Number of the last block, or -1 for an empty ledger."""
        return len(self._offsets) - 1

    @property
    def last_hash(self) -> Optional[bytes]:
        return self._last_hash

    def append_block(self, block: Block) -> None:
        with self._lock:
            expected = len(self._offsets)
            if block.number != expected:
                raise ProtocolError(f"expected block {expected}, got {block.number}")
            body = block.encode()
            # binascii holds the GIL while it checksums (zlib drops it for
            # large buffers), so the frame reaches the disk before a
            # concurrent commit task gets to run; the value is the same
            frame = _FRAME.pack(len(body), binascii.crc32(body)) + body
            # the end offset is tracked here rather than asked of the kernel:
            # an lseek would hand the GIL to a concurrent commit task
            end = self._end
            if self.faults is not None:
                torn = self.faults.check("ledger.append")
                if torn is not None:
                    if torn:
                        os.pwrite(self._fd, frame[: len(frame) // 2], end)
                        os.ftruncate(self._fd, end)
                    raise StorageError("injected failure at ledger.append")
            try:
                os.pwrite(self._fd, frame, end)
                os.write(self._index_fd, _OFFSET.pack(end))
            except OSError as e:
                os.ftruncate(self._fd, end)
                raise StorageError(str(e)) from e
            self._offsets.append(end)
            self._end = end + len(frame)
            self._last_hash = block.header_hash()

    def get_block(self, number: int) -> Block:
        with self._lock:
            if not 0 <= number < len(self._offsets):
                raise NotFound(f"block {number} not in ledger (height {self.height()})")
            off = self._offsets[number]
            hdr = os.pread(self._fd, _FRAME.size, off)
            length, crc = _FRAME.unpack(hdr)
            body = os.pread(self._fd, length, off + _FRAME.size)
        if zlib.crc32(body) != crc:
            raise StorageError(f"block {number} is corrupt")
        return Block.decode(body)

    def raw_bytes(self) -> bytes:
        with self._lock:
            return self._blocks_path.read_bytes()

    def close(self) -> None:
        if self._fd is not None:
            os.close(self._fd)
            os.close(self._index_fd)
            self._fd = None


@functools.lru_cache(maxsize=1 << 16)
def history_prefix(key: Key) -> bytes:
    ns = key.namespace.encode()
    return _BE_LEN.pack(len(ns)) + ns + _BE_LEN.pack(len(key.name)) + key.name


def history_key(key: Key, block_height: int, tx_index: int) -> bytes:
    return history_prefix(key) + _BE_POS.pack(block_height, tx_index)


def history_entries(block: Block) -> list:
    """``(key, height, tx_index)`` for every written key of every valid tx."""
    out = []
    for i, tx in enumerate(block.transactions):
        if tx.validation_code == ValidationCode.VALID:
            for key, _ in tx.write_set:
                out.append((key, block.number, i))
    return out


class HistoryDB:
    def __init__(self, path, sync: bool = True, faults: Optional[FaultInjector] = None):
        self.store = KVStore(path, sync=sync, faults=faults, fault_point="history.append")

    def append_history(self, block: Block) -> None:
        """Index the block's valid writes; re-appending the same block is harmless."""
        n = block.number
        pos = _BE_POS.pack
        ops = []
        for i, tx in enumerate(block.transactions):
            code = tx.validation_code
            if code == ValidationCode.VALID:
                ops += [(history_prefix(k) + pos(n, i), b"") for k, _ in tx.write_set]
            elif code == ValidationCode.NOT_VALIDATED:
                raise ProtocolError(f"block {n} has unvalidated transactions")
        ops.append((HISTORY_SAVEPOINT_KEY, _U64.pack(block.number)))
        self.store.write_batch(ops)

    def history_of(self, key: Key) -> list:
        prefix = history_prefix(key)
        n = len(prefix)
        return [tuple(_BE_POS.unpack(k[n:])) for k, _ in self.store.scan_prefix(prefix)
                if len(k) == n + _BE_POS.size]

    def get_savepoint(self) -> Optional[int]:
        raw = self.store.get(HISTORY_SAVEPOINT_KEY)
        return None if raw is None else _U64.unpack(raw)[0]

    def dump(self) -> list:
        return self.store.items()

    def wipe(self) -> None:
        self.store.wipe()

    def close(self) -> None:
        self.store.close()

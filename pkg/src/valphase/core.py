"""Domain types, canonical serialization, and endorsement tags.

Wire format (all integers little-endian)::

    str/bytes   u32 length, raw bytes (str is utf-8)
    read entry  str namespace, bytes name, u8 has_version, [u64 height, u32 tx_index]
    write entry str namespace, bytes name, u8 has_value, [bytes value]
    endorsement str org_id, str signer_id, bytes tag
    tx data     str tx_id, str chaincode_id, bytes payload,
                u32 n, n * read entry, u32 n, n * write entry,
                u32 n, n * endorsement
    block       u64 number, 32B prev_hash, 32B data_hash,
                u32 n, n * bytes(tx data), u32 n, n * u8 validation code

``data_hash`` is SHA-256 over the concatenated ``bytes(tx data)`` fields, so
validation codes (block metadata) never change it. Endorsement tags are
HMAC-SHA256 keyed by the signer id over the endorsed digest, which covers
everything in tx data before the endorsement list.
"""

from __future__ import annotations

import copy
import enum
import hashlib
import hmac
import struct
import time
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Optional, Sequence

from valphase.errors import ConfigError

DIGEST_SIZE = 32
ZERO_HASH = bytes(DIGEST_SIZE)
SYSTEM_NAMESPACE = "lscc"

_U8 = struct.Struct("<B")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_VERSION = struct.Struct("<QI")


def digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


class Version(NamedTuple):
    block_height: int
    tx_index: int


class Key(NamedTuple):
    namespace: str
    name: bytes


class ReadEntry(NamedTuple):
    key: Key
    version: Optional[Version]  # None: key was absent when endorsed


class WriteEntry(NamedTuple):
    key: Key
    value: Optional[bytes]  # None: delete


ReadSet = tuple  # tuple[ReadEntry, ...]
WriteSet = tuple  # tuple[WriteEntry, ...]


class ValidationCode(enum.IntEnum):
    NOT_VALIDATED = 0
    VALID = 1
    BAD_SYNTAX = 2
    POLICY_FAILURE = 3
    UNKNOWN_CHAINCODE = 4
    MVCC_CONFLICT = 5


class Endorsement(NamedTuple):
    org_id: str
    signer_id: str
    tag: bytes


# -- endorsement tags -------------------------------------------------------

_verification_cost_us = 0


def set_verification_cost(us: int) -> None:
    """Busy-wait this many microseconds inside every tag verification."""
    global _verification_cost_us
    if us < 0:
        raise ValueError("verification cost must be non-negative")
    _verification_cost_us = int(us)


def make_tag(payload_digest: bytes, signer_id: str) -> bytes:
    return hmac.new(signer_id.encode(), payload_digest, hashlib.sha256).digest()


def make_endorsement(payload_digest: bytes, org_id: str, signer_id: str) -> Endorsement:
    return Endorsement(org_id, signer_id, make_tag(payload_digest, signer_id))


def verify_endorsement(e: Endorsement, payload_digest: bytes, cost_us: Optional[int] = None) -> bool:
    cost = _verification_cost_us if cost_us is None else cost_us
    if cost:
        deadline = time.perf_counter() + cost / 1e6
        while time.perf_counter() < deadline:
            pass
    return hmac.compare_digest(make_tag(payload_digest, e.signer_id), e.tag)


# -- serialization primitives -----------------------------------------------

def _put_bytes(out: list, b: bytes) -> None:
    out.append(_U32.pack(len(b)))
    out.append(b)


def _put_str(out: list, s: str) -> None:
    _put_bytes(out, s.encode())


class Reader:
    """Cursor over a bytes buffer; raises ValueError on truncation."""

    __slots__ = ("buf", "pos")

    def __init__(self, buf: bytes, pos: int = 0):
        self.buf = buf
        self.pos = pos

    def take(self, n: int) -> bytes:
        end = self.pos + n
        if end > len(self.buf):
            raise ValueError("truncated record")
        b = self.buf[self.pos:end]
        self.pos = end
        return b

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def u64(self) -> int:
        return _U64.unpack(self.take(8))[0]

    def bytes_(self) -> bytes:
        return self.take(self.u32())

    def str_(self) -> str:
        return self.bytes_().decode()

    def at_end(self) -> bool:
        return self.pos == len(self.buf)


def encode_endorsed_part(tx_id, chaincode_id, payload, read_set, write_set) -> bytes:
    out: list = []
    _put_str(out, tx_id)
    _put_str(out, chaincode_id)
    _put_bytes(out, payload)
    out.append(_U32.pack(len(read_set)))
    for (ns, name), ver in read_set:
        _put_str(out, ns)
        _put_bytes(out, name)
        if ver is None:
            out.append(b"\x00")
        else:
            out.append(b"\x01")
            out.append(_VERSION.pack(ver[0], ver[1]))
    out.append(_U32.pack(len(write_set)))
    for (ns, name), value in write_set:
        _put_str(out, ns)
        _put_bytes(out, name)
        if value is None:
            out.append(b"\x00")
        else:
            out.append(b"\x01")
            _put_bytes(out, value)
    return b"".join(out)


def _encode_endorsements(endorsements) -> bytes:
    out: list = [_U32.pack(len(endorsements))]
    for org, signer, tag in endorsements:
        _put_str(out, org)
        _put_str(out, signer)
        _put_bytes(out, tag)
    return b"".join(out)


# -- transactions and blocks -----------------------------------------------

@dataclass(eq=True)
class Transaction:
    tx_id: str
    chaincode_id: str
    payload: bytes
    read_set: tuple
    write_set: tuple
    endorsements: tuple = ()
    validation_code: ValidationCode = ValidationCode.NOT_VALIDATED

    # Everything except validation_code is treated as immutable; the encoded
    # forms below are computed once.

    @cached_property
    def endorsed_bytes(self) -> bytes:
        return encode_endorsed_part(
            self.tx_id, self.chaincode_id, self.payload, self.read_set, self.write_set
        )

    @cached_property
    def payload_digest(self) -> bytes:
        return digest(self.endorsed_bytes)

    @cached_property
    def data_bytes(self) -> bytes:
        return self.endorsed_bytes + _encode_endorsements(self.endorsements)

    @classmethod
    def decode(cls, data: bytes) -> "Transaction":
        r = Reader(data)
        tx = _read_tx(r)
        if not r.at_end():
            raise ValueError("trailing bytes after transaction")
        return tx


def _read_tx(r: Reader) -> Transaction:
    tx_id = r.str_()
    chaincode_id = r.str_()
    payload = r.bytes_()
    reads = []
    for _ in range(r.u32()):
        key = Key(r.str_(), r.bytes_())
        ver = Version(*_VERSION.unpack(r.take(12))) if r.u8() else None
        reads.append(ReadEntry(key, ver))
    writes = []
    for _ in range(r.u32()):
        key = Key(r.str_(), r.bytes_())
        value = r.bytes_() if r.u8() else None
        writes.append(WriteEntry(key, value))
    ends = []
    for _ in range(r.u32()):
        ends.append(Endorsement(r.str_(), r.str_(), r.bytes_()))
    return Transaction(tx_id, chaincode_id, payload, tuple(reads), tuple(writes), tuple(ends))


def make_transaction(tx_id, chaincode_id, payload, read_set, write_set, signers) -> Transaction:
    """Build a transaction endorsed by every ``(org_id, signer_id)`` in signers."""
    tx = Transaction(tx_id, chaincode_id, payload, tuple(read_set), tuple(write_set))
    d = tx.payload_digest
    tx.endorsements = tuple(make_endorsement(d, org, signer) for org, signer in signers)
    tx.__dict__.pop("data_bytes", None)
    return tx


def compute_data_hash(transactions: Sequence[Transaction]) -> bytes:
    if not transactions:
        raise ValueError("a block needs at least one transaction")
    h = hashlib.sha256()
    for tx in transactions:
        data = tx.data_bytes
        h.update(_U32.pack(len(data)))
        h.update(data)
    return h.digest()


@dataclass(eq=True)
class Block:
    number: int
    prev_hash: bytes
    data_hash: bytes
    transactions: list

    @classmethod
    def assemble(cls, number: int, prev_hash: bytes, transactions) -> "Block":
        txs = list(transactions)
        return cls(number, prev_hash, compute_data_hash(txs), txs)

    def header_hash(self) -> bytes:
        return digest(_U64.pack(self.number) + self.prev_hash + self.data_hash)

    @property
    def codes(self) -> list:
        return [tx.validation_code for tx in self.transactions]

    def set_codes(self, codes) -> None:
        for tx, code in zip(self.transactions, codes, strict=True):
            tx.validation_code = ValidationCode(code)

    def encode(self) -> bytes:
        out = [_U64.pack(self.number), self.prev_hash, self.data_hash,
               _U32.pack(len(self.transactions))]
        pack = _U32.pack
        for tx in self.transactions:
            data = tx.data_bytes
            out += (pack(len(data)), data)
        out.append(_U32.pack(len(self.transactions)))
        out.append(bytes(int(tx.validation_code) for tx in self.transactions))
        return b"".join(out)

    @classmethod
    def decode(cls, data: bytes) -> "Block":
        r = Reader(data)
        number = r.u64()
        prev_hash = r.take(DIGEST_SIZE)
        data_hash = r.take(DIGEST_SIZE)
        txs = [Transaction.decode(r.bytes_()) for _ in range(r.u32())]
        n = r.u32()
        if n != len(txs):
            raise ValueError("validation code count does not match transactions")
        for tx, code in zip(txs, r.take(n)):
            tx.validation_code = ValidationCode(code)
        if not r.at_end():
            raise ValueError("trailing bytes after block")
        return cls(number, prev_hash, data_hash, txs)

    def copy(self) -> "Block":
        """Deep enough copy for independent validation runs (codes reset)."""
        txs = []
        for t in self.transactions:
            c = copy.copy(t)
            c.validation_code = ValidationCode.NOT_VALIDATED
            txs.append(c)
        return Block(self.number, self.prev_hash, self.data_hash, txs)


# -- endorsement policies ---------------------------------------------------

@dataclass(frozen=True)
class Principal:
    org_id: str

    def __str__(self):
        return self.org_id


@dataclass(frozen=True)
class And:
    children: tuple

    def __str__(self):
        return f"AND({','.join(map(str, self.children))})"


@dataclass(frozen=True)
class Or:
    children: tuple

    def __str__(self):
        return f"OR({','.join(map(str, self.children))})"


@dataclass(frozen=True)
class OutOf:
    m: int
    children: tuple

    def __post_init__(self):
        if not 0 <= self.m <= len(self.children):
            raise ValueError(f"OUTOF needs 0 <= m <= {len(self.children)}, got {self.m}")

    def __str__(self):
        return f"OUTOF({self.m},{','.join(map(str, self.children))})"


_POLICY_TAGS = {Principal: 0, And: 1, Or: 2, OutOf: 3}


def encode_policy(p) -> bytes:
    out: list = []
    _encode_policy(p, out)
    return b"".join(out)


def _encode_policy(p, out):
    out.append(_U8.pack(_POLICY_TAGS[type(p)]))
    if isinstance(p, Principal):
        _put_str(out, p.org_id)
        return
    if isinstance(p, OutOf):
        out.append(_U32.pack(p.m))
    out.append(_U32.pack(len(p.children)))
    for c in p.children:
        _encode_policy(c, out)


def _decode_policy(r: Reader):
    tag = r.u8()
    if tag == 0:
        return Principal(r.str_())
    m = r.u32() if tag == 3 else None
    children = tuple(_decode_policy(r) for _ in range(r.u32()))
    if tag == 1:
        return And(children)
    if tag == 2:
        return Or(children)
    if tag == 3:
        return OutOf(m, children)
    raise ValueError(f"bad policy node tag {tag}")


def decode_policy(data: bytes):
    r = Reader(data)
    p = _decode_policy(r)
    if not r.at_end():
        raise ValueError("trailing bytes after policy")
    return p


def parse_policy(text: str):
    """Parse ``AND(Org1,OR(Org2,Org3))`` / ``OUTOF(2,A,B,C)`` notation."""
    pos = 0
    s = text.replace(" ", "")

    def ident():
        nonlocal pos
        start = pos
        while pos < len(s) and s[pos] not in "(),":
            pos += 1
        if start == pos:
            raise ConfigError(f"expected identifier at offset {start} in {text!r}")
        return s[start:pos]

    def expect(ch):
        nonlocal pos
        if pos >= len(s) or s[pos] != ch:
            raise ConfigError(f"expected {ch!r} at offset {pos} in {text!r}")
        pos += 1

    def node():
        nonlocal pos
        name = ident()
        if pos < len(s) and s[pos] == "(":
            pos += 1
            op = name.upper()
            m = None
            if op == "OUTOF":
                m = int(ident())
                expect(",")
            children = [node()]
            while pos < len(s) and s[pos] == ",":
                pos += 1
                children.append(node())
            expect(")")
            if op == "AND":
                return And(tuple(children))
            if op == "OR":
                return Or(tuple(children))
            if op == "OUTOF":
                try:
                    return OutOf(m, tuple(children))
                except ValueError as e:
                    raise ConfigError(str(e)) from None
            raise ConfigError(f"unknown policy operator {name!r}")
        return Principal(name)

    p = node()
    if pos != len(s):
        raise ConfigError(f"unexpected {s[pos:]!r} in {text!r}")
    return p


@dataclass(frozen=True)
class ChaincodeInfo:
    chaincode_id: str
    version: str
    policy: object = field(compare=True)

    def encode(self) -> bytes:
        out: list = []
        _put_str(out, self.chaincode_id)
        _put_str(out, self.version)
        _put_bytes(out, encode_policy(self.policy))
        return b"".join(out)

    @classmethod
    def decode(cls, data: bytes) -> "ChaincodeInfo":
        r = Reader(data)
        info = cls(r.str_(), r.str_(), decode_policy(r.bytes_()))
        if not r.at_end():
            raise ValueError("trailing bytes after chaincode info")
        return info

    @property
    def key(self) -> Key:
        return Key(SYSTEM_NAMESPACE, self.chaincode_id.encode())

import hashlib
import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from valphase.core import (
    ZERO_HASH, And, Block, ChaincodeInfo, Endorsement, Key, Or, OutOf, Principal, ReadEntry,
    Transaction, ValidationCode, Version, WriteEntry, compute_data_hash, decode_policy,
    encode_policy, make_tag, make_transaction, parse_policy, verify_endorsement,
)
from valphase.errors import ConfigError

SIGNERS = [("Org1", "peer0.Org1"), ("Org2", "peer0.Org2")]


def _tx(tx_id="t1", payload=b"p", reads=(), writes=()):
    return make_transaction(tx_id, "cc", payload, reads, writes, SIGNERS)


keys = st.builds(Key, st.sampled_from(["cc", "lscc", "other"]), st.binary(min_size=1, max_size=8))
versions = st.one_of(st.none(), st.builds(Version, st.integers(0, 2**64 - 1), st.integers(0, 2**32 - 1)))
txs = st.builds(
    lambda tid, cc, payload, reads, writes: make_transaction(tid, cc, payload, reads, writes, SIGNERS),
    st.text(max_size=12), st.text(max_size=8), st.binary(max_size=32),
    st.lists(st.builds(ReadEntry, keys, versions), max_size=4),
    st.lists(st.builds(WriteEntry, keys, st.one_of(st.none(), st.binary(max_size=16))), max_size=4),
)


@settings(max_examples=200, deadline=None)
@given(txs)
def test_transaction_round_trip(tx):
    back = Transaction.decode(tx.data_bytes)
    assert back == tx
    assert back.data_bytes == tx.data_bytes


@settings(max_examples=100, deadline=None)
@given(st.lists(txs, min_size=1, max_size=5), st.integers(0, 2**40),
       st.lists(st.sampled_from(list(ValidationCode)), min_size=5, max_size=5))
def test_block_round_trip(tx_list, number, codes):
    b = Block.assemble(number, ZERO_HASH, tx_list)
    b.set_codes(codes[: len(tx_list)])
    back = Block.decode(b.encode())
    assert back == b
    assert back.encode() == b.encode()


def test_block_decode_rejects_trailing_bytes():
    b = Block.assemble(0, ZERO_HASH, [_tx()])
    with pytest.raises(ValueError):
        Block.decode(b.encode() + b"\x00")
    with pytest.raises(ValueError):
        Block.decode(b.encode()[:-3])


def test_data_hash_deterministic():
    a = [_tx("a"), _tx("b")]
    b = [_tx("a"), _tx("b")]
    assert compute_data_hash(a) == compute_data_hash(b)


def test_data_hash_changes_with_one_payload_byte():
    assert compute_data_hash([_tx(payload=b"x")]) != compute_data_hash([_tx(payload=b"y")])


def test_data_hash_of_single_empty_payload_tx():
    tx = Transaction("t", "cc", b"", (), ())
    # hand-built canonical serialization: str tx_id, str cc, bytes payload, 3 empty lists
    data = (struct.pack("<I", 1) + b"t" + struct.pack("<I", 2) + b"cc" + struct.pack("<I", 0)
            + struct.pack("<I", 0) * 3)
    assert tx.data_bytes == data
    assert compute_data_hash([tx]) == hashlib.sha256(struct.pack("<I", len(data)) + data).digest()


def test_data_hash_ignores_validation_codes():
    b = Block.assemble(1, ZERO_HASH, [_tx()])
    before = b.data_hash
    b.set_codes([ValidationCode.MVCC_CONFLICT])
    assert compute_data_hash(b.transactions) == before


def test_endorsement_round_trip():
    tx = _tx()
    assert all(verify_endorsement(e, tx.payload_digest) for e in tx.endorsements)


def test_endorsement_flipped_bit_fails():
    tx = _tx()
    e = tx.endorsements[0]
    for i in (0, 17, 31):
        tag = bytearray(e.tag)
        tag[i] ^= 0x10
        assert not verify_endorsement(Endorsement(e.org_id, e.signer_id, bytes(tag)), tx.payload_digest)


def test_endorsement_wrong_digest_fails():
    tx = _tx(payload=b"one")
    other = _tx(payload=b"two")
    e = tx.endorsements[0]
    assert e.tag == make_tag(tx.payload_digest, e.signer_id)
    assert make_tag(other.payload_digest, e.signer_id) != e.tag
    assert not verify_endorsement(e, other.payload_digest)


def test_endorsement_covers_read_write_set():
    a = _tx(writes=[WriteEntry(Key("cc", b"k"), b"1")])
    b = _tx(writes=[WriteEntry(Key("cc", b"k"), b"2")])
    assert a.payload_digest != b.payload_digest


def test_version_ordering():
    assert Version(1, 5) < Version(2, 0) < Version(2, 1)
    assert max([Version(3, 0), Version(2, 9)]) == Version(3, 0)


def test_policy_parse_and_encode():
    p = parse_policy("AND(Org1, OR(Org2, OUTOF(2, A, B, C)))")
    abc = OutOf(2, (Principal("A"), Principal("B"), Principal("C")))
    assert p == And((Principal("Org1"), Or((Principal("Org2"), abc))))
    assert parse_policy(str(p)) == p
    assert decode_policy(encode_policy(p)) == p


@pytest.mark.parametrize("text", ["AND(", "AND(A,)", "OUTOF(4,A,B)", "XOR(A,B)", "A)", ""])
def test_policy_parse_errors(text):
    with pytest.raises(ConfigError):
        parse_policy(text)


def test_chaincode_info_round_trip():
    info = ChaincodeInfo("smallbank", "1.3", parse_policy("OR(Org1,Org2)"))
    assert ChaincodeInfo.decode(info.encode()) == info
    assert info.key == Key("lscc", b"smallbank")

"""Read-write conflict check that produces the final validity flags."""

from __future__ import annotations

from typing import Optional

from valphase.core import Block, ValidationCode

NV = ValidationCode.NOT_VALIDATED


def read_keys(txs) -> list:
    """Union of the read-set keys of ``txs``, first-seen order, no duplicates."""
    seen = {}
    for tx in txs:
        for key, _ in tx.read_set:
            seen.setdefault(key, None)
    return list(seen)


def build_snapshot_bulk(statedb, txs) -> dict:
    """One bulk read of every key the candidates read: ``{Key: Version | None}``."""
    keys = read_keys(txs)
    if not keys:
        return {}
    values = statedb.bulk_get(keys)
    return {k: (None if vv is None else vv.version) for k, vv in zip(keys, values)}


def mvcc_validate(block: Block, snapshot: Optional[dict], statedb,
                  codes: Optional[list] = None) -> list:
    """Mark each surviving candidate Valid or MvccConflict, in block order.

    With a snapshot (slow backend) committed versions come from it; without
    one each read goes straight to ``statedb.get``. Transactions whose code
    is already final are skipped and their reads ignored.
    """
    codes = list(block.codes if codes is None else codes)
    written = set()
    for i, tx in enumerate(block.transactions):
        if codes[i] != NV:
            continue
        ok = True
        for key, version in tx.read_set:
            if key in written:
                ok = False
                break
            if snapshot is not None:
                try:
                    committed = snapshot[key]
                except KeyError:
                    raise ValueError(f"read snapshot does not cover {key}") from None
            else:
                vv = statedb.get(key)
                committed = None if vv is None else vv.version
            if committed != version:
                ok = False
                break
        if ok:
            codes[i] = ValidationCode.VALID
            written.update(key for key, _ in tx.write_set)
        else:
            codes[i] = ValidationCode.MVCC_CONFLICT
    return codes

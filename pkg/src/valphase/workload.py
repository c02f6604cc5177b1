"""Smallbank-style client, endorser and orderer simulation.

The generator keeps its own copy of committed state and predicts which
transactions will commit, so every endorsement reads current versions except
the ones it deliberately makes stale (conflict injection) or breaks (policy
failure, unknown chaincode, bad syntax). Streams are pure functions of the
config, seed included.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

from valphase.core import (
    SYSTEM_NAMESPACE, ZERO_HASH, And, Block, ChaincodeInfo, Endorsement, Key, Principal, ReadEntry,
    Transaction, ValidationCode, Version, WriteEntry, make_transaction, parse_policy,
)
from valphase.errors import ProtocolError
from valphase.statedb import VersionedValue

SMALLBANK = "smallbank"
UNKNOWN_CC = "no_such_cc"


class OpKind(enum.Enum):
    CREATE_ACCOUNT = "create_account"
    TRANSFER_MONEY = "transfer_money"
    DEPOSIT_CASH = "deposit_cash"
    WRITE_CHECK = "write_check"
    AMALGAMATE = "amalgamate"
    QUERY_BALANCE = "query_balance"


class SmallbankOp(NamedTuple):
    kind: OpKind
    accounts: tuple
    amount: int = 0


def chaincode_name(index: int) -> str:
    return SMALLBANK if index == 0 else f"{SMALLBANK}_{index}"


def account_keys(namespace: str, account: int) -> tuple:
    """(customer record, checking, savings) keys of one account."""
    return (Key(namespace, b"acct_%d" % account),
            Key(namespace, b"chk_%d" % account),
            Key(namespace, b"sav_%d" % account))


def _int(vv) -> int:
    return int(vv[0])


def _enc(n: int) -> bytes:
    return str(n).encode()


@dataclass
class WorkloadConfig:
    total_txs: int = 30000
    block_size: int = 50
    num_accounts: int = 1000
    seed: int = 1
    conflict_prob: float = 0.02
    policy_fail_prob: float = 0.0
    unknown_cc_prob: float = 0.0
    bad_syntax_prob: float = 0.0
    orgs: tuple = ("Org1", "Org2")
    policy: Optional[str] = None  # default: AND over all orgs
    num_chaincodes: int = 1
    op_mix: dict = field(default_factory=lambda: {k: 1.0 for k in OpKind})
    initial_balance: int = 10_000
    max_amount: int = 100
    upgrade_every: int = 0  # blocks; 0 = never

    def __post_init__(self):
        if self.block_size < 1:
            raise ValueError("block_size must be >= 1")
        if self.num_accounts < 2:
            raise ValueError("num_accounts must be >= 2")
        if self.total_txs < 0:
            raise ValueError("total_txs must be >= 0")
        if self.num_chaincodes < 1:
            raise ValueError("num_chaincodes must be >= 1")
        for name in ("conflict_prob", "policy_fail_prob", "unknown_cc_prob", "bad_syntax_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if not self.orgs:
            raise ValueError("at least one endorsing org is required")
        self.orgs = tuple(self.orgs)

    def endorsement_policy(self):
        if self.policy:
            return parse_policy(self.policy)
        return And(tuple(Principal(o) for o in self.orgs))

    def signers(self) -> list:
        return [(org, f"peer0.{org}") for org in self.orgs]


def endorse(op: SmallbankOp, state, chaincode_id: str, tx_id: str, signers) -> Optional[Transaction]:
    """Simulate the op against ``state`` (``.get(Key) -> (value, Version) | None``).

    Returns None when the application rejects it (missing account,
    insufficient funds, duplicate account).
    """
    ns = chaincode_id
    reads: list = []
    writes: list = []

    def read(key):
        vv = state.get(key)
        reads.append(ReadEntry(key, None if vv is None else Version(*vv[1])))
        return vv

    kind, accts, amount = op
    if kind is OpKind.CREATE_ACCOUNT:
        acct, chk, sav = account_keys(ns, accts[0])
        if read(acct) is not None:
            return None
        writes += [WriteEntry(acct, b"customer_%d" % accts[0]),
                   WriteEntry(chk, _enc(amount)), WriteEntry(sav, _enc(amount))]
    elif kind is OpKind.TRANSFER_MONEY:
        _, _, src = account_keys(ns, accts[0])
        _, _, dst = account_keys(ns, accts[1])
        a, b = read(src), read(dst)
        if a is None or b is None or _int(a) < amount:
            return None
        writes += [WriteEntry(src, _enc(_int(a) - amount)), WriteEntry(dst, _enc(_int(b) + amount))]
    elif kind is OpKind.DEPOSIT_CASH:
        _, chk, _ = account_keys(ns, accts[0])
        c = read(chk)
        if c is None:
            return None
        writes.append(WriteEntry(chk, _enc(_int(c) + amount)))
    elif kind is OpKind.WRITE_CHECK:
        _, chk, sav = account_keys(ns, accts[0])
        c, s = read(chk), read(sav)
        if c is None or s is None:
            return None
        penalty = 1 if _int(c) + _int(s) < amount else 0
        writes.append(WriteEntry(chk, _enc(_int(c) - amount - penalty)))
    elif kind is OpKind.AMALGAMATE:
        _, chk_a, sav_a = account_keys(ns, accts[0])
        _, chk_b, _ = account_keys(ns, accts[1])
        s, c, d = read(sav_a), read(chk_a), read(chk_b)
        if s is None or c is None or d is None:
            return None
        writes += [WriteEntry(sav_a, b"0"), WriteEntry(chk_a, b"0"),
                   WriteEntry(chk_b, _enc(_int(d) + _int(s) + _int(c)))]
    elif kind is OpKind.QUERY_BALANCE:
        _, chk, sav = account_keys(ns, accts[0])
        if read(chk) is None or read(sav) is None:
            return None
    else:
        raise ValueError(f"unknown op {kind}")
    payload = f"{kind.value}:{','.join(map(str, accts))}:{amount}".encode()
    return make_transaction(tx_id, chaincode_id, payload, reads, writes, signers)


def make_blocks(txs: Sequence[Transaction], block_size: int, first_number: int = 0,
                prev_hash: bytes = ZERO_HASH) -> list:
    """Cut ``txs`` into hash-linked blocks of ``block_size`` (last may be short)."""
    if block_size < 1:
        raise ValueError("block_size must be >= 1")
    blocks = []
    for start in range(0, len(txs), block_size):
        b = Block.assemble(first_number + len(blocks), prev_hash, txs[start:start + block_size])
        blocks.append(b)
        prev_hash = b.header_hash()
    return blocks


def genesis_block(chaincodes: Sequence[ChaincodeInfo], accounts: Sequence[tuple],
                  initial_balance: int = 10_000) -> Block:
    """Block 0: tx i creates ``accounts[i] = (account_id, namespace)``; the last
    tx instantiates the chaincodes. Every tx is pre-marked Valid."""
    txs = []
    for i, (acct, ns) in enumerate(accounts):
        keys = account_keys(ns, acct)
        writes = (WriteEntry(keys[0], b"customer_%d" % acct),
                  WriteEntry(keys[1], _enc(initial_balance)),
                  WriteEntry(keys[2], _enc(initial_balance)))
        txs.append(Transaction(f"genesis-{i}", ns, b"genesis", (), writes))
    cc_writes = tuple(WriteEntry(info.key, info.encode()) for info in chaincodes)
    txs.append(Transaction("genesis-cc", SYSTEM_NAMESPACE, b"genesis", (), cc_writes))
    for tx in txs:
        tx.validation_code = ValidationCode.VALID
    return Block.assemble(0, ZERO_HASH, txs)


def seed_genesis(statedb, chaincodes: Sequence[ChaincodeInfo], accounts: Sequence[tuple],
                 ledger=None, history=None, initial_balance: int = 10_000) -> Block:
    """Commit the genesis block. With only a state DB, writes the state alone."""
    from valphase.committer import commit_baseline, valid_writes

    if statedb.get_savepoint() is not None or (ledger is not None and ledger.height() >= 0):
        raise ProtocolError("genesis can only be seeded into empty stores")
    block = genesis_block(chaincodes, accounts, initial_balance)
    if ledger is None:
        statedb.apply_write_batch(0, valid_writes(block))
        if history is not None:
            history.append_history(block)
    else:
        commit_baseline(block, ledger, statedb, history)
    return block


class _StaleView:
    """State as of one block earlier: pre-images first, then current state."""

    def __init__(self, state, preimages):
        self.state = state
        self.preimages = preimages

    def get(self, key):
        if key in self.preimages:
            return self.preimages[key]
        return self.state.get(key)


class SmallbankWorkload:
    """Deterministic generator of a genesis block plus a validated-ahead stream."""

    def __init__(self, cfg: WorkloadConfig):
        self.cfg = cfg
        self.rng = random.Random(cfg.seed)
        self.policy = cfg.endorsement_policy()
        self.signers = cfg.signers()
        self.cc_names = [chaincode_name(i) for i in range(cfg.num_chaincodes)]
        self.chaincodes = [ChaincodeInfo(n, "1.0", self.policy) for n in self.cc_names]
        # the system chaincode validates upgrades under the same policy
        self.chaincodes.append(ChaincodeInfo(SYSTEM_NAMESPACE, "1.0", self.policy))
        self.accounts = [(a, self.cc_names[a % cfg.num_chaincodes])
                         for a in range(cfg.num_accounts)]
        self.by_cc = {n: [] for n in self.cc_names}
        for a, ns in self.accounts:
            self.by_cc[ns].append(a)
        self.next_account = cfg.num_accounts
        self.state: dict = {}
        self.preimages: dict = {}
        self.changed_accounts: list = []
        self.expected_codes: dict = {}  # block number -> predicted codes
        self._counter = 0
        kinds = list(cfg.op_mix)
        self._kinds = [OpKind(k) if not isinstance(k, OpKind) else k for k in kinds]
        self._weights = [float(cfg.op_mix[k]) for k in kinds]
        self._genesis = None

    # -- genesis --------------------------------------------------------------

    def genesis(self) -> Block:
        if self._genesis is None:
            b = genesis_block(self.chaincodes, self.accounts, self.cfg.initial_balance)
            self._apply(b, [i for i in range(len(b.transactions))])
            self.preimages = {}
            self.changed_accounts = []
            self._genesis = b
            self.expected_codes[0] = b.codes
        return self._genesis

    def seed(self, stores) -> Block:
        """Commit genesis into fresh ``Stores``."""
        from valphase.committer import commit_baseline
        if stores.statedb.get_savepoint() is not None or stores.ledger.height() >= 0:
            raise ProtocolError("genesis can only be seeded into empty stores")
        block = self.genesis().copy()
        block.set_codes([ValidationCode.VALID] * len(block.transactions))
        commit_baseline(block, stores.ledger, stores.statedb, stores.history)
        return block

    # -- stream ---------------------------------------------------------------

    def blocks(self) -> list:
        """All stream blocks (numbers 1..), generated in one pass."""
        prev = self.genesis().header_hash()
        out = []
        remaining = self.cfg.total_txs
        number = 1
        while remaining > 0:
            n = min(self.cfg.block_size, remaining)
            txs, codes = self._block_txs(number, n)
            block = Block.assemble(number, prev, txs)
            self.expected_codes[number] = codes
            valid = [i for i, c in enumerate(codes) if c == ValidationCode.VALID]
            self._apply(block, valid)
            out.append(block)
            prev = block.header_hash()
            remaining -= n
            number += 1
        return out

    def _tx_id(self) -> str:
        self._counter += 1
        return f"{self.cfg.seed:x}-{self._counter:08d}"

    def _apply(self, block: Block, valid: list) -> None:
        pre = {}
        changed = set()
        for i in valid:
            tx = block.transactions[i]
            for key, value in tx.write_set:
                if key not in pre:
                    pre[key] = self.state.get(key)
                if value is None:
                    self.state.pop(key, None)
                else:
                    self.state[key] = VersionedValue(value, Version(block.number, i))
                name = key.name
                if key.namespace != SYSTEM_NAMESPACE and name[:4] in (b"chk_", b"sav_"):
                    changed.add((key.namespace, int(name[4:])))
                if key.namespace != SYSTEM_NAMESPACE and name.startswith(b"acct_"):
                    acct = int(name[5:])
                    if acct >= self.cfg.num_accounts and acct not in self.by_cc[key.namespace]:
                        self.by_cc[key.namespace].append(acct)
        self.preimages = pre
        self.changed_accounts = sorted(changed)

    def _pick_op(self) -> OpKind:
        return self.rng.choices(self._kinds, self._weights)[0]

    def _amount(self) -> int:
        return self.rng.randint(1, self.cfg.max_amount)

    def _normal_op(self, ns: str) -> SmallbankOp:
        kind = self._pick_op()
        pool = self.by_cc[ns]
        if kind is OpKind.CREATE_ACCOUNT:
            acct = self.next_account
            while acct % self.cfg.num_chaincodes != self.cc_names.index(ns):
                acct += 1
            self.next_account = acct + 1
            return SmallbankOp(kind, (acct,), self.cfg.initial_balance)
        a = self.rng.choice(pool)
        if kind in (OpKind.TRANSFER_MONEY, OpKind.AMALGAMATE):
            b = self.rng.choice(pool)
            while b == a:
                b = self.rng.choice(pool)
            return SmallbankOp(kind, (a, b), self._amount())
        return SmallbankOp(kind, (a,), self._amount())

    def _block_txs(self, number: int, n: int):
        """Fill ``n`` slots. Each slot draws its kind once (stale, broken
        policy, unknown chaincode, bad syntax, normal) and then retries ops of
        that kind until one is endorsable, so observed rates track the knobs."""
        cfg = self.cfg
        rng = self.rng
        txs: list = []
        codes: list = []
        written: set = set()
        upgrade = cfg.upgrade_every and number % cfg.upgrade_every == 0
        want = n - 1 if upgrade and n > 1 else n
        while len(txs) < want:
            r = rng.random()
            ns = rng.choice(self.cc_names)
            if r < cfg.conflict_prob:
                tx = None
                for _ in range(8):  # a draw can miss, e.g. an account created last block
                    tx = self._stale_tx(ns, written)
                    if tx is not None:
                        break
                if tx is not None:
                    txs.append(tx)
                    codes.append(ValidationCode.MVCC_CONFLICT)
                    continue
            r -= cfg.conflict_prob
            tx = self._fresh_tx(ns, written)
            if r < cfg.policy_fail_prob:
                tx = self._break_policy(tx)
                code = ValidationCode.POLICY_FAILURE
            elif r < cfg.policy_fail_prob + cfg.unknown_cc_prob:
                tx = make_transaction(tx.tx_id, UNKNOWN_CC, tx.payload, tx.read_set,
                                      tx.write_set, self.signers)
                code = ValidationCode.UNKNOWN_CHAINCODE
            elif r < cfg.policy_fail_prob + cfg.unknown_cc_prob + cfg.bad_syntax_prob:
                # every smallbank op reads at least one key; repeat it
                tx = make_transaction(tx.tx_id, tx.chaincode_id, tx.payload,
                                      tx.read_set + tx.read_set[:1], tx.write_set, self.signers)
                code = ValidationCode.BAD_SYNTAX
            else:
                code = ValidationCode.VALID
                written.update(k for k, _ in tx.write_set)
            txs.append(tx)
            codes.append(code)
        if len(txs) < n:
            txs.append(self._upgrade_tx(rng.choice(self.cc_names), number))
            codes.append(ValidationCode.VALID)
        return txs, codes

    def _fresh_tx(self, ns: str, written: set) -> Transaction:
        """An op endorsed against current state that reads nothing this block wrote."""
        for _ in range(1000):
            tx = endorse(self._normal_op(ns), self.state, ns, self._tx_id(), self.signers)
            if tx is not None and not any(k in written for k, _ in tx.read_set):
                return tx
        raise RuntimeError("workload generator cannot fill block; too few accounts?")

    def _stale_tx(self, ns: str, written: set) -> Optional[Transaction]:
        changed = [a for c, a in self.changed_accounts if c == ns]
        if not changed:
            return None
        view = _StaleView(self.state, self.preimages)
        a = self.rng.choice(changed)
        kind = self.rng.choice([OpKind.WRITE_CHECK, OpKind.QUERY_BALANCE, OpKind.AMALGAMATE])
        if kind is OpKind.AMALGAMATE:
            pool = self.by_cc[ns]
            b = self.rng.choice(pool)
            while b == a:
                b = self.rng.choice(pool)
            op = SmallbankOp(kind, (a, b))
        else:
            op = SmallbankOp(kind, (a,), self._amount())
        return endorse(op, view, ns, self._tx_id(), self.signers)

    def _break_policy(self, tx: Transaction) -> Transaction:
        """Re-endorse so the policy cannot be met: drop an org, and if that
        still satisfies the policy, corrupt every tag as well."""
        from valphase.vscc import eval_policy

        signers = self.signers[:-1] if len(self.signers) > 1 else self.signers
        bad = make_transaction(tx.tx_id, tx.chaincode_id, tx.payload, tx.read_set,
                               tx.write_set, signers)
        if self.rng.random() < 0.5 or eval_policy(self.policy, {o for o, _ in signers}):
            bad.endorsements = tuple(
                Endorsement(org, signer, bytes([tag[0] ^ 1]) + tag[1:])
                for org, signer, tag in bad.endorsements
            )
            bad.__dict__.pop("data_bytes", None)
        return bad

    def _upgrade_tx(self, cc: str, number: int) -> Transaction:
        key = Key(SYSTEM_NAMESPACE, cc.encode())
        vv = self.state.get(key)
        info = ChaincodeInfo(cc, f"1.{number}", self.policy)
        reads = [ReadEntry(key, None if vv is None else vv[1])]
        writes = [WriteEntry(key, info.encode())]
        return make_transaction(self._tx_id(), SYSTEM_NAMESPACE, b"upgrade:" + cc.encode(),
                                reads, writes, self.signers)


def generate(cfg: WorkloadConfig):
    """Convenience: ``(workload, genesis_block, stream_blocks)``."""
    w = SmallbankWorkload(cfg)
    g = w.genesis()
    return w, g, w.blocks()

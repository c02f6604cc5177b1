"""Small generated streams shared by the integration tests."""

from valphase.committer import Mode
from valphase.pipeline import Pipeline, PipelineConfig
from valphase.vscc import VsccConfig
from valphase.workload import SmallbankWorkload, WorkloadConfig


def workload(total_txs=400, block_size=20, seed=1, **kw):
    kw.setdefault("num_accounts", 60)
    return SmallbankWorkload(WorkloadConfig(total_txs=total_txs, block_size=block_size, seed=seed, **kw))


def predicted(w, blocks):
    """Copies of ``blocks`` carrying the generator's predicted final codes."""
    out = []
    for b in blocks:
        c = b.copy()
        c.set_codes(w.expected_codes[b.number])
        out.append(c)
    return out


def run(stores, blocks, mode=Mode.OPTIMIZED, workers=4, **cfg):
    """Validate and commit ``blocks`` in place (pass copies to keep the originals)."""
    p = Pipeline(PipelineConfig(mode=mode, backend=stores.statedb.kind,
                                vscc=VsccConfig(workers=workers), **cfg), stores)
    with p:
        return p.run_stream(blocks)

"""Instrumented permissioned-blockchain validation-and-commit pipeline.

Two architectures over the same stores: the sequential baseline and an
optimized variant with a chaincode cache, vscc overlapped with the bulk
state read, and overlapped ledger/state commits.
"""

from valphase.committer import CommitPlan, Mode, reconstruct
from valphase.core import Block, ChaincodeInfo, Key, Transaction, ValidationCode, Version
from valphase.pipeline import LatencyBreakdown, Pipeline, PipelineConfig, Stores
from valphase.statedb import BackendKind, LatencyModel
from valphase.vscc import CachePolicy, VsccConfig

__version__ = "0.1.0"

__all__ = [
    "BackendKind", "Block", "CachePolicy", "ChaincodeInfo", "CommitPlan", "Key",
    "LatencyBreakdown", "LatencyModel", "Mode", "Pipeline", "PipelineConfig", "Stores",
    "Transaction", "ValidationCode", "Version", "VsccConfig", "reconstruct",
]

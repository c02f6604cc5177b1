"""Exception types shared across the pipeline and stores."""


class ValphaseError(Exception):
    pass


class StorageError(ValphaseError):
    """A backend read or write failed (real or injected)."""


class ProtocolError(ValphaseError):
    """Blocks arrived out of order, or a block failed the structural check."""


class NotFound(ValphaseError, KeyError):
    pass


class UnknownChaincode(ValphaseError):
    def __init__(self, chaincode_id):
        super().__init__(f"chaincode {chaincode_id!r} is not instantiated")
        self.chaincode_id = chaincode_id


class CommitAbort(ValphaseError):
    """A commit step failed; the named step is where the stores diverged.

    The ledger may hold the block while state/history lag behind. This is
    the repairable direction: ``reconstruct`` replays from the ledger.
    """

    def __init__(self, step, cause=None):
        super().__init__(f"commit aborted at {step}: {cause}")
        self.step = step
        self.cause = cause


class LedgerBehindError(ValphaseError):
    """Databases were written but the ledger append failed after all retries."""

    def __init__(self, block_number, attempts, cause=None):
        super().__init__(
            f"ledger append of block {block_number} failed after {attempts} attempts; "
            f"databases are ahead of the ledger"
        )
        self.block_number = block_number
        self.attempts = attempts
        self.cause = cause


class Unrepairable(ValphaseError):
    pass


class ConfigError(ValphaseError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line

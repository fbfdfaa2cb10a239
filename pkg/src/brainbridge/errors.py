"""Exception hierarchy shared across the pipeline.

The CLI maps these onto stable exit codes: ConfigError -> 2,
DataError -> 3, BackendError -> 4, anything else -> 5.
"""


class BrainBridgeError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(BrainBridgeError):
    """Invalid configuration: unknown keys, bad values, missing flags."""


class DataError(BrainBridgeError):
    """Invalid or inconsistent data: manifests, stores, checkpoints."""


class BackendError(BrainBridgeError):
    """A pluggable backend (LM, captioner, embedder, adapter) failed."""


class CheckpointError(DataError):
    """Checkpoint file is corrupt, truncated, or from an unknown format."""


class AdapterContractError(BackendError):
    """Input handed to a reconstruction adapter violates its contract."""

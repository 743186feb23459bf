"""Continual knowledge graph embedding with Gaussian posterior carry-over
and importance-ordered contrastive clustering."""

from ckge.errors import (
    CheckpointError,
    ConfigError,
    ConsistencyError,
    IngestionError,
    InvariantError,
    NumericError,
    SpecError,
)
from ckge.kg import Snapshot, SnapshotSequence, Triple, Vocabulary

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "ConfigError",
    "ConsistencyError",
    "IngestionError",
    "InvariantError",
    "NumericError",
    "Snapshot",
    "SnapshotSequence",
    "SpecError",
    "Triple",
    "Vocabulary",
]

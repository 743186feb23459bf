"""Exception types raised across the package."""


class CKGEError(Exception):
    """Base class for all package errors."""


class IngestionError(CKGEError):
    """A dataset file is missing or unreadable."""


class ConsistencyError(CKGEError):
    """A split references an id that the vocabulary cannot resolve."""


class InvariantError(CKGEError):
    """A structural invariant (monotone growth, positive precision, ...) is broken."""


class SpecError(CKGEError):
    """A synthetic-generation request cannot be satisfied."""


class ConfigError(CKGEError):
    """Invalid run configuration or hyperparameter."""


class NumericError(CKGEError):
    """Training produced a non-finite value."""


class CheckpointError(CKGEError):
    """A checkpoint is corrupt, truncated, or incompatible with the dataset."""

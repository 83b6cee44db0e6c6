"""Exception types shared across the toolkit."""


class CapbiasError(Exception):
    """Base class for all toolkit errors."""


class InvalidInputError(CapbiasError):
    """An operation received arguments violating its preconditions."""


class ManifestValidationError(CapbiasError):
    """Manifest construction hit a hard invariant violation (e.g. duplicates)."""

    def __init__(self, message: str, duplicates: list[str] | None = None):
        super().__init__(message)
        self.duplicates = duplicates or []


class InsufficientDataError(CapbiasError):
    """A statistical operation was asked to run on an empty cell."""

    def __init__(self, message: str, cell: tuple | None = None):
        super().__init__(message)
        self.cell = cell


class StoreLoadError(CapbiasError):
    """An embedding store file is malformed or inconsistent."""


class RemoteEmbeddingError(CapbiasError):
    """The remote embedding service failed or returned unusable data."""

    def __init__(self, message: str, retries: int = 0):
        super().__init__(message)
        self.retries = retries


class ConfigurationError(CapbiasError):
    """A command was invoked with an unusable configuration."""


class TrainingError(CapbiasError):
    """The RL simulator hit an unusable reward or diverging update."""

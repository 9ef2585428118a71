"""Exception types shared across the package."""


class CiteqaError(Exception):
    """Base class for all citeqa errors."""


class CorpusError(CiteqaError):
    """Unreadable or malformed corpus input."""


class EmptyDocumentError(CiteqaError):
    """Document has no tokens and cannot be chunked."""


class CacheFormatError(CiteqaError):
    """Persisted artifact has an unknown or unsupported format version."""


class ProvenanceMismatchError(CiteqaError):
    """Cached artifact was built from different inputs or parameters."""


class EmbeddingError(CiteqaError):
    """Embedding provider failure."""


class DimensionMismatchError(EmbeddingError):
    """Vector dimensions do not agree."""


class RemoteServiceError(CiteqaError):
    """Remote HTTP call failed.

    retry_after carries the server-suggested backoff in seconds when the
    response included one (rate limiting), else None.
    """

    def __init__(self, message: str, *, status: int | None = None, retry_after: float | None = None):
        super().__init__(message)
        self.status = status
        self.retry_after = retry_after


class GraphError(CiteqaError):
    """Invalid graph construction input."""


class EmptyGraphError(GraphError):
    """Operation requires a graph with at least one node."""


class CheckpointError(CiteqaError):
    """Unreadable or inconsistent parameter checkpoint."""


class TrainingError(CiteqaError):
    """Invalid training input or non-finite training state."""


class LMClientError(CiteqaError):
    """Language-model client failure."""


class NoContextError(CiteqaError):
    """Retrieval produced no context; refusing to fabricate an answer."""


class ConfigError(CiteqaError):
    """Invalid run configuration; message lists every bad field."""


class StageError(CiteqaError):
    """A required pipeline stage artifact is missing."""

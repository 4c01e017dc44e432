"""Exception types shared across the pipeline."""


class PipelineError(Exception):
    """Base class for all pipeline failures."""


class IngestError(PipelineError):
    """A corpus file could not be read during ingestion."""


class SplitError(PipelineError):
    """Split sizes cannot be honored for one or more concepts."""


class BackendError(PipelineError):
    """A model backend failed after exhausting retries."""

    def __init__(self, message: str, request_key: str | None = None):
        super().__init__(message)
        self.request_key = request_key


class ConfigurationError(PipelineError):
    """Non-retryable problem with a backend or run configuration."""


class TransientBackendError(PipelineError):
    """Retryable transport failure (timeout, connection loss, 5xx, 429)."""


class IntegrityError(PipelineError):
    """Data violates a structural invariant (hash, dimension, space)."""


class NoConfusableError(PipelineError):
    """Probing produced no misclassifications to pick a contrast from."""


class ShortfallError(PipelineError):
    """Not enough images to honor a requested export ratio."""


class MissingInputError(PipelineError):
    """A stage's upstream artifact file does not exist."""


class AnnotationConflictError(PipelineError):
    """A judgment was re-submitted with a different value."""


class IncompleteSessionError(PipelineError):
    """Agreement stats requested before all items were judged by all raters."""

    def __init__(self, message: str, incomplete_items: list[int]):
        super().__init__(message)
        self.incomplete_items = incomplete_items

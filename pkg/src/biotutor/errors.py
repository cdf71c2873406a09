"""Exception types shared across the package.

Every failure a caller is expected to handle gets its own class; generic
ValueError/RuntimeError are reserved for programming errors.
"""


class TutorError(Exception):
    """Base class for all package errors."""


# --- corpus ---------------------------------------------------------------

class EmptyDocument(TutorError):
    """Raised when a document is empty, or empty after cleaning."""


class ConfigError(TutorError):
    """Invalid configuration value (chunk sizes, MMR parameters, ...)."""


# --- retrieval ------------------------------------------------------------

class ZeroVectorError(TutorError):
    """Cosine similarity requested against an all-zero vector."""


class DimensionError(TutorError):
    """Embedding dimension disagrees with the index."""


class EmptyIndexError(TutorError):
    """Search requested against an index with no entries."""


class CorruptIndexError(TutorError):
    """Persisted index files are missing, inconsistent, or malformed."""


# --- llm gateway ----------------------------------------------------------

class TransportError(TutorError):
    """All retry attempts against a backend failed."""


class TimeoutError(TransportError):  # noqa: A001 - deliberate, scoped name
    """Every attempt timed out."""


class ProviderError(TutorError):
    """Backend returned a non-retryable error response."""

    def __init__(self, status: int, message: str):
        super().__init__(f"provider returned {status}: {message}")
        self.status = status
        self.message = message


class ScriptExhaustedError(TutorError):
    """A scripted backend received a request no script entry matches."""


# --- code runner ----------------------------------------------------------

class RunnerConfigError(TutorError):
    """The configured interpreter cannot be launched (distinct from the
    executed code failing, which is a normal result)."""


# --- mas engine -----------------------------------------------------------

class ManagerError(TutorError):
    """Manager produced unusable output (e.g. empty restatement)."""


class ReviewParseError(TutorError):
    """Reviewer output had no recognizable verdict after a re-ask."""


# --- eval harness ---------------------------------------------------------

class DatasetError(TutorError):
    """Dataset file violates the expected schema."""


class HarnessError(TutorError):
    """Metric computation called with inconsistent inputs."""

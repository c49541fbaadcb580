"""Exception hierarchy shared by all objsearch modules."""

from __future__ import annotations


class ObjSearchError(Exception):
    """Base class for every error raised by this package."""


class InvariantError(ObjSearchError):
    """A domain invariant was violated (dimension mismatch, mixed ids, ...)."""


class InputError(ObjSearchError):
    """Caller-supplied data is malformed or out of range."""


class EmptyMaskError(InputError):
    """An instance id has no pixels in the instance map."""


class ConfigurationError(ObjSearchError):
    """Components are wired together inconsistently (e.g. dim mismatch)."""


class QueryError(ObjSearchError):
    """A query cannot be answered as posed.

    Carries the set of valid class labels when the failure is an unknown
    class, so callers can surface actionable messages.
    """

    def __init__(self, message: str, valid_classes: list[str] | None = None):
        super().__init__(message)
        self.valid_classes = valid_classes or []


class CapabilityError(ObjSearchError):
    """The index lacks the data required for the requested operation."""


class FormatError(ObjSearchError):
    """A persisted file has the wrong magic, version, or layout."""


class CorruptionError(FormatError):
    """A persisted file failed integrity checks. Names the offending part."""

    def __init__(self, message: str, partition: str | None = None):
        super().__init__(message)
        self.partition = partition


class TransportError(ObjSearchError):
    """A remote encoder call failed after retries.

    ``attempts`` is the number of requests made; ``last_status`` is the final
    HTTP status code, or None for connection-level failures.
    """

    def __init__(self, message: str, attempts: int = 1, last_status: int | None = None):
        super().__init__(message)
        self.attempts = attempts
        self.last_status = last_status

"""Exception hierarchy shared across the engine.

Every failure the engine can signal derives from LifesimError so callers
(CLI, server) can catch one root. Subclasses carry the structured fields
the contracts promise (offending field name, byte offset, attempt count).
"""

from __future__ import annotations


class LifesimError(Exception):
    """Root of all engine errors."""


# --- domain / state ---------------------------------------------------------


class ValidationError(LifesimError):
    """A domain object violated an invariant; `field` names the offender."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class SequencingError(LifesimError):
    """A turn arrived with a round index that breaks 0..n-1 contiguity."""


class UnknownEnvironmentError(LifesimError):
    """A turn referenced an environment id absent from the session registry."""


class NotFoundError(LifesimError):
    """No persisted session under the requested id."""


class IntegrityError(LifesimError):
    """A session log is corrupt or truncated.

    `offset` is the byte position of the bad record, `record_index` its
    ordinal; records before it are recoverable.
    """

    def __init__(self, message: str, *, offset: int, record_index: int):
        super().__init__(f"{message} (byte offset {offset}, record {record_index})")
        self.offset = offset
        self.record_index = record_index


# --- engine protocol --------------------------------------------------------


class TemplateError(LifesimError):
    """A prompt template placeholder could not be resolved."""

    def __init__(self, placeholder: str):
        super().__init__(f"unresolved template placeholder: {{{placeholder}}}")
        self.placeholder = placeholder


class ResponseFormatError(LifesimError):
    """No JSON fence found in a world-model reply; carries a diagnostic snippet."""

    def __init__(self, raw: str):
        self.snippet = raw[:200]
        super().__init__(f"no JSON fence in response; starts: {self.snippet!r}")


class ResponseParseError(LifesimError):
    """Fenced JSON was missing required keys."""

    def __init__(self, missing: list[str]):
        super().__init__(f"response missing keys: {', '.join(missing)}")
        self.missing = missing


class MeterValueError(LifesimError):
    """A state field in a parsed response was not an integer."""

    def __init__(self, axis: str, value: object):
        super().__init__(f"meter {axis!r} is not an integer: {value!r}")
        self.axis = axis


class BindingError(LifesimError):
    """Environment binding was asked to resolve an empty name."""


# --- providers --------------------------------------------------------------


class ProviderError(LifesimError):
    """Base for chat/image transport failures."""


class CredentialError(ProviderError):
    """Endpoint rejected our credentials (401/403); never retried."""


class TransportError(ProviderError):
    """All retry attempts failed; `attempts` is how many were made."""

    def __init__(self, message: str, *, attempts: int):
        super().__init__(f"{message} (after {attempts} attempts)")
        self.attempts = attempts


class ProtocolError(ProviderError):
    """Endpoint answered 2xx but the body did not match the wire shape."""


class ScriptExhaustedError(ProviderError):
    """A scripted mock ran out of canned replies."""


class ReplayMissError(ProviderError):
    """Replay transcript has no entry for the request hash."""

    def __init__(self, request_hash: str):
        super().__init__(f"no transcript entry for request hash {request_hash}")
        self.request_hash = request_hash


class GenerationError(ProviderError):
    """Image service accepted the request but reported a generation failure."""


# --- data forge -------------------------------------------------------------


class AttemptBudgetError(LifesimError):
    """Topic generation ran out of attempts; carries the partial corpus."""

    def __init__(self, *, pairs: list, attempts: int, target: int):
        super().__init__(
            f"attempt budget exhausted: {len(pairs)}/{target} pairs after {attempts} attempts"
        )
        self.pairs = pairs
        self.attempts = attempts
        self.target = target


class SessionCollectionError(LifesimError):
    """An interaction session could not be completed; carries the transcript."""

    def __init__(self, message: str, *, transcript: list):
        super().__init__(message)
        self.transcript = transcript


class DatasetWriteError(LifesimError):
    """Emitting a dataset file failed; partial output was removed."""


class AuditError(LifesimError):
    """An emitted corpus or dataset violates its invariants."""


# --- judge ------------------------------------------------------------------


class JudgeParseError(LifesimError):
    """Judge reply lacked the two machine-readable score lines."""


class ScoreRangeError(LifesimError):
    """A judge score fell outside [0, 10]; `axis` names the column."""

    def __init__(self, axis: str, value: float):
        super().__init__(f"score {axis}={value} outside [0, 10]")
        self.axis = axis


class JudgeRunError(LifesimError):
    """Too many judge cases failed for the aggregate to be meaningful."""


class GatingStateError(LifesimError):
    """gate applied twice to the same image-score record."""


# --- fusion -----------------------------------------------------------------


class ShapeError(LifesimError):
    """Matrix operands have incompatible shapes; message names both."""


# --- imaging / config -------------------------------------------------------


class ConfigurationError(LifesimError):
    """A required configuration value is missing or malformed."""

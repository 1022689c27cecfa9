"""Exception hierarchy shared across the engine."""

from __future__ import annotations


class DelibError(Exception):
    """Base class for every error raised by this package."""


# evaluation model
class ModelError(DelibError):
    pass


class SchemaError(ModelError):
    """A config field is missing or has the wrong type."""


class ModelReferenceError(ModelError):
    """A config names an agent, tool, or dimension that does not exist."""


class CardinalityError(ModelError):
    """A collection violates a size or uniqueness rule."""


class UnknownCriterionError(ModelError, KeyError):
    pass


class NotAParticipantError(ModelError):
    pass


# prompts
class TemplateError(DelibError):
    pass


class MalformedTokenError(TemplateError):
    pass


class MissingBindingError(TemplateError):
    def __init__(self, token: str):
        super().__init__(f"missing binding for token {token!r}")
        self.token = token


# transcript protocol
class ProtocolViolation(DelibError):
    def __init__(self, message: str, value: object = None):
        super().__init__(message)
        self.value = value


class MalformedRoutingError(ProtocolViolation):
    def __init__(self, line: str):
        super().__init__(f"routing line does not name a known participant: {line!r}", line)
        self.line = line


# tools
class ToolError(DelibError):
    pass


class UnknownToolError(ToolError, KeyError):
    pass


class ToolBindingError(ToolError):
    pass


class ToolBackendError(ToolError):
    pass


class FixtureFormatError(ToolError):
    pass


# chat backends
class BackendError(DelibError):
    pass


class TransportError(BackendError):
    pass


class ScriptExhaustedError(BackendError):
    pass


class DivergenceError(BackendError):
    def __init__(self, expected: str, actual: str, conversation_id: str = ""):
        where = f" in {conversation_id}" if conversation_id else ""
        super().__init__(f"script divergence{where} (expected {expected}, got {actual})")
        self.expected = expected
        self.actual = actual


class ScenarioFormatError(BackendError):
    pass


class FinetuneDataError(DelibError):
    pass


# scoring and fixtures
class ScoringError(DelibError):
    pass


class MissingRatingError(ScoringError):
    pass


class MisalignedTablesError(ScoringError):
    pass


class FixtureError(DelibError):
    pass


class UnknownFixtureError(FixtureError, KeyError):
    pass


class FixtureChecksumError(FixtureError):
    pass

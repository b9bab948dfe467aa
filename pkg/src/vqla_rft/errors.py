"""Exception hierarchy shared by every module.

Each error carries enough context to be rendered as a JSON object on stderr by
the CLI (see :meth:`VqlaError.to_dict`).
"""

from __future__ import annotations

from typing import Any


class VqlaError(Exception):
    """Base class. ``exit_code`` is what the CLI returns when it escapes."""

    exit_code = 1

    def __init__(self, message: str, **context: Any):
        super().__init__(message)
        self.message = message
        self.context = {k: v for k, v in context.items() if v is not None}

    def to_dict(self) -> dict[str, Any]:
        return {"error": type(self).__name__, "message": self.message, **self.context}


# --- record validation -------------------------------------------------------

class RecordError(VqlaError, ValueError):
    def __init__(self, message: str, record_id: str | None = None, field: str | None = None):
        super().__init__(message, record_id=record_id, field=field)
        self.record_id = record_id
        self.field = field


class MissingField(RecordError):
    """A required field is absent, or a forbidden one is present."""


class BadStageOrder(RecordError):
    pass


class EmptyAnswer(RecordError):
    pass


class BoxOutOfFrame(RecordError):
    pass


class InvalidField(RecordError):
    """Field present but of the wrong type or outside its vocabulary."""


class EmptyDataset(VqlaError, ValueError):
    pass


class IoFailure(VqlaError, OSError):
    exit_code = 2


# --- geometry / rewards ------------------------------------------------------

class DegenerateBox(VqlaError, ValueError):
    pass


class OutOfFrame(VqlaError, ValueError):
    pass


# --- grpo --------------------------------------------------------------------

class GroupTooSmall(VqlaError, ValueError):
    pass


class NonFinite(VqlaError, ValueError):
    pass


class DimensionMismatch(VqlaError, ValueError):
    pass


class OutOfSupport(VqlaError, ValueError):
    pass


# --- forge -------------------------------------------------------------------

class UnsupportedQuestionType(VqlaError, ValueError):
    pass


class MissingSlot(VqlaError, KeyError):
    def __str__(self) -> str:  # KeyError would repr() the message
        return self.message


class EndpointError(VqlaError):
    """Transport-level failure talking to the generation endpoint."""

    exit_code = 2


class HttpError(EndpointError):
    def __init__(self, status: int, body: str = ""):
        super().__init__(f"endpoint returned HTTP {status}", status=status, body=body[:500] or None)
        self.status = status


class MalformedResponse(EndpointError):
    pass


class Timeout(EndpointError):
    pass


# --- metrics / cli -----------------------------------------------------------

class EmptyInput(VqlaError, ValueError):
    pass


class IdMismatch(VqlaError, ValueError):
    def __init__(self, missing_predictions: list[str], unknown_predictions: list[str]):
        super().__init__(
            "prediction ids do not match ground-truth ids",
            missing_predictions=missing_predictions,
            unknown_predictions=unknown_predictions,
        )
        self.missing_predictions = missing_predictions
        self.unknown_predictions = unknown_predictions


class UnknownCommand(VqlaError):
    exit_code = 64


class ConfigError(VqlaError, ValueError):
    exit_code = 64

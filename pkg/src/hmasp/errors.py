"""Exception taxonomy for the engine.

Every error raised across module boundaries derives from HmaspError so
callers (CLI, HTTP service, eval harness) can map them uniformly.
Validation failures carry a stable ``reason`` code that workflows copy
into failure summaries; the code is the contract, the message is not.
"""

from __future__ import annotations


class HmaspError(Exception):
    """Base class for all engine errors."""


# --- state model ---------------------------------------------------------


class EmptyUserId(HmaspError):
    pass


class UnknownRole(HmaspError):
    pass


class ForbiddenWriter(HmaspError):
    pass


class ImmutableKey(HmaspError):
    pass


class CrossRoleWrite(HmaspError):
    pass


# --- orchestrator --------------------------------------------------------


class SessionNotFound(HmaspError):
    pass


class SessionBusy(HmaspError):
    pass


class IllegalEdge(HmaspError):
    pass


class UnknownTurn(HmaspError):
    pass


class UnknownInterrupt(HmaspError):
    pass


class StaleInterrupt(HmaspError):
    pass


# --- decision backends ----------------------------------------------------


class BackendError(HmaspError):
    pass


class BackendTimeout(BackendError):
    pass


class MalformedOutput(BackendError):
    pass


class TransportError(BackendError):
    pass


# --- validation -----------------------------------------------------------


class ValidationError(HmaspError):
    """A card/OTP/amount check failed; ``reason`` is a stable code."""

    reason = "validation_failed"

    def __init__(self, message: str = ""):
        super().__init__(message or self.reason)


class MissingField(ValidationError):
    def __init__(self, field: str):
        self.field = field
        self.reason = f"missing_field_{field}"
        super().__init__(f"missing required field: {field}")


class InvalidLength(ValidationError):
    reason = "invalid_length"


class NonDigit(ValidationError):
    reason = "non_digit"


class LuhnFailed(ValidationError):
    reason = "luhn_check_failed"


class ExpiredCard(ValidationError):
    reason = "expired_card"


class InvalidCvv(ValidationError):
    reason = "invalid_cvv"


class InvalidOtpShape(ValidationError):
    reason = "invalid_otp_shape"


class InvalidAmount(ValidationError):
    reason = "invalid_amount"


# --- persistence ----------------------------------------------------------


class IOFailure(HmaspError):
    pass


class UnknownCard(HmaspError):
    pass


class NoPendingCheckpoint(HmaspError):
    pass


class CheckpointAlreadyConsumed(HmaspError):
    pass


# --- eval harness ---------------------------------------------------------


class SchemaError(HmaspError):
    def __init__(self, line_no: int, field: str, message: str = ""):
        self.line_no = line_no
        self.field = field
        super().__init__(message or f"line {line_no}: bad field {field!r}")


class EmptyTask(HmaspError):
    pass

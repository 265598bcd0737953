"""Interrupt requests and checkpoints for human-in-the-loop pauses.

When a workflow needs data only the user can supply (card fields, a card
choice, an OTP, an amount), it raises an interrupt: the turn pauses, a
checkpoint capturing the full session state is persisted, and the caller
receives a structured request describing exactly which fields to collect.
Resuming validates the answer and re-enters the workflow; because the
checkpoint holds everything, a process restart between pause and resume
is invisible to the conversation.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from enum import Enum

from hmasp.hierarchy import NodeId


class FieldKind(str, Enum):
    """What shape of value an interrupt field expects."""

    PAN16 = "pan16"
    EXPIRY_MMYY = "expiry_mmYY"
    CVV3 = "cvv3"
    CARD_CHOICE_INDEX = "card_choice_index"
    OTP6 = "otp6"
    AMOUNT = "amount"


@dataclass(frozen=True)
class FieldSpec:
    name: str
    kind: FieldKind
    validation_hint: str


@dataclass(frozen=True)
class InterruptRequest:
    interrupt_id: str
    workflow: NodeId
    prompt_text: str
    fields_requested: tuple[FieldSpec, ...]

    def __post_init__(self) -> None:
        if not self.fields_requested:
            raise ValueError("an interrupt must request at least one field")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["workflow"] = self.workflow.value
        d["fields_requested"] = [
            {"name": f.name, "kind": f.kind.value, "validation_hint": f.validation_hint}
            for f in self.fields_requested
        ]
        return d

    @staticmethod
    def from_dict(d: dict) -> "InterruptRequest":
        return InterruptRequest(
            interrupt_id=d["interrupt_id"],
            workflow=NodeId(d["workflow"]),
            prompt_text=d["prompt_text"],
            fields_requested=tuple(
                FieldSpec(f["name"], FieldKind(f["kind"]), f["validation_hint"])
                for f in d["fields_requested"]
            ),
        )


class WorkflowInterrupted(Exception):
    """Raised inside a workflow to pause it; carries the request upward.

    Not an error: the orchestrator catches it, persists a checkpoint, and
    reports the turn as awaiting input.
    """

    def __init__(self, request: InterruptRequest):
        super().__init__(request.prompt_text)
        self.request = request


@dataclass
class Checkpoint:
    """Everything needed to resume a paused turn, restart-safe.

    ``bundle`` is the JSON-dict form of the session state. Workflows
    re-run from the top on resume, and steps whose effects are already in
    the bundle become no-ops, so no interrupt answers are ever stored
    here (they may contain secrets). ``interrupt_seq`` is the sequence
    number of the pending interrupt so a resumed process re-derives the
    same deterministic id; ``trace`` carries the handoff edges recorded
    before the pause.
    """

    session_id: str
    turn_id: int
    paused_at: NodeId
    pending_interrupt: InterruptRequest
    bundle: dict
    interrupt_seq: int = 0
    trace: list[list[str]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "turn_id": self.turn_id,
            "paused_at": self.paused_at.value,
            "pending_interrupt": self.pending_interrupt.to_dict(),
            "bundle": self.bundle,
            "interrupt_seq": self.interrupt_seq,
            "trace": self.trace,
        }

    @staticmethod
    def from_dict(d: dict) -> "Checkpoint":
        return Checkpoint(
            session_id=d["session_id"],
            turn_id=d["turn_id"],
            paused_at=NodeId(d["paused_at"]),
            pending_interrupt=InterruptRequest.from_dict(d["pending_interrupt"]),
            bundle=d["bundle"],
            interrupt_seq=d["interrupt_seq"],
            trace=[list(e) for e in d["trace"]],
        )

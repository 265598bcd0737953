"""The three deterministic task subgraphs: card registration, card
retrieval, and payment processing.

Workflows are plain functions over the session bundle, a persistence
store, and an interrupt port. No decision backend is ever consulted in
here: every value that matters (card fields, amounts, choices, OTPs) is
either parsed deterministically from user input or read from state, so
workflow behavior can never be tampered with by generated text.

Pause/resume works by replay: a workflow always runs from its first line.
``io.request`` either returns the validated answer for that step (when
resuming) or raises :class:`WorkflowInterrupted`, which the orchestrator
turns into a persisted checkpoint. Steps that already wrote their effect
into the bundle are skipped naturally on re-entry, so a completed run and
a run resumed across a process restart leave identical records behind.

Store writes are positioned after the final interrupt of each subgraph,
which keeps them exactly-once under replay.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from hmasp.errors import ValidationError
from hmasp.hierarchy import NodeId
from hmasp.interrupts import (
    FieldKind,
    FieldSpec,
    InterruptRequest,
    WorkflowInterrupted,
)
from hmasp.persistence import Store
from hmasp.state import (
    MessageKind,
    SessionStateBundle,
    ValidatedCardRecord,
    record_agent_message,
    write_shared,
)
from hmasp.validation import (
    CardDetails,
    CheckoutIntent,
    MaskedCard,
    authorize_3ds,
    format_amount,
    parse_amount,
    parse_merchant_ref,
)


class OutcomeStatus(str, Enum):
    SUCCESS = "success"
    FAILURE = "failure"


@dataclass(frozen=True)
class WorkflowOutcome:
    """What a subgraph hands to its process-summary agent. ``key_info``
    values are copied from state/store records — they are the authoritative
    payload every reply upstream must carry verbatim."""

    workflow: NodeId
    status: OutcomeStatus
    key_info: dict[str, str] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status is OutcomeStatus.SUCCESS


def failure_outcome(workflow: NodeId, reason: str) -> WorkflowOutcome:
    return WorkflowOutcome(workflow, OutcomeStatus.FAILURE, {"reason": reason})


def validation_failure_outcome(
    workflow: NodeId, error: ValidationError
) -> WorkflowOutcome:
    """Validation problems never escape the workflow boundary; they become
    failure outcomes carrying the stable reason code."""
    return failure_outcome(workflow, error.reason)


class InterruptPort:
    """Hands validated answers to workflow steps, or pauses the turn.

    Interrupt ids are deterministic — ``{session}:{turn}:{seq}`` with ``seq``
    counting raised interrupts within the turn — so a resumed process
    re-derives exactly the id it paused on.
    """

    def __init__(
        self,
        session_id: str,
        turn_id: int,
        start_seq: int = 0,
        answers: dict[str, object] | None = None,
    ):
        self.session_id = session_id
        self.turn_id = turn_id
        self.seq = start_seq
        self._answers = dict(answers or {})

    def request(
        self, workflow: NodeId, prompt_text: str, fields: tuple[FieldSpec, ...]
    ) -> object:
        interrupt_id = f"{self.session_id}:{self.turn_id}:{self.seq}"
        if interrupt_id in self._answers:
            self.seq += 1
            return self._answers.pop(interrupt_id)
        raise WorkflowInterrupted(
            InterruptRequest(interrupt_id, workflow, prompt_text, tuple(fields))
        )


# --- shared helpers -------------------------------------------------------


def _task_text(bundle: SessionStateBundle, domain_messages) -> str:
    """The instruction this workflow is acting on: the latest upstream
    entry in the domain log (the entry agent forwards the user's words)."""
    for msg in reversed(domain_messages):
        if msg.kind is MessageKind.UPSTREAM:
            return msg.text
    return ""


def _log(bundle: SessionStateBundle, wf: NodeId, turn_id: int, text: str) -> None:
    record_agent_message(bundle, wf, MessageKind.SELF_OUTPUT, text, turn_id)


_SELECTION_TOKENS = ("select", "choose", "pick", "use")


def _wants_selection(text: str) -> bool:
    lowered = text.lower()
    return any(tok in lowered.split() for tok in _SELECTION_TOKENS)


CARD_FIELDS = (
    FieldSpec("pan", FieldKind.PAN16, "16-digit card number"),
    FieldSpec("expiry", FieldKind.EXPIRY_MMYY, "expiry as MM/YY, not in the past"),
    FieldSpec("cvv", FieldKind.CVV3, "3-digit security code"),
)
CHOICE_FIELDS = (
    FieldSpec("choice", FieldKind.CARD_CHOICE_INDEX, "a number or ordinal (first, second, ...)"),
)
OTP_FIELDS = (FieldSpec("otp", FieldKind.OTP6, "the 6-digit one-time passcode"),)
AMOUNT_FIELDS = (FieldSpec("amount", FieldKind.AMOUNT, "an amount like $25.00"),)


# --- card registration -----------------------------------------------------


def run_card_registration(
    bundle: SessionStateBundle, io: InterruptPort, store: Store
) -> WorkflowOutcome:
    wf = NodeId.WF_CARD_REGISTRATION
    if bundle.cards.validated_card is None or bundle.cards.validated_card.card_id is None:
        bundle.cards.pending_card_input = {f.name: f.validation_hint for f in CARD_FIELDS}
        answer = io.request(
            wf,
            "Please provide your card number, expiry date (MM/YY), and CVV.",
            CARD_FIELDS,
        )
        details: CardDetails = answer["card_details"]  # type: ignore[index]
        record = store.save_card(bundle.shared.user_id, details)
        bundle.cards.pending_card_input = None
        bundle.cards.validated_card = ValidatedCardRecord(
            last4=record.last4,
            expiry=record.expiry,
            holder_name=record.holder_name,
            card_id=record.card_id,
        )
        write_shared(bundle, "card_id", record.card_id, writer=wf)
        _log(
            bundle,
            wf,
            io.turn_id,
            f"card ending {record.last4} saved as {record.card_id}",
        )
    saved = bundle.cards.validated_card
    return WorkflowOutcome(
        wf,
        OutcomeStatus.SUCCESS,
        {"last4": saved.last4, "card_id": saved.card_id or ""},
    )


# --- card retrieval -----------------------------------------------------------


def run_card_retrieval(
    bundle: SessionStateBundle, io: InterruptPort, store: Store
) -> WorkflowOutcome:
    wf = NodeId.WF_CARD_RETRIEVAL
    records = store.list_cards(bundle.shared.user_id)
    if not records:
        return failure_outcome(wf, "no_cards_on_file")

    masked = [
        MaskedCard(card_id=r.card_id, masked_pan=r.masked_pan, holder_name=r.holder_name)
        for r in records
    ]
    bundle.cards.retrieval_result = masked

    if _wants_selection(_task_text(bundle, bundle.cards.messages)):
        if len(records) == 1:
            chosen = records[0]
        else:
            listing = "; ".join(
                f"{i}. {c.masked_pan}" for i, c in enumerate(masked, start=1)
            )
            answer = io.request(
                wf, f"Which card would you like to use? {listing}", CHOICE_FIELDS
            )
            index = int(answer["choice"])  # type: ignore[index]
            if not 1 <= index <= len(records):
                return failure_outcome(wf, "choice_out_of_range")
            chosen = records[index - 1]
        write_shared(bundle, "card_id", chosen.card_id, writer=wf)
        _log(bundle, wf, io.turn_id, f"selected card ending {chosen.last4}")
        return WorkflowOutcome(
            wf,
            OutcomeStatus.SUCCESS,
            {"last4": chosen.last4, "card_id": chosen.card_id},
        )

    key_info = {"count": str(len(masked))}
    for i, card in enumerate(masked, start=1):
        key_info[f"card_{i}_last4"] = card.masked_pan[-4:]
    _log(bundle, wf, io.turn_id, f"listed {len(masked)} saved card(s)")
    return WorkflowOutcome(wf, OutcomeStatus.SUCCESS, key_info)


# --- payment ---------------------------------------------------------------------


def run_payment(
    bundle: SessionStateBundle, io: InterruptPort, store: Store
) -> WorkflowOutcome:
    wf = NodeId.WF_PAYMENT
    task_text = _task_text(bundle, bundle.payments.messages)

    if bundle.payments.checkout_intent is None:
        parsed = parse_amount(task_text)
        if parsed is None:
            answer = io.request(wf, "How much would you like to pay?", AMOUNT_FIELDS)
            parsed = (int(answer["amount_minor"]), str(answer["currency"]))  # type: ignore[index]
        amount_minor, currency = parsed
        bundle.payments.checkout_intent = CheckoutIntent(
            amount_minor=amount_minor,
            currency=currency,
            merchant_ref=parse_merchant_ref(task_text),
        )
    intent = bundle.payments.checkout_intent

    if bundle.shared.card_id is None:
        records = store.list_cards(bundle.shared.user_id)
        if not records:
            return failure_outcome(wf, "no_cards_on_file")
        if len(records) == 1:
            chosen = records[0]
        else:
            listing = "; ".join(
                f"{i}. {r.masked_pan}" for i, r in enumerate(records, start=1)
            )
            answer = io.request(
                wf, f"Which card should this payment use? {listing}", CHOICE_FIELDS
            )
            index = int(answer["choice"])  # type: ignore[index]
            if not 1 <= index <= len(records):
                return failure_outcome(wf, "choice_out_of_range")
            chosen = records[index - 1]
        write_shared(bundle, "card_id", chosen.card_id, writer=wf)
    card = store.get_card(bundle.shared.card_id)
    if card is None or card.user_id != bundle.shared.user_id:
        return failure_outcome(wf, "no_cards_on_file")

    if bundle.payments.auth_result is None:
        answer = io.request(
            wf,
            f"Enter the 6-digit one-time passcode to authorize "
            f"{intent.currency} {format_amount(intent.amount_minor)} "
            f"on card ending {card.last4}.",
            OTP_FIELDS,
        )
        bundle.payments.auth_result = authorize_3ds(
            intent, card.card_id, str(answer["otp"])  # type: ignore[index]
        )
    auth = bundle.payments.auth_result
    if not auth.approved:
        _log(bundle, wf, io.turn_id, "authorization declined")
        return failure_outcome(wf, auth.reason or "3ds_challenge_failed")

    if bundle.payments.transaction_id is None:
        txn = store.save_transaction(
            user_id=bundle.shared.user_id,
            card_id=card.card_id,
            amount_minor=intent.amount_minor,
            currency=intent.currency,
            auth_code=auth.auth_code or "",
        )
        bundle.payments.transaction_id = txn.transaction_id
        _log(
            bundle,
            wf,
            io.turn_id,
            f"payment of {intent.currency} {format_amount(intent.amount_minor)} "
            f"completed as {txn.transaction_id}",
        )
    return WorkflowOutcome(
        wf,
        OutcomeStatus.SUCCESS,
        {
            "transaction_id": bundle.payments.transaction_id,
            "last4": card.last4,
            "amount": format_amount(intent.amount_minor),
            "currency": intent.currency,
        },
    )


WORKFLOW_FUNCS = {
    NodeId.WF_CARD_REGISTRATION: run_card_registration,
    NodeId.WF_CARD_RETRIEVAL: run_card_retrieval,
    NodeId.WF_PAYMENT: run_payment,
}

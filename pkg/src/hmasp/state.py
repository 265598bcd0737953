"""Role-scoped session state: partitions, shared variables, message logs.

A session's state splits into three partitions — one for the entry agent,
one per domain (cards, payments) — plus a small set of shared variables
visible from every role. Each partition carries its own message log;
agents never read another partition's log, and the only cross-partition
channel is the shared variables.

Write-authority rules enforced here:
  * ``user_id`` is set at session creation and never changes.
  * ``card_id`` may only be written by a workflow role — never by an
    agent whose output comes from a decision backend.
  * message text is scrubbed of any Luhn-valid 16-digit run before it is
    stored, so raw card numbers cannot enter conversational state.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from enum import Enum

from hmasp.errors import (
    CrossRoleWrite,
    EmptyUserId,
    ForbiddenWriter,
    ImmutableKey,
)
from hmasp.hierarchy import (
    SUPERVISORS,
    WORKFLOWS,
    Domain,
    NodeId,
    domain_of,
)
from hmasp.validation import AuthResult, CheckoutIntent, MaskedCard, scrub_pans


class OriginRole(str, Enum):
    """Who produced a message. Router/workflow/summary roles collapse to
    their class: within a domain log the node is unambiguous."""

    USER = "user"
    CPA = "cpa"
    CARDS_SUPERVISOR = "cards_supervisor"
    PAYMENTS_SUPERVISOR = "payments_supervisor"
    ROUTER = "router"
    WORKFLOW = "workflow"
    SUMMARY = "summary"


class MessageKind(str, Enum):
    UPSTREAM = "upstream"
    SELF_OUTPUT = "self_output"
    DOWNSTREAM_RESPONSE = "downstream_response"


class TurnStatus(str, Enum):
    IDLE = "idle"
    AWAITING_INPUT = "awaiting_input"
    COMPLETED = "completed"
    REJECTED = "rejected"


# Display name prepended to stored message text, e.g. "CPA: done".
AGENT_LABEL: dict[OriginRole, str] = {
    OriginRole.CPA: "CPA",
    OriginRole.CARDS_SUPERVISOR: "CardsSupervisor",
    OriginRole.PAYMENTS_SUPERVISOR: "PaymentsSupervisor",
    OriginRole.ROUTER: "Router",
    OriginRole.WORKFLOW: "Workflow",
    OriginRole.SUMMARY: "ProcessSummary",
}


def origin_class(role: NodeId) -> OriginRole:
    """The message-origin class a hierarchy node writes under."""
    if role is NodeId.CPA:
        return OriginRole.CPA
    if role is NodeId.CARDS_SUPERVISOR:
        return OriginRole.CARDS_SUPERVISOR
    if role is NodeId.PAYMENTS_SUPERVISOR:
        return OriginRole.PAYMENTS_SUPERVISOR
    if role.value.startswith("router_"):
        return OriginRole.ROUTER
    if role.value.startswith("wf_"):
        return OriginRole.WORKFLOW
    return OriginRole.SUMMARY


@dataclass(frozen=True)
class Message:
    origin_role: OriginRole
    kind: MessageKind
    text: str
    turn_index: int

    def __post_init__(self) -> None:
        if self.turn_index < 0:
            raise ValueError("turn_index must be >= 0")


@dataclass(frozen=True)
class ValidatedCardRecord:
    """The card-validation outcome a domain state is allowed to hold:
    last four digits, expiry, holder — never the PAN or CVV (those go to
    the vault only)."""

    last4: str
    expiry: str
    holder_name: str = ""
    card_id: str | None = None


@dataclass
class SharedVars:
    user_id: str
    session_id: str
    card_id: str | None = None

    def __post_init__(self) -> None:
        if not self.user_id:
            raise EmptyUserId("user_id must be non-empty")


@dataclass
class PayAgentState:
    """Partition owned by the conversational entry agent only."""

    messages: list[Message] = field(default_factory=list)
    last_turn_status: TurnStatus = TurnStatus.IDLE


@dataclass
class CardsState:
    """Partition shared by the cards supervisor, card routers, card
    workflows, and their summary agents."""

    messages: list[Message] = field(default_factory=list)
    pending_card_input: dict[str, str] | None = None
    validated_card: ValidatedCardRecord | None = None
    retrieval_result: list[MaskedCard] | None = None


@dataclass
class PaymentState:
    """Partition shared by the payments supervisor, payment router,
    payment workflow, and its summary agent."""

    messages: list[Message] = field(default_factory=list)
    checkout_intent: CheckoutIntent | None = None
    auth_result: AuthResult | None = None
    transaction_id: str | None = None


@dataclass
class SessionStateBundle:
    shared: SharedVars
    pay_agent: PayAgentState = field(default_factory=PayAgentState)
    cards: CardsState = field(default_factory=CardsState)
    payments: PaymentState = field(default_factory=PaymentState)

    def partition_for(self, domain: Domain):
        return {
            Domain.PAY_AGENT: self.pay_agent,
            Domain.CARDS: self.cards,
            Domain.PAYMENTS: self.payments,
        }[domain]


@dataclass(frozen=True)
class RoleView:
    """Deep-copied projection of a bundle for one role: its own partition
    and the shared variables, nothing else. Mutating a view never touches
    the bundle."""

    role: NodeId
    shared: SharedVars
    partition: PayAgentState | CardsState | PaymentState

    @property
    def messages(self) -> list[Message]:
        return self.partition.messages


def new_session_state(user_id: str, session_id: str) -> SessionStateBundle:
    if not user_id:
        raise EmptyUserId("user_id must be non-empty")
    return SessionStateBundle(shared=SharedVars(user_id=user_id, session_id=session_id))


def project_for_role(bundle: SessionStateBundle, role: NodeId) -> RoleView:
    domain = domain_of(role)
    return RoleView(
        role=role,
        shared=copy.deepcopy(bundle.shared),
        partition=copy.deepcopy(bundle.partition_for(domain)),
    )


def write_shared(
    bundle: SessionStateBundle, key: str, value: str, writer: NodeId
) -> SessionStateBundle:
    if key in ("user_id", "session_id"):
        raise ImmutableKey(f"{key} is fixed at session creation")
    if key != "card_id":
        raise ImmutableKey(f"unknown shared variable {key!r}")
    if writer not in WORKFLOWS:
        raise ForbiddenWriter(
            f"{writer.value} may not set card_id; only workflow modules may"
        )
    bundle.shared.card_id = value
    return bundle


def append_message(
    bundle: SessionStateBundle, role: NodeId, msg: Message
) -> SessionStateBundle:
    """Append ``msg`` to the log of ``role``'s partition after checking the
    origin/kind combination is one of the three legal update paths:

      * upstream   — from the tier above the log's owner (the user for the
        entry agent's log, the entry agent for a domain log);
      * self_output — from a member of the partition itself;
      * downstream_response — a supervisor's report back up, which only
        the entry agent's log receives.

    Non-user text gets the origin label prefix; every text is scrubbed of
    Luhn-valid card numbers before storage.
    """
    domain = domain_of(role)
    origin, kind = msg.origin_role, msg.kind

    if kind is MessageKind.UPSTREAM:
        expected = OriginRole.USER if domain is Domain.PAY_AGENT else OriginRole.CPA
        ok = origin is expected
    elif kind is MessageKind.SELF_OUTPUT:
        if domain is Domain.PAY_AGENT:
            ok = origin is OriginRole.CPA
        else:
            supervisor = (
                OriginRole.CARDS_SUPERVISOR
                if domain is Domain.CARDS
                else OriginRole.PAYMENTS_SUPERVISOR
            )
            ok = origin in (
                supervisor,
                OriginRole.ROUTER,
                OriginRole.WORKFLOW,
                OriginRole.SUMMARY,
            )
    elif kind is MessageKind.DOWNSTREAM_RESPONSE:
        ok = domain is Domain.PAY_AGENT and origin in (
            OriginRole.CARDS_SUPERVISOR,
            OriginRole.PAYMENTS_SUPERVISOR,
        )
    else:  # pragma: no cover - enum is closed
        ok = False
    if not ok:
        raise CrossRoleWrite(
            f"origin {origin.value}/{kind.value} may not write to the "
            f"{domain.value} log"
        )

    log = bundle.partition_for(domain).messages
    if log and msg.turn_index < log[-1].turn_index:
        raise ValueError("turn_index must be non-decreasing within a log")

    text = scrub_pans(msg.text)
    if origin is not OriginRole.USER:
        prefix = f"{AGENT_LABEL[origin]}: "
        if not text.startswith(prefix):
            text = prefix + text
    log.append(Message(origin, kind, text, msg.turn_index))
    return bundle


def record_agent_message(
    bundle: SessionStateBundle,
    writer: NodeId,
    kind: MessageKind,
    text: str,
    turn_index: int,
) -> SessionStateBundle:
    """Convenience for an agent logging its own output (or a supervisor's
    response surfacing in the entry agent's log)."""
    target = NodeId.CPA if kind is MessageKind.DOWNSTREAM_RESPONSE else writer
    msg = Message(origin_class(writer), kind, text, turn_index)
    return append_message(bundle, target, msg)


# --- serialization --------------------------------------------------------


def bundle_to_dict(bundle: SessionStateBundle) -> dict:
    return asdict(bundle)


def bundle_to_json(bundle: SessionStateBundle) -> str:
    return json.dumps(bundle_to_dict(bundle), sort_keys=True, separators=(",", ":"))


def _message_from_dict(d: dict) -> Message:
    return Message(
        origin_role=OriginRole(d["origin_role"]),
        kind=MessageKind(d["kind"]),
        text=d["text"],
        turn_index=d["turn_index"],
    )


def bundle_from_dict(d: dict) -> SessionStateBundle:
    shared = SharedVars(**d["shared"])
    pay = d["pay_agent"]
    cards = d["cards"]
    payments = d["payments"]
    return SessionStateBundle(
        shared=shared,
        pay_agent=PayAgentState(
            messages=[_message_from_dict(m) for m in pay["messages"]],
            last_turn_status=TurnStatus(pay["last_turn_status"]),
        ),
        cards=CardsState(
            messages=[_message_from_dict(m) for m in cards["messages"]],
            pending_card_input=cards["pending_card_input"],
            validated_card=(
                ValidatedCardRecord(**cards["validated_card"])
                if cards["validated_card"]
                else None
            ),
            retrieval_result=(
                [MaskedCard(**c) for c in cards["retrieval_result"]]
                if cards["retrieval_result"] is not None
                else None
            ),
        ),
        payments=PaymentState(
            messages=[_message_from_dict(m) for m in payments["messages"]],
            checkout_intent=(
                CheckoutIntent(**payments["checkout_intent"])
                if payments["checkout_intent"]
                else None
            ),
            auth_result=(
                AuthResult(**payments["auth_result"])
                if payments["auth_result"]
                else None
            ),
            transaction_id=payments["transaction_id"],
        ),
    )


def bundle_from_json(raw: str) -> SessionStateBundle:
    return bundle_from_dict(json.loads(raw))

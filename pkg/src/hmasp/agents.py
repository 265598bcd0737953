"""Per-role agent behavior: contexts, allowed actions, summaries, replies.

Agents are stateless: each step projects the session bundle for the role,
offers the decision backend a closed set of allowed actions, and
post-processes the result. The anti-hallucination rule lives here — any
prose a backend writes is only used if every structured key-info value
appears in it verbatim; otherwise a deterministic template built from
state takes its place. Digits in user-facing text therefore always come
from state, never from generation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from hmasp.backends import AgentContext, AllowedActions, load_role_prompt
from hmasp.hierarchy import (
    ROUTERS_OF_SUPERVISOR,
    SUPERVISORS,
    WORKFLOW_OF_ROUTER,
    NodeId,
)
from hmasp.state import SessionStateBundle, project_for_role
from hmasp.workflows import OutcomeStatus, WorkflowOutcome


class SummaryOutcome(str, Enum):
    SUCCESS = "success"
    FAILURE = "failure"
    REJECTED_IRRELEVANT = "rejected_irrelevant"


@dataclass(frozen=True)
class ProcessSummary:
    """Structured outcome report a summary agent sends upward. The
    structured fields are authoritative; the narrative is presentation."""

    workflow: NodeId
    outcome: SummaryOutcome
    key_info: dict[str, str] = field(default_factory=dict)
    narrative: str = ""


# --- allowed actions per step ------------------------------------------------


def routing_actions(role: NodeId) -> AllowedActions:
    """Downward-path actions: the role's legal handoff targets plus
    rejection. Derived from the hierarchy, so a backend can never be
    offered an edge that does not exist."""
    if role is NodeId.CPA:
        targets = frozenset(SUPERVISORS)
    elif role in SUPERVISORS:
        targets = frozenset(ROUTERS_OF_SUPERVISOR[role])
    elif role in WORKFLOW_OF_ROUTER:
        targets = frozenset({WORKFLOW_OF_ROUTER[role]})
    else:
        raise ValueError(f"{role.value} has no routing step")
    return AllowedActions(handoff_targets=targets, may_reject=True)


NARRATIVE_ACTIONS = AllowedActions(may_respond=True, may_reject=False)


def agent_context(
    bundle: SessionStateBundle, role: NodeId, allowed: AllowedActions
) -> AgentContext:
    return AgentContext(
        role=role,
        role_prompt=load_role_prompt(role),
        view=project_for_role(bundle, role),
        allowed=allowed,
    )


# --- anti-hallucination gate -----------------------------------------------


def carries_key_info(text: str, key_info: dict[str, str]) -> bool:
    """True iff every structured value appears verbatim in the text."""
    return bool(text.strip()) and all(v in text for v in key_info.values())


_WORKFLOW_TOPIC = {
    NodeId.WF_CARD_REGISTRATION: "card registration",
    NodeId.WF_CARD_RETRIEVAL: "card retrieval",
    NodeId.WF_PAYMENT: "payment processing",
}


def template_narrative(
    workflow: NodeId, outcome: SummaryOutcome, key_info: dict[str, str]
) -> str:
    """Deterministic prose for a summary, containing every key_info value
    verbatim. Used whenever a backend's narrative fails the gate — which
    with the scripted backend is always, keeping evaluation runs stable."""
    topic = _WORKFLOW_TOPIC[workflow]
    if outcome is SummaryOutcome.REJECTED_IRRELEVANT:
        return f"The request was not a {topic} task; nothing was done."
    if outcome is SummaryOutcome.FAILURE:
        return f"{topic.capitalize()} failed: {key_info.get('reason', 'unknown')}."

    if workflow is NodeId.WF_CARD_REGISTRATION:
        return (
            f"Your card ending in {key_info['last4']} was saved "
            f"(id {key_info['card_id']})."
        )
    if workflow is NodeId.WF_CARD_RETRIEVAL:
        if "card_id" in key_info:  # a selection outcome
            return (
                f"Selected the card ending in {key_info['last4']} "
                f"(id {key_info['card_id']})."
            )
        count = int(key_info["count"])
        endings = ", ".join(
            key_info[f"card_{i}_last4"] for i in range(1, count + 1)
        )
        return f"You have {key_info['count']} saved card(s), ending in: {endings}."
    return (
        f"Your payment of {key_info['currency']} {key_info['amount']} on the "
        f"card ending in {key_info['last4']} has been completed "
        f"(transaction {key_info['transaction_id']})."
    )


def summary_from_outcome(outcome: WorkflowOutcome) -> ProcessSummary:
    """Structured summary fields copied from the workflow outcome — filled
    before any narrative exists, never from backend text."""
    status = (
        SummaryOutcome.SUCCESS
        if outcome.status is OutcomeStatus.SUCCESS
        else SummaryOutcome.FAILURE
    )
    return ProcessSummary(
        workflow=outcome.workflow,
        outcome=status,
        key_info=dict(outcome.key_info),
    )


def rejection_summary(workflow: NodeId) -> ProcessSummary:
    """Summary for a router that diverted the request instead of invoking
    its workflow. Carries no key info: there is no outcome payload that
    must survive upstream, only the fact of the rejection."""
    return ProcessSummary(
        workflow=workflow,
        outcome=SummaryOutcome.REJECTED_IRRELEVANT,
    )


def finalize_narrative(summary: ProcessSummary, proposed: str) -> ProcessSummary:
    """Attach a narrative: the backend's text if it passes the verbatim
    gate, else the deterministic template."""
    if carries_key_info(proposed, summary.key_info):
        text = proposed
    else:
        text = template_narrative(summary.workflow, summary.outcome, summary.key_info)
    return ProcessSummary(
        workflow=summary.workflow,
        outcome=summary.outcome,
        key_info=dict(summary.key_info),
        narrative=text,
    )


def final_reply(summary: ProcessSummary, proposed: str) -> str:
    """The entry agent's user-facing reply, under the same verbatim gate;
    its fallback is the already-verified summary narrative."""
    if carries_key_info(proposed, summary.key_info):
        return proposed
    return summary.narrative

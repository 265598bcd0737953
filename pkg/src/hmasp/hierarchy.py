"""The agent hierarchy: node identities, levels, and the legal handoff edges.

The node set and edge set are closed. Nothing in the engine may move
control along a pair that is not in EDGE_SET; the orchestrator enforces
this on every transition regardless of what a decision backend proposes.
"""

from __future__ import annotations

from enum import Enum

from hmasp.errors import UnknownRole


class NodeId(str, Enum):
    CPA = "cpa"
    CARDS_SUPERVISOR = "cards_supervisor"
    PAYMENTS_SUPERVISOR = "payments_supervisor"
    ROUTER_CARD_REGISTRATION = "router_card_registration"
    ROUTER_CARD_RETRIEVAL = "router_card_retrieval"
    ROUTER_PAYMENT = "router_payment"
    WF_CARD_REGISTRATION = "wf_card_registration"
    WF_CARD_RETRIEVAL = "wf_card_retrieval"
    WF_PAYMENT = "wf_payment"
    SUMMARY_CARD_REGISTRATION = "summary_card_registration"
    SUMMARY_CARD_RETRIEVAL = "summary_card_retrieval"
    SUMMARY_PAYMENT = "summary_payment"

    def __str__(self) -> str:  # pragma: no cover - cosmetic
        return self.value


N = NodeId

# Hierarchy level per node: 1 entry agent, 2 supervisors, 3 routers,
# then the workflow subgraphs and their summary agents.
LEVEL: dict[NodeId, int] = {
    N.CPA: 1,
    N.CARDS_SUPERVISOR: 2,
    N.PAYMENTS_SUPERVISOR: 2,
    N.ROUTER_CARD_REGISTRATION: 3,
    N.ROUTER_CARD_RETRIEVAL: 3,
    N.ROUTER_PAYMENT: 3,
    N.WF_CARD_REGISTRATION: 4,
    N.WF_CARD_RETRIEVAL: 4,
    N.WF_PAYMENT: 4,
    N.SUMMARY_CARD_REGISTRATION: 4,
    N.SUMMARY_CARD_RETRIEVAL: 4,
    N.SUMMARY_PAYMENT: 4,
}

SUPERVISORS = (N.CARDS_SUPERVISOR, N.PAYMENTS_SUPERVISOR)
ROUTERS = (N.ROUTER_CARD_REGISTRATION, N.ROUTER_CARD_RETRIEVAL, N.ROUTER_PAYMENT)
WORKFLOWS = (N.WF_CARD_REGISTRATION, N.WF_CARD_RETRIEVAL, N.WF_PAYMENT)
SUMMARIES = (
    N.SUMMARY_CARD_REGISTRATION,
    N.SUMMARY_CARD_RETRIEVAL,
    N.SUMMARY_PAYMENT,
)

# Per-task chain: supervisor -> router -> workflow -> summary.
SUPERVISOR_OF: dict[NodeId, NodeId] = {
    N.ROUTER_CARD_REGISTRATION: N.CARDS_SUPERVISOR,
    N.ROUTER_CARD_RETRIEVAL: N.CARDS_SUPERVISOR,
    N.ROUTER_PAYMENT: N.PAYMENTS_SUPERVISOR,
    N.WF_CARD_REGISTRATION: N.CARDS_SUPERVISOR,
    N.WF_CARD_RETRIEVAL: N.CARDS_SUPERVISOR,
    N.WF_PAYMENT: N.PAYMENTS_SUPERVISOR,
    N.SUMMARY_CARD_REGISTRATION: N.CARDS_SUPERVISOR,
    N.SUMMARY_CARD_RETRIEVAL: N.CARDS_SUPERVISOR,
    N.SUMMARY_PAYMENT: N.PAYMENTS_SUPERVISOR,
}

WORKFLOW_OF_ROUTER: dict[NodeId, NodeId] = {
    N.ROUTER_CARD_REGISTRATION: N.WF_CARD_REGISTRATION,
    N.ROUTER_CARD_RETRIEVAL: N.WF_CARD_RETRIEVAL,
    N.ROUTER_PAYMENT: N.WF_PAYMENT,
}

SUMMARY_OF_WORKFLOW: dict[NodeId, NodeId] = {
    N.WF_CARD_REGISTRATION: N.SUMMARY_CARD_REGISTRATION,
    N.WF_CARD_RETRIEVAL: N.SUMMARY_CARD_RETRIEVAL,
    N.WF_PAYMENT: N.SUMMARY_PAYMENT,
}

ROUTERS_OF_SUPERVISOR: dict[NodeId, tuple[NodeId, ...]] = {
    N.CARDS_SUPERVISOR: (N.ROUTER_CARD_REGISTRATION, N.ROUTER_CARD_RETRIEVAL),
    N.PAYMENTS_SUPERVISOR: (N.ROUTER_PAYMENT,),
}

DOWN_EDGES: frozenset[tuple[NodeId, NodeId]] = frozenset(
    [
        (N.CPA, N.CARDS_SUPERVISOR),
        (N.CPA, N.PAYMENTS_SUPERVISOR),
        (N.CARDS_SUPERVISOR, N.ROUTER_CARD_REGISTRATION),
        (N.CARDS_SUPERVISOR, N.ROUTER_CARD_RETRIEVAL),
        (N.PAYMENTS_SUPERVISOR, N.ROUTER_PAYMENT),
    ]
    + [(r, WORKFLOW_OF_ROUTER[r]) for r in ROUTERS]
    + [(w, SUMMARY_OF_WORKFLOW[w]) for w in WORKFLOWS]
)

UP_EDGES: frozenset[tuple[NodeId, NodeId]] = frozenset(
    [(s, SUPERVISOR_OF[s]) for s in SUMMARIES]
    + [(sup, N.CPA) for sup in SUPERVISORS]
)

EDGE_SET: frozenset[tuple[NodeId, NodeId]] = DOWN_EDGES | UP_EDGES

# Edges the handoff metric counts: entry-agent-to-supervisor and
# supervisor-to-router, downward only.
METRIC_EDGES: frozenset[tuple[NodeId, NodeId]] = frozenset(
    e for e in DOWN_EDGES if LEVEL[e[0]] in (1, 2) and LEVEL[e[1]] in (2, 3)
)


class Domain(str, Enum):
    """State-partition ownership; routers/workflows/summaries share their
    domain's partition rather than owning one."""

    PAY_AGENT = "pay_agent"
    CARDS = "cards"
    PAYMENTS = "payments"


_DOMAIN: dict[NodeId, Domain] = {N.CPA: Domain.PAY_AGENT}
for node in LEVEL:
    if node is N.CPA:
        continue
    sup = node if node in SUPERVISORS else SUPERVISOR_OF[node]
    _DOMAIN[node] = Domain.CARDS if sup is N.CARDS_SUPERVISOR else Domain.PAYMENTS


def domain_of(role: NodeId | str) -> Domain:
    """Map a role to the state partition it is allowed to touch."""
    try:
        node = NodeId(role)
    except ValueError:
        raise UnknownRole(f"unknown role: {role!r}") from None
    return _DOMAIN[node]


def edge_direction(edge: tuple[NodeId, NodeId]) -> str:
    if edge in DOWN_EDGES:
        return "down"
    if edge in UP_EDGES:
        return "up"
    raise IllegalPair(edge)


class IllegalPair(LookupError):
    pass

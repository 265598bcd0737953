"""The execution engine: drives one user turn through the agent hierarchy.

A turn always starts at the entry agent and moves along validated edges
only — entry agent to a domain supervisor, supervisor to a router, router
to its workflow, workflow to its summary agent, and then back up the same
chain. Every transition taken is checked against the closed edge set and
appended to the turn's handoff trace; a backend proposing anything else
is retried and then the turn is rejected, so an out-of-hierarchy hop can
never execute.

Turns end in one of three ways:

  * ``completed`` — the workflow succeeded and the entry agent replies;
  * ``rejected``  — some level declined (entry agent directly, supervisor,
    router via its summary agent, or a workflow/validation failure);
  * ``interrupted`` — a workflow needs user input: a checkpoint with the
    full session state is persisted and the caller receives a structured
    interrupt request to relay to the user.

Resuming always reloads the bundle from the checkpoint — the in-memory
copy is discarded — so a resume after a process restart takes exactly the
same code path, and produces exactly the same result, as one in the same
process.
"""

from __future__ import annotations

import re
import threading
from dataclasses import dataclass, field as dataclass_field
from datetime import date
from enum import Enum

from hmasp.agents import (
    NARRATIVE_ACTIONS,
    ProcessSummary,
    SummaryOutcome,
    agent_context,
    final_reply,
    finalize_narrative,
    rejection_summary,
    routing_actions,
    summary_from_outcome,
)
from hmasp.backends import DecisionBackend, Handoff, Reject, Respond
from hmasp.errors import (
    BackendTimeout,
    CheckpointAlreadyConsumed,
    IllegalEdge,
    MalformedOutput,
    MissingField,
    NoPendingCheckpoint,
    SessionBusy,
    SessionNotFound,
    StaleInterrupt,
    UnknownInterrupt,
    UnknownTurn,
    ValidationError,
)
from hmasp.hierarchy import (
    EDGE_SET,
    SUMMARY_OF_WORKFLOW,
    SUPERVISOR_OF,
    WORKFLOW_OF_ROUTER,
    NodeId,
)
from hmasp.interrupts import Checkpoint, FieldKind, InterruptRequest, WorkflowInterrupted
from hmasp.persistence import Store
from hmasp.state import (
    Message,
    MessageKind,
    OriginRole,
    SessionStateBundle,
    TurnStatus,
    append_message,
    bundle_from_dict,
    bundle_to_dict,
    new_session_state,
    record_agent_message,
)
from hmasp.validation import (
    extract_otp,
    parse_amount_reply,
    parse_choice_index,
    validate_card_input,
)
from hmasp.workflows import (
    WORKFLOW_FUNCS,
    InterruptPort,
    WorkflowOutcome,
    validation_failure_outcome,
)


class TurnResultStatus(str, Enum):
    COMPLETED = "completed"
    INTERRUPTED = "interrupted"
    REJECTED = "rejected"


Edge = tuple[NodeId, NodeId]


@dataclass(frozen=True)
class TurnResult:
    session_id: str
    turn_id: int
    status: TurnResultStatus
    trace: tuple[Edge, ...]
    reply: str | None = None
    interrupt: InterruptRequest | None = None

    def __post_init__(self) -> None:
        populated = (self.reply is not None) + (self.interrupt is not None)
        if populated != 1:
            raise ValueError("exactly one of reply/interrupt must be set")

    def trace_json(self) -> list[dict]:
        return [
            {"from": a.value, "to": b.value, "turn_id": self.turn_id}
            for a, b in self.trace
        ]


def apply_handoff(current: NodeId, decision: Handoff) -> NodeId:
    """Validate a proposed transition against the closed edge set."""
    if (current, decision.target) not in EDGE_SET:
        raise IllegalEdge(f"{current.value} -> {decision.target.value} is not an edge")
    return decision.target


class _TurnRejected(Exception):
    """Internal: unwinds a turn into a rejected TurnResult."""

    def __init__(self, reply: str):
        super().__init__(reply)
        self.reply = reply


@dataclass
class _Session:
    bundle: SessionStateBundle
    next_turn_id: int = 0
    traces: dict[int, list[Edge]] = dataclass_field(default_factory=dict)
    lock: threading.Lock = dataclass_field(default_factory=threading.Lock)
    retries_used: dict[str, int] = dataclass_field(default_factory=dict)


class Engine:
    """Session manager + turn executor over one store and one backend.

    ``clock`` pins 'today' for expiry validation — evaluation runs inject
    a fixed date so their outcomes never depend on the wall calendar.
    """

    def __init__(
        self,
        store: Store,
        backend: DecisionBackend,
        clock: date | None = None,
        max_input_retries: int = 0,
        hop_budget: int = 12,
        decision_retries: int = 2,
    ):
        self.store = store
        self.backend = backend
        self.clock = clock or date.today()
        self.max_input_retries = max_input_retries
        self.hop_budget = hop_budget
        self.decision_retries = decision_retries
        self._sessions: dict[str, _Session] = {}
        self._registry_lock = threading.Lock()
        # Numbering continues past any checkpointed session so a restart
        # can never mint an id that collides with persisted state.
        self._session_count = 0
        for sid in store.checkpoint_session_ids():
            m = re.fullmatch(r"sess_(\d+)", sid)
            if m:
                self._session_count = max(self._session_count, int(m.group(1)))

    # -- session lifecycle ---------------------------------------------------

    def create_session(self, user_id: str) -> str:
        with self._registry_lock:
            self._session_count += 1
            session_id = f"sess_{self._session_count:06d}"
            self._sessions[session_id] = _Session(
                bundle=new_session_state(user_id, session_id)
            )
            return session_id

    def _session(self, session_id: str) -> _Session:
        with self._registry_lock:
            sess = self._sessions.get(session_id)
            if sess is not None:
                return sess
        # Unknown in memory: a checkpoint on disk can revive it (restart).
        cp = self.store.peek_checkpoint(session_id)
        if cp is None:
            raise SessionNotFound(f"no session {session_id!r}")
        with self._registry_lock:
            sess = self._sessions.get(session_id)
            if sess is None:
                sess = _Session(
                    bundle=bundle_from_dict(cp.bundle),
                    next_turn_id=cp.turn_id + 1,
                )
                self._sessions[session_id] = sess
            return sess

    def session_bundle(self, session_id: str) -> SessionStateBundle:
        return self._session(session_id).bundle

    def has_session(self, session_id: str) -> bool:
        try:
            self._session(session_id)
            return True
        except SessionNotFound:
            return False

    def get_trace(self, session_id: str, turn_id: int) -> tuple[Edge, ...]:
        sess = self._session(session_id)
        if turn_id not in sess.traces:
            raise UnknownTurn(f"session {session_id!r} has no turn {turn_id}")
        return tuple(sess.traces[turn_id])

    def pending_interrupt(self, session_id: str) -> InterruptRequest | None:
        if self.store.has_pending_checkpoint(session_id):
            return self.store.load_checkpoint(session_id).pending_interrupt
        return None

    # -- turns ------------------------------------------------------------------

    def submit_turn(self, session_id: str, user_text: str) -> TurnResult:
        sess = self._session(session_id)
        if not sess.lock.acquire(blocking=False):
            raise SessionBusy(f"a turn is already in flight for {session_id!r}")
        try:
            turn_id = sess.next_turn_id
            sess.next_turn_id += 1
            self._reset_turn_scratch(sess.bundle)
            append_message(
                sess.bundle,
                NodeId.CPA,
                Message(OriginRole.USER, MessageKind.UPSTREAM, user_text, turn_id),
            )
            trace: list[Edge] = []
            sess.traces[turn_id] = trace
            return self._run_from_cpa(sess, turn_id, user_text, trace)
        finally:
            sess.lock.release()

    def resume_turn(
        self, session_id: str, interrupt_id: str, user_text: str
    ) -> TurnResult:
        sess = self._session(session_id)
        if not sess.lock.acquire(blocking=False):
            raise SessionBusy(f"a turn is already in flight for {session_id!r}")
        try:
            cp = self._load_checkpoint_for(session_id, interrupt_id)
            # The checkpoint, not the in-memory copy, is the source of
            # truth: restart and same-process resumes share one code path.
            sess.bundle = bundle_from_dict(cp.bundle)
            sess.next_turn_id = max(sess.next_turn_id, cp.turn_id + 1)
            trace = sess.traces.setdefault(cp.turn_id, [])
            trace.clear()
            trace.extend(
                (NodeId(a), NodeId(b)) for a, b in cp.trace
            )

            try:
                payload = self._validate_answer(cp.pending_interrupt, user_text)
            except ValidationError as err:
                used = sess.retries_used.get(interrupt_id, 0)
                if used < self.max_input_retries:
                    sess.retries_used[interrupt_id] = used + 1
                    return TurnResult(
                        session_id=session_id,
                        turn_id=cp.turn_id,
                        status=TurnResultStatus.INTERRUPTED,
                        trace=tuple(trace),
                        interrupt=cp.pending_interrupt,
                    )
                self.store.consume_checkpoint(session_id)
                workflow = cp.pending_interrupt.workflow
                outcome = validation_failure_outcome(workflow, err)
                self._record_edge(trace, workflow, SUMMARY_OF_WORKFLOW[workflow])
                try:
                    reply, status = self._ascend(
                        sess, cp.turn_id, summary_from_outcome(outcome), trace
                    )
                except _TurnRejected as rej:
                    reply, status = rej.reply, TurnResultStatus.REJECTED
                return self._reply_result(sess, cp.turn_id, status, reply, trace)

            self.store.consume_checkpoint(session_id)
            port = InterruptPort(
                session_id,
                cp.turn_id,
                start_seq=cp.interrupt_seq,
                answers={interrupt_id: payload},
            )
            try:
                return self._run_workflow_and_ascend(
                    sess, cp.turn_id, cp.pending_interrupt.workflow, port, trace
                )
            except _TurnRejected as rej:
                return self._reply_result(
                    sess, cp.turn_id, TurnResultStatus.REJECTED, rej.reply, trace
                )
        finally:
            sess.lock.release()

    # -- internals -------------------------------------------------------------------

    def _reset_turn_scratch(self, bundle: SessionStateBundle) -> None:
        """Per-turn outcome fields start clean; durable facts (saved cards,
        transactions, the selected card_id) live in the store and shared
        vars and survive."""
        bundle.cards.pending_card_input = None
        bundle.cards.validated_card = None
        bundle.cards.retrieval_result = None
        bundle.payments.checkout_intent = None
        bundle.payments.auth_result = None
        bundle.payments.transaction_id = None

    def _record_edge(self, trace: list[Edge], frm: NodeId, to: NodeId) -> None:
        if (frm, to) not in EDGE_SET:
            raise IllegalEdge(f"{frm.value} -> {to.value} is not an edge")
        if len(trace) >= self.hop_budget:
            raise _TurnRejected(
                "The request could not be completed: too many handoffs."
            )
        trace.append((frm, to))

    def _decide(self, bundle: SessionStateBundle, role: NodeId, allowed):
        """One decision with the engine-side retry policy: backend errors
        end the turn; legal-but-wrong (out-of-edge-set) proposals are
        retried, then end the turn."""
        ctx = agent_context(bundle, role, allowed)
        last_problem = "no decision"
        for _ in range(self.decision_retries + 1):
            try:
                decision = self.backend.decide(ctx)
            except (BackendTimeout, MalformedOutput) as e:
                raise _TurnRejected(
                    f"The request could not be completed: the {role.value} "
                    f"decision step failed ({e.__class__.__name__})."
                ) from e
            if isinstance(decision, Handoff):
                try:
                    apply_handoff(role, decision)
                except IllegalEdge as e:
                    last_problem = str(e)
                    continue
            if allowed.permits(decision):
                return decision
            last_problem = f"disallowed decision {decision!r}"
        raise _TurnRejected(
            f"The request could not be completed: {role.value} kept proposing "
            f"an illegal action ({last_problem})."
        )

    def _narrative_proposal(self, bundle: SessionStateBundle, role: NodeId) -> str:
        """Ask a backend for prose (summaries, upward reports, final
        replies). Prose is optional: failures fall back to templates, so
        backend trouble here never kills the turn."""
        try:
            decision = self.backend.decide(
                agent_context(bundle, role, NARRATIVE_ACTIONS)
            )
        except (BackendTimeout, MalformedOutput):
            return ""
        return decision.text if isinstance(decision, Respond) else ""

    def _run_from_cpa(
        self, sess: _Session, turn_id: int, user_text: str, trace: list[Edge]
    ) -> TurnResult:
        bundle = sess.bundle
        try:
            cpa_decision = self._decide(bundle, NodeId.CPA, routing_actions(NodeId.CPA))
            if isinstance(cpa_decision, Reject):
                # Entry-agent rejection: no handoff ever happens.
                reply = cpa_decision.text or (
                    "I can only help with card registration, card retrieval, "
                    "and payments."
                )
                return self._reply_result(
                    sess, turn_id, TurnResultStatus.REJECTED, reply, trace
                )

            supervisor = cpa_decision.target
            self._record_edge(trace, NodeId.CPA, supervisor)
            append_message(
                bundle,
                supervisor,
                Message(OriginRole.CPA, MessageKind.UPSTREAM, user_text, turn_id),
            )

            sup_decision = self._decide(
                bundle, supervisor, routing_actions(supervisor)
            )
            if isinstance(sup_decision, Reject):
                self._record_edge(trace, supervisor, NodeId.CPA)
                record_agent_message(
                    bundle,
                    supervisor,
                    MessageKind.DOWNSTREAM_RESPONSE,
                    sup_decision.text or "This request does not match my domain.",
                    turn_id,
                )
                reply = sup_decision.text or (
                    "That request does not match any supported task."
                )
                return self._reply_result(
                    sess, turn_id, TurnResultStatus.REJECTED, reply, trace
                )

            router = sup_decision.target
            self._record_edge(trace, supervisor, router)

            router_decision = self._decide(bundle, router, routing_actions(router))
            if isinstance(router_decision, Reject):
                # Router rejections divert to the summary agent without a
                # router->workflow edge being taken.
                workflow = WORKFLOW_OF_ROUTER[router]
                summary = rejection_summary(workflow)
                reply, status = self._ascend(sess, turn_id, summary, trace)
                return self._reply_result(sess, turn_id, status, reply, trace)

            workflow = router_decision.target
            self._record_edge(trace, router, workflow)
            port = InterruptPort(sess.bundle.shared.session_id, turn_id)
            return self._run_workflow_and_ascend(sess, turn_id, workflow, port, trace)
        except _TurnRejected as rej:
            return self._reply_result(
                sess, turn_id, TurnResultStatus.REJECTED, rej.reply, trace
            )

    def _run_workflow_and_ascend(
        self,
        sess: _Session,
        turn_id: int,
        workflow: NodeId,
        port: InterruptPort,
        trace: list[Edge],
    ) -> TurnResult:
        bundle = sess.bundle
        run = WORKFLOW_FUNCS[workflow]
        try:
            outcome: WorkflowOutcome = run(bundle, port, self.store)
        except WorkflowInterrupted as pause:
            bundle.pay_agent.last_turn_status = TurnStatus.AWAITING_INPUT
            checkpoint = Checkpoint(
                session_id=bundle.shared.session_id,
                turn_id=turn_id,
                paused_at=workflow,
                pending_interrupt=pause.request,
                bundle=bundle_to_dict(bundle),
                interrupt_seq=port.seq,
                trace=[[a.value, b.value] for a, b in trace],
            )
            self.store.save_checkpoint(checkpoint)
            return TurnResult(
                session_id=bundle.shared.session_id,
                turn_id=turn_id,
                status=TurnResultStatus.INTERRUPTED,
                trace=tuple(trace),
                interrupt=pause.request,
            )
        self._record_edge(trace, workflow, SUMMARY_OF_WORKFLOW[workflow])
        reply, status = self._ascend(sess, turn_id, summary_from_outcome(outcome), trace)
        return self._reply_result(sess, turn_id, status, reply, trace)

    def _ascend(
        self,
        sess: _Session,
        turn_id: int,
        summary: ProcessSummary,
        trace: list[Edge],
    ) -> tuple[str, TurnResultStatus]:
        """The upward path: summary agent -> supervisor -> entry agent.
        Structured fields ride unmodified; each narrative hop may be
        re-worded by the backend but only under the verbatim gate."""
        bundle = sess.bundle
        summary_node = SUMMARY_OF_WORKFLOW[summary.workflow]
        proposal = self._narrative_proposal(bundle, summary_node)
        summary = finalize_narrative(summary, proposal)
        record_agent_message(
            bundle, summary_node, MessageKind.SELF_OUTPUT, summary.narrative, turn_id
        )

        supervisor = SUPERVISOR_OF[summary_node]
        self._record_edge(trace, summary_node, supervisor)
        sup_text = self._narrative_proposal(bundle, supervisor)
        upward_text = (
            sup_text
            if sup_text and all(v in sup_text for v in summary.key_info.values())
            else summary.narrative
        )
        record_agent_message(
            bundle, supervisor, MessageKind.DOWNSTREAM_RESPONSE, upward_text, turn_id
        )
        self._record_edge(trace, supervisor, NodeId.CPA)

        reply = final_reply(summary, self._narrative_proposal(bundle, NodeId.CPA))
        status = (
            TurnResultStatus.COMPLETED
            if summary.outcome is SummaryOutcome.SUCCESS
            else TurnResultStatus.REJECTED
        )
        return reply, status

    def _reply_result(
        self,
        sess: _Session,
        turn_id: int,
        status: TurnResultStatus,
        reply: str,
        trace: list[Edge],
    ) -> TurnResult:
        bundle = sess.bundle
        record_agent_message(
            bundle, NodeId.CPA, MessageKind.SELF_OUTPUT, reply, turn_id
        )
        bundle.pay_agent.last_turn_status = (
            TurnStatus.COMPLETED
            if status is TurnResultStatus.COMPLETED
            else TurnStatus.REJECTED
        )
        return TurnResult(
            session_id=bundle.shared.session_id,
            turn_id=turn_id,
            status=status,
            trace=tuple(trace),
            reply=reply,
        )

    # -- resume plumbing -----------------------------------------------------------

    def _load_checkpoint_for(self, session_id: str, interrupt_id: str) -> Checkpoint:
        try:
            cp = self.store.load_checkpoint(session_id)
        except NoPendingCheckpoint as e:
            raise UnknownInterrupt(f"no pending interrupt {interrupt_id!r}") from e
        except CheckpointAlreadyConsumed as e:
            spent = self.store.peek_checkpoint(session_id)
            if spent and spent.pending_interrupt.interrupt_id == interrupt_id:
                raise StaleInterrupt(
                    f"interrupt {interrupt_id!r} was already resumed"
                ) from e
            raise UnknownInterrupt(f"no pending interrupt {interrupt_id!r}") from e
        if cp.pending_interrupt.interrupt_id != interrupt_id:
            raise UnknownInterrupt(
                f"interrupt {interrupt_id!r} does not match the pending one"
            )
        return cp

    def _validate_answer(self, request: InterruptRequest, user_text: str) -> dict:
        """Parse + validate a resume answer against the interrupt's field
        kinds. The payload handed to the workflow holds naturally typed
        values; raw text never travels further than this point."""
        kinds = {f.kind for f in request.fields_requested}
        if FieldKind.PAN16 in kinds:
            details = validate_card_input(user_text, self.clock)
            return {"card_details": details}
        if FieldKind.CARD_CHOICE_INDEX in kinds:
            index = parse_choice_index(user_text)
            if index is None:
                raise MissingField("choice")
            return {"choice": index}
        if FieldKind.OTP6 in kinds:
            return {"otp": extract_otp(user_text)}
        if FieldKind.AMOUNT in kinds:
            amount_minor, currency = parse_amount_reply(user_text)
            return {"amount_minor": amount_minor, "currency": currency}
        raise MissingField("answer")  # pragma: no cover - kinds enum is closed

"""End-to-end engine behavior: routing, traces, interrupts, resume, recovery."""

from __future__ import annotations

import random
import threading
from datetime import date

import pytest

from hmasp.backends import (
    DecisionBackend,
    Handoff,
    Reject,
    Respond,
    ScriptedBackend,
)
from hmasp.errors import (
    SessionBusy,
    SessionNotFound,
    StaleInterrupt,
    TransportError,
    UnknownInterrupt,
    UnknownTurn,
)
from hmasp.hierarchy import EDGE_SET, NodeId
from hmasp.interrupts import FieldKind
from hmasp.orchestrator import Engine, TurnResultStatus, apply_handoff
from hmasp.persistence import Store

CLOCK = date(2026, 1, 1)
CARD_TEXT = "4242 4242 4242 4242, 12/33, cvv 123, name Dana Smith"
SECOND_CARD = "5555 5555 5555 4444, 11/32, cvv 987, name Dana Smith"


def make_engine(tmp_path, **kwargs) -> Engine:
    store = Store(tmp_path / "data")
    return Engine(store, ScriptedBackend(), clock=CLOCK, **kwargs)


def register_card(engine: Engine, session_id: str, card_text: str = CARD_TEXT):
    paused = engine.submit_turn(session_id, "register a new card")
    assert paused.status is TurnResultStatus.INTERRUPTED
    done = engine.resume_turn(session_id, paused.interrupt.interrupt_id, card_text)
    assert done.status is TurnResultStatus.COMPLETED
    return done


# --- canonical flows -------------------------------------------------------------


def test_card_registration_round_trip(tmp_path):
    engine = make_engine(tmp_path)
    sid = engine.create_session("user-1")

    paused = engine.submit_turn(sid, "please register a new card")
    assert paused.status is TurnResultStatus.INTERRUPTED
    assert paused.turn_id == 0
    assert paused.reply is None
    kinds = {f.kind for f in paused.interrupt.fields_requested}
    assert kinds == {FieldKind.PAN16, FieldKind.EXPIRY_MMYY, FieldKind.CVV3}
    # Paused exactly at the workflow: the three downward hops, nothing more.
    assert paused.trace == (
        (NodeId.CPA, NodeId.CARDS_SUPERVISOR),
        (NodeId.CARDS_SUPERVISOR, NodeId.ROUTER_CARD_REGISTRATION),
        (NodeId.ROUTER_CARD_REGISTRATION, NodeId.WF_CARD_REGISTRATION),
    )

    done = engine.resume_turn(sid, paused.interrupt.interrupt_id, CARD_TEXT)
    assert done.status is TurnResultStatus.COMPLETED
    assert done.turn_id == 0
    assert "4242" in done.reply and "card_000001" in done.reply
    assert done.trace == paused.trace + (
        (NodeId.WF_CARD_REGISTRATION, NodeId.SUMMARY_CARD_REGISTRATION),
        (NodeId.SUMMARY_CARD_REGISTRATION, NodeId.CARDS_SUPERVISOR),
        (NodeId.CARDS_SUPERVISOR, NodeId.CPA),
    )

    stored = engine.store.list_cards("user-1")
    assert [c.last4 for c in stored] == ["4242"]
    # The raw number never reaches the reply or any stored record.
    assert "4242424242424242" not in done.reply


def test_card_listing_completes_without_interrupt(tmp_path):
    engine = make_engine(tmp_path)
    sid = engine.create_session("user-1")
    register_card(engine, sid)
    register_card(engine, sid, SECOND_CARD)

    result = engine.submit_turn(sid, "show my saved cards")
    assert result.status is TurnResultStatus.COMPLETED
    assert "4242" in result.reply and "4444" in result.reply
    assert result.trace == (
        (NodeId.CPA, NodeId.CARDS_SUPERVISOR),
        (NodeId.CARDS_SUPERVISOR, NodeId.ROUTER_CARD_RETRIEVAL),
        (NodeId.ROUTER_CARD_RETRIEVAL, NodeId.WF_CARD_RETRIEVAL),
        (NodeId.WF_CARD_RETRIEVAL, NodeId.SUMMARY_CARD_RETRIEVAL),
        (NodeId.SUMMARY_CARD_RETRIEVAL, NodeId.CARDS_SUPERVISOR),
        (NodeId.CARDS_SUPERVISOR, NodeId.CPA),
    )


def test_payment_with_otp_challenge(tmp_path):
    engine = make_engine(tmp_path)
    sid = engine.create_session("user-1")
    register_card(engine, sid)

    paused = engine.submit_turn(sid, "pay $25.00 for order #A1")
    assert paused.status is TurnResultStatus.INTERRUPTED
    assert {f.kind for f in paused.interrupt.fields_requested} == {FieldKind.OTP6}
    assert "25.00" in paused.interrupt.prompt_text
    assert paused.trace == (
        (NodeId.CPA, NodeId.PAYMENTS_SUPERVISOR),
        (NodeId.PAYMENTS_SUPERVISOR, NodeId.ROUTER_PAYMENT),
        (NodeId.ROUTER_PAYMENT, NodeId.WF_PAYMENT),
    )

    done = engine.resume_turn(sid, paused.interrupt.interrupt_id, "000000")
    assert done.status is TurnResultStatus.COMPLETED
    assert "txn_000001" in done.reply
    assert "25.00" in done.reply
    txn = engine.store.get_transaction("txn_000001")
    assert txn.amount_minor == 2500 and txn.currency == "USD"


def test_irrelevant_request_is_rejected_at_the_door(tmp_path):
    engine = make_engine(tmp_path)
    sid = engine.create_session("user-1")
    result = engine.submit_turn(sid, "what's the weather like today?")
    assert result.status is TurnResultStatus.REJECTED
    assert result.trace == ()
    assert result.reply


def test_supervisor_rejection_records_one_down_edge(tmp_path):
    engine = make_engine(tmp_path)
    sid = engine.create_session("user-1")
    # Card-flavored text with no registration/retrieval verb: the cards
    # supervisor takes it, then declines.
    result = engine.submit_turn(sid, "my card is beautiful")
    assert result.status is TurnResultStatus.REJECTED
    assert result.trace == (
        (NodeId.CPA, NodeId.CARDS_SUPERVISOR),
        (NodeId.CARDS_SUPERVISOR, NodeId.CPA),
    )


class RouterRejectsBackend(DecisionBackend):
    """Routes down to a router that then declines the task."""

    def decide(self, ctx):
        if ctx.role is NodeId.CPA:
            return Handoff(NodeId.CARDS_SUPERVISOR)
        if ctx.role is NodeId.CARDS_SUPERVISOR:
            return Handoff(NodeId.ROUTER_CARD_REGISTRATION)
        if ctx.role is NodeId.ROUTER_CARD_REGISTRATION:
            return Reject("not a registration task")
        return Respond("")


def test_router_rejection_diverts_to_the_summary_agent(tmp_path):
    engine = Engine(Store(tmp_path / "data"), RouterRejectsBackend(), clock=CLOCK)
    sid = engine.create_session("user-1")
    result = engine.submit_turn(sid, "hmm")
    assert result.status is TurnResultStatus.REJECTED
    # No router->workflow edge is ever recorded for a rejection.
    assert result.trace == (
        (NodeId.CPA, NodeId.CARDS_SUPERVISOR),
        (NodeId.CARDS_SUPERVISOR, NodeId.ROUTER_CARD_REGISTRATION),
        (NodeId.SUMMARY_CARD_REGISTRATION, NodeId.CARDS_SUPERVISOR),
        (NodeId.CARDS_SUPERVISOR, NodeId.CPA),
    )
    assert "nothing was done" in result.reply


def test_payment_without_cards_fails_before_any_challenge(tmp_path):
    engine = make_engine(tmp_path)
    sid = engine.create_session("user-1")
    result = engine.submit_turn(sid, "pay $10.00")
    assert result.status is TurnResultStatus.REJECTED
    assert result.interrupt is None
    assert "no_cards_on_file" in result.reply
    assert len(result.trace) == 6  # full descent and ascent, no pause


def test_declined_otp_rejects_and_saves_nothing(tmp_path):
    engine = make_engine(tmp_path)
    sid = engine.create_session("user-1")
    register_card(engine, sid)
    paused = engine.submit_turn(sid, "pay $9.99")
    # Digit sum 21 -> the challenge fails.
    done = engine.resume_turn(sid, paused.interrupt.interrupt_id, "123456")
    assert done.status is TurnResultStatus.REJECTED
    assert "3ds_challenge_failed" in done.reply
    assert engine.store.get_transaction("txn_000001") is None


# --- multi-interrupt turns --------------------------------------------------------


def test_payment_collects_amount_choice_and_otp_in_sequence(tmp_path):
    engine = make_engine(tmp_path)
    setup = engine.create_session("user-1")
    register_card(engine, setup)
    register_card(engine, setup, SECOND_CARD)

    # A later conversation for the same user: both cards are on file but
    # none is selected yet, so the workflow must ask for everything.
    sid = engine.create_session("user-1")
    step = engine.submit_turn(sid, "I want to make a payment")
    assert {f.kind for f in step.interrupt.fields_requested} == {FieldKind.AMOUNT}
    assert step.interrupt.interrupt_id == f"{sid}:0:0"

    step = engine.resume_turn(sid, step.interrupt.interrupt_id, "$30.00")
    assert {f.kind for f in step.interrupt.fields_requested} == {
        FieldKind.CARD_CHOICE_INDEX
    }
    assert step.interrupt.interrupt_id == f"{sid}:0:1"
    assert "4242" in step.interrupt.prompt_text
    assert "4444" in step.interrupt.prompt_text

    step = engine.resume_turn(sid, step.interrupt.interrupt_id, "the second one")
    assert {f.kind for f in step.interrupt.fields_requested} == {FieldKind.OTP6}
    assert step.interrupt.interrupt_id == f"{sid}:0:2"

    done = engine.resume_turn(sid, step.interrupt.interrupt_id, "000000")
    assert done.status is TurnResultStatus.COMPLETED
    assert "4444" in done.reply and "30.00" in done.reply
    txn = engine.store.get_transaction("txn_000001")
    assert txn.card_id == "card_000002"


def test_selected_card_is_remembered_across_turns(tmp_path):
    engine = make_engine(tmp_path)
    sid = engine.create_session("user-1")
    register_card(engine, sid)

    paused = engine.submit_turn(sid, "pay $5.00")
    engine.resume_turn(sid, paused.interrupt.interrupt_id, "000000")

    # Second payment: the card is already selected, only the OTP is asked.
    paused = engine.submit_turn(sid, "pay $7.50")
    assert {f.kind for f in paused.interrupt.fields_requested} == {FieldKind.OTP6}
    done = engine.resume_turn(sid, paused.interrupt.interrupt_id, "280000")
    assert done.status is TurnResultStatus.COMPLETED
    assert "7.50" in done.reply


# --- resume validation and error mapping ----------------------------------------


def test_invalid_card_on_resume_rejects_the_turn(tmp_path):
    engine = make_engine(tmp_path)  # max_input_retries=0
    sid = engine.create_session("user-1")
    paused = engine.submit_turn(sid, "register a card")
    bad = "4242 4242 4242 4241, 12/33, cvv 123"  # fails the checksum
    done = engine.resume_turn(sid, paused.interrupt.interrupt_id, bad)
    assert done.status is TurnResultStatus.REJECTED
    assert "luhn_check_failed" in done.reply
    assert engine.store.list_cards("user-1") == []
    assert len(done.trace) == 6
    # The spent interrupt cannot be replayed.
    with pytest.raises(StaleInterrupt):
        engine.resume_turn(sid, paused.interrupt.interrupt_id, CARD_TEXT)


def test_input_retry_budget_keeps_the_interrupt_alive(tmp_path):
    store = Store(tmp_path / "data")
    engine = Engine(store, ScriptedBackend(), clock=CLOCK, max_input_retries=1)
    sid = engine.create_session("user-1")
    paused = engine.submit_turn(sid, "register a card")
    iid = paused.interrupt.interrupt_id

    again = engine.resume_turn(sid, iid, "not a card at all")
    assert again.status is TurnResultStatus.INTERRUPTED
    assert again.interrupt.interrupt_id == iid  # same pending interrupt

    done = engine.resume_turn(sid, iid, CARD_TEXT)
    assert done.status is TurnResultStatus.COMPLETED
    assert [c.last4 for c in store.list_cards("user-1")] == ["4242"]


def test_resume_with_wrong_or_spent_ids(tmp_path):
    engine = make_engine(tmp_path)
    sid = engine.create_session("user-1")

    with pytest.raises(UnknownInterrupt):
        engine.resume_turn(sid, f"{sid}:0:0", "hello")  # nothing pending

    paused = engine.submit_turn(sid, "register a card")
    with pytest.raises(UnknownInterrupt):
        engine.resume_turn(sid, f"{sid}:9:9", CARD_TEXT)  # wrong id

    done = engine.resume_turn(sid, paused.interrupt.interrupt_id, CARD_TEXT)
    assert done.status is TurnResultStatus.COMPLETED
    with pytest.raises(StaleInterrupt):
        engine.resume_turn(sid, paused.interrupt.interrupt_id, CARD_TEXT)


def test_unknown_session_raises(tmp_path):
    engine = make_engine(tmp_path)
    with pytest.raises(SessionNotFound):
        engine.submit_turn("sess_999999", "hello")
    with pytest.raises(SessionNotFound):
        engine.resume_turn("sess_999999", "sess_999999:0:0", "hello")


def test_unknown_turn_trace_raises(tmp_path):
    engine = make_engine(tmp_path)
    sid = engine.create_session("user-1")
    engine.submit_turn(sid, "show my cards")
    assert engine.get_trace(sid, 0)
    with pytest.raises(UnknownTurn):
        engine.get_trace(sid, 7)


# --- concurrency ----------------------------------------------------------------


class GatedBackend(DecisionBackend):
    """Blocks the first decision until released, to hold a turn in flight."""

    def __init__(self):
        self.entered = threading.Event()
        self.release = threading.Event()
        self._inner = ScriptedBackend()
        self._first = True

    def decide(self, ctx):
        if self._first:
            self._first = False
            self.entered.set()
            assert self.release.wait(timeout=5.0)
        return self._inner.decide(ctx)


def test_second_turn_while_busy_is_refused(tmp_path):
    backend = GatedBackend()
    engine = Engine(Store(tmp_path / "data"), backend, clock=CLOCK)
    sid = engine.create_session("user-1")

    results = {}
    worker = threading.Thread(
        target=lambda: results.setdefault(
            "turn", engine.submit_turn(sid, "show my cards")
        )
    )
    worker.start()
    assert backend.entered.wait(timeout=5.0)
    try:
        with pytest.raises(SessionBusy):
            engine.submit_turn(sid, "pay $1.00")
        with pytest.raises(SessionBusy):
            engine.resume_turn(sid, f"{sid}:0:0", "000000")
    finally:
        backend.release.set()
        worker.join(timeout=5.0)
    # The held turn finished normally once released.
    assert results["turn"].status is TurnResultStatus.REJECTED  # no cards yet
    # And the session is usable again.
    assert engine.submit_turn(sid, "list my cards").status


# --- recovery across restarts ------------------------------------------------------


def test_resume_after_process_restart(tmp_path):
    data_dir = tmp_path / "data"
    first = Engine(Store(data_dir), ScriptedBackend(), clock=CLOCK)
    sid = first.create_session("user-1")
    paused = first.submit_turn(sid, "register a card")
    iid = paused.interrupt.interrupt_id

    # A brand-new process: nothing in memory, same data directory.
    second = Engine(Store(data_dir), ScriptedBackend(), clock=CLOCK)
    done = second.resume_turn(sid, iid, CARD_TEXT)
    assert done.status is TurnResultStatus.COMPLETED
    assert "card_000001" in done.reply
    assert [c.last4 for c in second.store.list_cards("user-1")] == ["4242"]
    # The rebuilt session has the full turn trace.
    assert len(second.get_trace(sid, paused.turn_id)) == 6
    # The revived session keeps working for ordinary turns.
    follow_up = second.submit_turn(sid, "show my cards")
    assert follow_up.status is TurnResultStatus.COMPLETED


def test_restart_resume_equals_same_process_resume(tmp_path):
    def run(data_dir, restart: bool) -> tuple[str, str]:
        engine = Engine(Store(data_dir), ScriptedBackend(), clock=CLOCK)
        sid = engine.create_session("user-1")
        paused = engine.submit_turn(sid, "register a card")
        if restart:
            engine = Engine(Store(data_dir), ScriptedBackend(), clock=CLOCK)
        done = engine.resume_turn(sid, paused.interrupt.interrupt_id, CARD_TEXT)
        return done.reply, engine.store.snapshot_digest()

    reply_a, digest_a = run(tmp_path / "a", restart=False)
    reply_b, digest_b = run(tmp_path / "b", restart=True)
    assert reply_a == reply_b
    assert digest_a == digest_b


def test_restarted_engine_never_reuses_session_ids(tmp_path):
    data_dir = tmp_path / "data"
    first = Engine(Store(data_dir), ScriptedBackend(), clock=CLOCK)
    sid = first.create_session("user-1")
    first.submit_turn(sid, "register a card")  # leaves a checkpoint

    second = Engine(Store(data_dir), ScriptedBackend(), clock=CLOCK)
    fresh = second.create_session("user-2")
    assert fresh != sid


# --- the closed edge set, under fire ---------------------------------------------


def test_apply_handoff_refuses_non_edges():
    from hmasp.errors import IllegalEdge

    assert (
        apply_handoff(NodeId.CPA, Handoff(NodeId.CARDS_SUPERVISOR))
        is NodeId.CARDS_SUPERVISOR
    )
    with pytest.raises(IllegalEdge):
        apply_handoff(NodeId.CPA, Handoff(NodeId.WF_PAYMENT))
    with pytest.raises(IllegalEdge):
        apply_handoff(NodeId.ROUTER_PAYMENT, Handoff(NodeId.SUMMARY_PAYMENT))


class AdversarialBackend(DecisionBackend):
    """Proposes arbitrary decisions, legal or not, ignoring every rule."""

    def __init__(self, seed: int):
        self.rng = random.Random(seed)

    def decide(self, ctx):
        roll = self.rng.random()
        if roll < 0.6:
            return Handoff(self.rng.choice(list(NodeId)))
        if roll < 0.8:
            return Respond("txn_424242 completed for $999.99 on card 1234")
        return Reject("nope")


@pytest.mark.parametrize("seed", range(12))
def test_hostile_decisions_never_escape_the_hierarchy(tmp_path, seed):
    engine = Engine(Store(tmp_path / f"d{seed}"), AdversarialBackend(seed), clock=CLOCK)
    sid = engine.create_session("user-1")
    texts = ["register a card", "pay $5.00", "show my cards", "blargh"]
    rng = random.Random(seed * 31 + 7)
    for turn in range(8):
        text = rng.choice(texts)
        try:
            result = engine.submit_turn(sid, text)
        except SessionBusy:  # pragma: no cover - single-threaded here
            pytest.fail("lock leaked")
        assert result.status in set(TurnResultStatus)
        for edge in result.trace:
            assert edge in EDGE_SET
        if result.status is TurnResultStatus.INTERRUPTED:
            follow = engine.resume_turn(
                sid, result.interrupt.interrupt_id, CARD_TEXT + " $5.00 000000 1"
            )
            for edge in follow.trace:
                assert edge in EDGE_SET


class FlakyBackend(DecisionBackend):
    def __init__(self, error):
        self.error = error

    def decide(self, ctx):
        raise self.error


def test_backend_timeouts_reject_the_turn_gracefully(tmp_path):
    from hmasp.errors import BackendTimeout

    engine = Engine(
        Store(tmp_path / "data"), FlakyBackend(BackendTimeout("slow")), clock=CLOCK
    )
    sid = engine.create_session("user-1")
    result = engine.submit_turn(sid, "pay $5.00")
    assert result.status is TurnResultStatus.REJECTED
    assert "cpa" in result.reply


def test_transport_errors_propagate(tmp_path):
    engine = Engine(
        Store(tmp_path / "data"),
        FlakyBackend(TransportError("connection refused")),
        clock=CLOCK,
    )
    sid = engine.create_session("user-1")
    with pytest.raises(TransportError):
        engine.submit_turn(sid, "pay $5.00")


# --- state hygiene ------------------------------------------------------------------


def test_raw_resume_text_never_enters_the_logs(tmp_path):
    engine = make_engine(tmp_path)
    sid = engine.create_session("user-1")
    paused = engine.submit_turn(sid, "register a card")
    engine.resume_turn(sid, paused.interrupt.interrupt_id, CARD_TEXT)

    bundle = engine.session_bundle(sid)
    all_text = " ".join(
        m.text
        for part in (bundle.pay_agent, bundle.cards, bundle.payments)
        for m in part.messages
    )
    assert "4242424242424242" not in all_text
    assert "4242 4242 4242 4242" not in all_text
    assert "Dana Smith" not in all_text  # the raw answer text itself is never logged


def test_trace_json_export_shape(tmp_path):
    engine = make_engine(tmp_path)
    sid = engine.create_session("user-1")
    result = engine.submit_turn(sid, "show my cards")
    rows = result.trace_json()
    assert all(set(r) == {"from", "to", "turn_id"} for r in rows)
    assert rows[0] == {"from": "cpa", "to": "cards_supervisor", "turn_id": 0}

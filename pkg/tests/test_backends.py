"""Decision-backend tests: scripted oracle, parsing, remote client, chaos."""

from __future__ import annotations

import json

import pytest
import requests

from hmasp.backends import (
    AgentContext,
    AllowedActions,
    BackendConfig,
    ChaosBackend,
    Handoff,
    Reject,
    RemoteBackend,
    Respond,
    ScriptedBackend,
    build_request_body,
    load_role_prompt,
    make_backend,
    parse_decision,
)
from hmasp.errors import BackendTimeout, MalformedOutput, TransportError
from hmasp.hierarchy import NodeId
from hmasp.state import (
    Message,
    MessageKind,
    OriginRole,
    append_message,
    new_session_state,
    project_for_role,
)


def ctx_for(role: NodeId, text: str, allowed: AllowedActions) -> AgentContext:
    b = new_session_state("u1", "s1")
    if role is NodeId.CPA:
        append_message(b, role, Message(OriginRole.USER, MessageKind.UPSTREAM, text, 0))
    else:
        append_message(b, role, Message(OriginRole.CPA, MessageKind.UPSTREAM, text, 0))
    return AgentContext(
        role=role,
        role_prompt=load_role_prompt(role),
        view=project_for_role(b, role),
        allowed=allowed,
    )


CPA_ALLOWED = AllowedActions(
    handoff_targets=frozenset(
        {NodeId.CARDS_SUPERVISOR, NodeId.PAYMENTS_SUPERVISOR}
    ),
    may_reject=True,
)
CARDS_SUP_ALLOWED = AllowedActions(
    handoff_targets=frozenset(
        {NodeId.ROUTER_CARD_REGISTRATION, NodeId.ROUTER_CARD_RETRIEVAL}
    ),
    may_reject=True,
)


# --- scripted oracle ----------------------------------------------------------


def test_scripted_routes_canonical_requests():
    s = ScriptedBackend()
    assert s.decide(
        ctx_for(NodeId.CPA, "Take me to payment checkout", CPA_ALLOWED)
    ) == Handoff(NodeId.PAYMENTS_SUPERVISOR)
    assert s.decide(ctx_for(NodeId.CPA, "List my cards", CPA_ALLOWED)) == Handoff(
        NodeId.CARDS_SUPERVISOR
    )
    assert s.decide(
        ctx_for(NodeId.CPA, "Register a new card", CPA_ALLOWED)
    ) == Handoff(NodeId.CARDS_SUPERVISOR)
    assert s.decide(
        ctx_for(NodeId.CARDS_SUPERVISOR, "register a new card", CARDS_SUP_ALLOWED)
    ) == Handoff(NodeId.ROUTER_CARD_REGISTRATION)


def test_scripted_rejects_out_of_scope():
    s = ScriptedBackend()
    assert isinstance(
        s.decide(ctx_for(NodeId.CPA, "Can you tell me a joke?", CPA_ALLOWED)), Reject
    )
    assert isinstance(
        s.decide(ctx_for(NodeId.CPA, "what is the weather", CPA_ALLOWED)), Reject
    )


def test_scripted_is_deterministic():
    s = ScriptedBackend()
    ctx = ctx_for(NodeId.CPA, "pay my electricity bill", CPA_ALLOWED)
    first = s.decide(ctx)
    assert all(s.decide(ctx) == first for _ in range(20))


def test_scripted_narrative_roles_respond():
    allowed = AllowedActions(may_respond=True, may_reject=False)
    ctx = ctx_for(NodeId.SUMMARY_PAYMENT, "summarize", allowed)
    assert isinstance(ScriptedBackend().decide(ctx), Respond)


def test_scripted_decisions_stay_in_allowed_set():
    s = ScriptedBackend()
    texts = [
        "register a card",
        "pay the bill",
        "list everything",
        "weather report",
        "buy a card game",  # mixed tokens
    ]
    for role, allowed in [
        (NodeId.CPA, CPA_ALLOWED),
        (NodeId.CARDS_SUPERVISOR, CARDS_SUP_ALLOWED),
    ]:
        for t in texts:
            assert allowed.permits(s.decide(ctx_for(role, t, allowed)))


# --- parse_decision -------------------------------------------------------------


def test_parse_tool_call_forms():
    allowed = CPA_ALLOWED
    assert parse_decision(
        {"name": "handoff", "arguments": {"target": "cards_supervisor"}}, allowed
    ) == Handoff(NodeId.CARDS_SUPERVISOR)
    # Arguments may arrive JSON-encoded, as chat-completions APIs send them.
    assert parse_decision(
        {"name": "handoff", "arguments": '{"target": "payments_supervisor"}'}, allowed
    ) == Handoff(NodeId.PAYMENTS_SUPERVISOR)
    assert parse_decision(
        {"name": "reject", "arguments": {"text": "nope"}}, allowed
    ) == Reject("nope")


def test_parse_text_grammar():
    allowed = CPA_ALLOWED
    assert parse_decision("ACTION: HANDOFF cards_supervisor", allowed) == Handoff(
        NodeId.CARDS_SUPERVISOR
    )
    assert parse_decision("ACTION: REJECT\nNot payment related.", allowed) == Reject(
        "Not payment related."
    )
    assert parse_decision("ACTION: RESPOND\nhello there", allowed) == Respond(
        "hello there"
    )


def test_parse_failures():
    allowed = CPA_ALLOWED
    with pytest.raises(MalformedOutput):
        parse_decision("maybe the cards one?", allowed)
    with pytest.raises(MalformedOutput):
        parse_decision("ACTION: HANDOFF not_a_node", allowed)
    with pytest.raises(MalformedOutput):
        parse_decision({"name": "fly", "arguments": {}}, allowed)
    with pytest.raises(MalformedOutput):
        parse_decision({"name": "handoff", "arguments": "{bad json"}, allowed)


# --- remote client ----------------------------------------------------------------


class FakeResponse:
    def __init__(self, payload, status_code=200):
        self._payload = payload
        self.status_code = status_code

    def json(self):
        if isinstance(self._payload, Exception):
            raise self._payload
        return self._payload


class FakeSession:
    """Stands in for requests.Session: replays queued responses/errors."""

    def __init__(self, outcomes):
        self.outcomes = list(outcomes)
        self.calls = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.calls.append({"url": url, "json": json, "headers": headers})
        outcome = self.outcomes.pop(0)
        if isinstance(outcome, Exception):
            raise outcome
        return outcome


def chat_message(message: dict) -> FakeResponse:
    return FakeResponse({"choices": [{"message": message}]})


REMOTE_CFG = BackendConfig(
    kind="remote",
    endpoint_url="http://localhost:9999/v1",
    model_name="test-model",
    api_key="sk-test",
    max_retries=1,
)


def remote_with(outcomes) -> tuple[RemoteBackend, FakeSession]:
    session = FakeSession(outcomes)
    return RemoteBackend(REMOTE_CFG, session=session), session


def test_remote_prefers_tool_calls():
    backend, session = remote_with(
        [
            chat_message(
                {
                    "tool_calls": [
                        {
                            "function": {
                                "name": "handoff",
                                "arguments": '{"target": "cards_supervisor"}',
                            }
                        }
                    ],
                    "content": "ACTION: REJECT\nignored",
                }
            )
        ]
    )
    ctx = ctx_for(NodeId.CPA, "register my card", CPA_ALLOWED)
    assert backend.decide(ctx) == Handoff(NodeId.CARDS_SUPERVISOR)
    call = session.calls[0]
    assert call["url"] == "http://localhost:9999/v1/chat/completions"
    assert call["headers"]["Authorization"] == "Bearer sk-test"
    assert call["json"]["temperature"] == 0


def test_remote_falls_back_to_text_grammar():
    backend, _ = remote_with(
        [chat_message({"content": "ACTION: HANDOFF payments_supervisor"})]
    )
    ctx = ctx_for(NodeId.CPA, "pay now", CPA_ALLOWED)
    assert backend.decide(ctx) == Handoff(NodeId.PAYMENTS_SUPERVISOR)


def test_remote_retries_then_raises_malformed():
    # Out-of-set target twice with max_retries=1 -> MalformedOutput.
    out_of_set = chat_message({"content": "ACTION: HANDOFF wf_payment"})
    backend, session = remote_with(
        [out_of_set, chat_message({"content": "ACTION: HANDOFF wf_payment"})]
    )
    ctx = ctx_for(NodeId.CPA, "pay now", CPA_ALLOWED)
    with pytest.raises(MalformedOutput):
        backend.decide(ctx)
    assert len(session.calls) == 2


def test_remote_recovers_on_retry():
    backend, _ = remote_with(
        [
            chat_message({"content": "gibberish"}),
            chat_message({"content": "ACTION: HANDOFF cards_supervisor"}),
        ]
    )
    ctx = ctx_for(NodeId.CPA, "my cards", CPA_ALLOWED)
    assert backend.decide(ctx) == Handoff(NodeId.CARDS_SUPERVISOR)


def test_remote_timeout_and_transport_errors():
    ctx = ctx_for(NodeId.CPA, "pay", CPA_ALLOWED)
    backend, _ = remote_with([requests.Timeout(), requests.Timeout()])
    with pytest.raises(BackendTimeout):
        backend.decide(ctx)
    backend, _ = remote_with([requests.ConnectionError("refused")])
    with pytest.raises(TransportError):
        backend.decide(ctx)
    backend, _ = remote_with([FakeResponse({}, status_code=500)])
    with pytest.raises(TransportError):
        backend.decide(ctx)


def test_request_body_encoding_is_byte_stable():
    ctx = ctx_for(NodeId.CPA, "Register a new card", CPA_ALLOWED)
    body = build_request_body(ctx, REMOTE_CFG)
    encoded = json.dumps(body, sort_keys=True)
    again = json.dumps(build_request_body(ctx, REMOTE_CFG), sort_keys=True)
    assert encoded == again
    assert body["model"] == "test-model"
    assert body["messages"][0]["role"] == "system"
    assert "Register a new card" in body["messages"][1]["content"]
    assert [t["function"]["name"] for t in body["tools"]] == ["handoff", "reject"]


def test_remote_config_requires_endpoint_and_model():
    with pytest.raises(ValueError):
        BackendConfig(kind="remote", endpoint_url=None, model_name="m")


def test_config_from_env(monkeypatch):
    monkeypatch.setenv("HMASP_ENDPOINT", "http://example.test/v1")
    monkeypatch.setenv("HMASP_MODEL", "m-1")
    monkeypatch.setenv("HMASP_API_KEY", "sk-abc")
    cfg = BackendConfig.from_env()
    assert cfg.endpoint_url == "http://example.test/v1"
    assert cfg.model_name == "m-1" and cfg.api_key == "sk-abc"


# --- chaos ------------------------------------------------------------------------


def test_chaos_rate_zero_matches_scripted():
    ctx = ctx_for(NodeId.CPA, "register a card", CPA_ALLOWED)
    scripted = ScriptedBackend().decide(ctx)
    chaos = ChaosBackend(seed=5, error_rate=0.0)
    assert all(chaos.decide(ctx) == scripted for _ in range(20))


def test_chaos_rate_one_always_swaps_yet_stays_legal():
    ctx = ctx_for(NodeId.CPA, "register a card", CPA_ALLOWED)
    correct = ScriptedBackend().decide(ctx)
    chaos = ChaosBackend(seed=5, error_rate=1.0)
    for _ in range(20):
        d = chaos.decide(ctx)
        assert d != correct
        assert CPA_ALLOWED.permits(d)


def test_chaos_is_seed_deterministic():
    ctx = ctx_for(NodeId.CPA, "pay the bill", CPA_ALLOWED)
    run1 = [ChaosBackend(seed=7, error_rate=0.5).decide(ctx) for _ in range(1)]
    run2 = [ChaosBackend(seed=7, error_rate=0.5).decide(ctx) for _ in range(1)]
    assert run1 == run2
    seq1 = ChaosBackend(seed=7, error_rate=0.5)
    seq2 = ChaosBackend(seed=7, error_rate=0.5)
    assert [seq1.decide(ctx) for _ in range(30)] == [
        seq2.decide(ctx) for _ in range(30)
    ]


def test_make_backend_dispatch():
    assert isinstance(make_backend(BackendConfig(kind="scripted")), ScriptedBackend)
    assert isinstance(
        make_backend(BackendConfig(kind="chaos", chaos_seed=1, chaos_error_rate=0.5)),
        ChaosBackend,
    )
    with pytest.raises(ValueError):
        make_backend(BackendConfig(kind="nope"))


def test_role_prompts_exist_for_decision_roles():
    for role in (
        NodeId.CPA,
        NodeId.CARDS_SUPERVISOR,
        NodeId.PAYMENTS_SUPERVISOR,
        NodeId.ROUTER_PAYMENT,
        NodeId.SUMMARY_CARD_REGISTRATION,
    ):
        text = load_role_prompt(role)
        assert "ACTION:" in text
    assert load_role_prompt(NodeId.WF_PAYMENT) == ""

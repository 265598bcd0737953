"""Pluggable decision layer for the generative agents.

Every agent that makes a choice (route, respond, reject) does so through a
backend implementing :class:`DecisionBackend`. Three are provided:

  * ``scripted`` — a deterministic keyword-rule table. It is the test
    oracle: identical context always yields the identical decision, with
    no network in the loop.
  * ``remote`` — a chat-completions client (``POST {endpoint}/chat/completions``)
    that prefers structured tool calls and falls back to a one-line action
    grammar. Endpoint, model, and key come from ``HMASP_ENDPOINT``,
    ``HMASP_MODEL``, and ``HMASP_API_KEY``.
  * ``chaos`` — wraps the scripted backend and, at a seeded rate, swaps a
    correct decision for a different-but-legal one. It exists to exercise
    the evaluation harness's imperfect-routing paths.

Whatever the backend says, the caller re-checks the decision against the
allowed-action set: an out-of-set answer is retried and then surfaces as
``MalformedOutput`` — it is never executed.
"""

from __future__ import annotations

import json
import os
import random
import re
from dataclasses import dataclass, field
from importlib import resources

import requests

from hmasp.errors import BackendTimeout, MalformedOutput, TransportError
from hmasp.hierarchy import NodeId
from hmasp.state import RoleView

# --- decisions -------------------------------------------------------------


@dataclass(frozen=True)
class Handoff:
    target: NodeId


@dataclass(frozen=True)
class Respond:
    text: str


@dataclass(frozen=True)
class Reject:
    text: str


Decision = Handoff | Respond | Reject


@dataclass(frozen=True)
class AllowedActions:
    """What a role may do at this step. Backends receive it both as a
    constraint and as prompt content; the orchestrator enforces it."""

    handoff_targets: frozenset[NodeId] = frozenset()
    may_respond: bool = False
    may_reject: bool = True

    def permits(self, decision: Decision) -> bool:
        if isinstance(decision, Handoff):
            return decision.target in self.handoff_targets
        if isinstance(decision, Respond):
            return self.may_respond
        return self.may_reject


@dataclass(frozen=True)
class AgentContext:
    role: NodeId
    role_prompt: str
    view: RoleView
    allowed: AllowedActions

    def __post_init__(self) -> None:
        if (
            not self.allowed.handoff_targets
            and not self.allowed.may_respond
            and not self.allowed.may_reject
        ):
            raise ValueError("allowed_actions must permit at least one variant")


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "scripted"
    endpoint_url: str | None = None
    model_name: str | None = None
    api_key: str | None = None
    temperature: float = 0.0
    request_timeout_s: float = 30.0
    max_retries: int = 1
    chaos_seed: int = 0
    chaos_error_rate: float = 0.0

    def __post_init__(self) -> None:
        if self.kind == "remote" and not (self.endpoint_url and self.model_name):
            raise ValueError("remote backend requires endpoint_url and model_name")

    @staticmethod
    def from_env(kind: str = "remote", **overrides) -> "BackendConfig":
        merged = {
            "kind": kind,
            "endpoint_url": os.environ.get("HMASP_ENDPOINT"),
            "model_name": os.environ.get("HMASP_MODEL"),
            "api_key": os.environ.get("HMASP_API_KEY"),
        }
        merged.update({k: v for k, v in overrides.items() if v is not None})
        return BackendConfig(**merged)


# --- prompt assets -----------------------------------------------------------

_PROMPTED_ROLES = {
    NodeId.CPA,
    NodeId.CARDS_SUPERVISOR,
    NodeId.PAYMENTS_SUPERVISOR,
    NodeId.ROUTER_CARD_REGISTRATION,
    NodeId.ROUTER_CARD_RETRIEVAL,
    NodeId.ROUTER_PAYMENT,
    NodeId.SUMMARY_CARD_REGISTRATION,
    NodeId.SUMMARY_CARD_RETRIEVAL,
    NodeId.SUMMARY_PAYMENT,
}


def load_role_prompt(role: NodeId) -> str:
    """Role prompt from the packaged plain-text assets (workflow roles are
    deterministic functions and have none)."""
    if role not in _PROMPTED_ROLES:
        return ""
    return (
        resources.files("hmasp.prompts").joinpath(f"{role.value}.txt").read_text("utf-8")
    )


def render_context(view: RoleView) -> str:
    """Deterministic plain-text rendering of a role's view for a backend
    request: shared variables first, then the role's own message log."""
    lines = [
        f"session_id={view.shared.session_id}",
        f"user_id={view.shared.user_id}",
        f"card_id={view.shared.card_id or ''}",
        "--- messages ---",
    ]
    for m in view.messages:
        lines.append(f"[{m.kind.value}] {m.text}")
    return "\n".join(lines)


# --- decision parsing ---------------------------------------------------------

_ACTION_RE = re.compile(r"^ACTION:\s*(HANDOFF\s+(\S+)|RESPOND|REJECT)\s*$")


def parse_decision(raw: str | dict, allowed: AllowedActions) -> Decision:
    """Turn backend output into a Decision.

    A dict is treated as a tool-call payload {name, arguments}; a string
    must carry the one-line grammar ``ACTION: HANDOFF <target> | RESPOND |
    REJECT`` on its first line, with any remaining lines as the text body.
    """
    if isinstance(raw, dict):
        name = raw.get("name")
        args = raw.get("arguments") or {}
        if isinstance(args, str):
            try:
                args = json.loads(args)
            except json.JSONDecodeError as e:
                raise MalformedOutput(f"tool arguments are not JSON: {e}") from e
        if name == "handoff":
            target = args.get("target", "")
            try:
                return Handoff(NodeId(target))
            except ValueError as e:
                raise MalformedOutput(f"unknown handoff target {target!r}") from e
        if name == "respond":
            return Respond(str(args.get("text", "")))
        if name == "reject":
            return Reject(str(args.get("text", "")))
        raise MalformedOutput(f"unknown tool {name!r}")

    first, _, rest = raw.partition("\n")
    m = _ACTION_RE.match(first.strip())
    if not m:
        raise MalformedOutput(f"no action tag on first line: {first[:80]!r}")
    body = rest.strip()
    if m.group(1).startswith("HANDOFF"):
        try:
            return Handoff(NodeId(m.group(2)))
        except ValueError as e:
            raise MalformedOutput(f"unknown handoff target {m.group(2)!r}") from e
    if m.group(1) == "RESPOND":
        return Respond(body)
    return Reject(body)


# --- backends ---------------------------------------------------------------


class DecisionBackend:
    """Interface: produce a Decision for an agent context."""

    def decide(self, ctx: AgentContext) -> Decision:  # pragma: no cover - abstract
        raise NotImplementedError


def _normalize(text: str) -> list[str]:
    return re.findall(r"[a-z0-9]+", text.lower())


def _latest_text(view: RoleView) -> str:
    return view.messages[-1].text if view.messages else ""


# Ordered keyword rules per role: first rule whose token set intersects the
# normalized latest message wins; no match falls through to Reject.
PAYMENT_TOKENS = ("pay", "payment", "payments", "checkout", "bill", "purchase", "buy")
REGISTER_TOKENS = ("register", "add", "save", "store", "enroll")
RETRIEVE_TOKENS = (
    "list",
    "show",
    "view",
    "see",
    "check",
    "what",
    "which",
    "select",
    "choose",
    "pick",
    "use",
    "have",
    "saved",
    "retrieve",
)
CARD_TOKENS = ("card", "cards")

_REJECTION_TEXT = {
    NodeId.CPA: "I can only help with card registration, card retrieval, and payments.",
    NodeId.CARDS_SUPERVISOR: "This request is not a card task.",
    NodeId.PAYMENTS_SUPERVISOR: "This request is not a payment task.",
    NodeId.ROUTER_CARD_REGISTRATION: "This request is not about registering a card.",
    NodeId.ROUTER_CARD_RETRIEVAL: "This request is not about retrieving cards.",
    NodeId.ROUTER_PAYMENT: "This request is not about making a payment.",
}

ScriptedRule = tuple[tuple[str, ...], Decision]


def _scripted_rules(role: NodeId) -> list[ScriptedRule]:
    if role is NodeId.CPA:
        return [
            (PAYMENT_TOKENS, Handoff(NodeId.PAYMENTS_SUPERVISOR)),
            (CARD_TOKENS, Handoff(NodeId.CARDS_SUPERVISOR)),
        ]
    if role is NodeId.CARDS_SUPERVISOR:
        return [
            (REGISTER_TOKENS, Handoff(NodeId.ROUTER_CARD_REGISTRATION)),
            (RETRIEVE_TOKENS, Handoff(NodeId.ROUTER_CARD_RETRIEVAL)),
        ]
    if role is NodeId.PAYMENTS_SUPERVISOR:
        return [(PAYMENT_TOKENS, Handoff(NodeId.ROUTER_PAYMENT))]
    if role is NodeId.ROUTER_CARD_REGISTRATION:
        return [(REGISTER_TOKENS, Handoff(NodeId.WF_CARD_REGISTRATION))]
    if role is NodeId.ROUTER_CARD_RETRIEVAL:
        return [(RETRIEVE_TOKENS, Handoff(NodeId.WF_CARD_RETRIEVAL))]
    if role is NodeId.ROUTER_PAYMENT:
        return [(PAYMENT_TOKENS, Handoff(NodeId.WF_PAYMENT))]
    return []


class ScriptedBackend(DecisionBackend):
    """Deterministic keyword router — the evaluation oracle.

    Routing roles match the latest message against their ordered rule
    table. Narrative roles (summaries, the entry agent's reply step) get
    an empty Respond: the caller's template fallback then produces the
    deterministic prose, so no generated text ever carries the payload
    values.
    """

    def decide(self, ctx: AgentContext) -> Decision:
        if ctx.allowed.may_respond and not ctx.allowed.handoff_targets:
            return Respond("")
        tokens = set(_normalize(_latest_text(ctx.view)))
        for rule_tokens, decision in _scripted_rules(ctx.role):
            if tokens.intersection(rule_tokens):
                if ctx.allowed.permits(decision):
                    return decision
        return Reject(_REJECTION_TEXT.get(ctx.role, "Request rejected."))


class ChaosBackend(DecisionBackend):
    """Scripted backend with seeded wrong-but-legal swaps.

    With probability ``error_rate`` a decision is replaced by a uniformly
    chosen different legal one (another allowed handoff target, or a
    rejection). The swap is still within the allowed set — this models an
    agent that is confidently wrong, not one that breaks protocol.
    """

    def __init__(self, seed: int, error_rate: float):
        if not 0.0 <= error_rate <= 1.0:
            raise ValueError("error_rate must be within [0, 1]")
        self._inner = ScriptedBackend()
        self._rng = random.Random(seed)
        self.error_rate = error_rate

    def decide(self, ctx: AgentContext) -> Decision:
        decision = self._inner.decide(ctx)
        if not isinstance(decision, Handoff):
            return decision
        if self._rng.random() >= self.error_rate:
            return decision
        alternatives: list[Decision] = [
            Handoff(t)
            for t in sorted(ctx.allowed.handoff_targets, key=lambda n: n.value)
            if t != decision.target
        ]
        if ctx.allowed.may_reject:
            alternatives.append(Reject("Request rejected."))
        if not alternatives:
            return decision
        return self._rng.choice(alternatives)


# Tool schema offered to remote endpoints; mirrors the Decision variants.
def _tools_for(allowed: AllowedActions) -> list[dict]:
    tools = []
    if allowed.handoff_targets:
        tools.append(
            {
                "type": "function",
                "function": {
                    "name": "handoff",
                    "description": "Hand the conversation to another agent.",
                    "parameters": {
                        "type": "object",
                        "properties": {
                            "target": {
                                "type": "string",
                                "enum": sorted(t.value for t in allowed.handoff_targets),
                            }
                        },
                        "required": ["target"],
                    },
                },
            }
        )
    if allowed.may_respond:
        tools.append(
            {
                "type": "function",
                "function": {
                    "name": "respond",
                    "description": "Reply to the conversation with text.",
                    "parameters": {
                        "type": "object",
                        "properties": {"text": {"type": "string"}},
                        "required": ["text"],
                    },
                },
            }
        )
    if allowed.may_reject:
        tools.append(
            {
                "type": "function",
                "function": {
                    "name": "reject",
                    "description": "Reject the request as out of scope.",
                    "parameters": {
                        "type": "object",
                        "properties": {"text": {"type": "string"}},
                        "required": ["text"],
                    },
                },
            }
        )
    return tools


def build_request_body(ctx: AgentContext, cfg: BackendConfig) -> dict:
    """The chat-completions request for a context — a pure function so the
    encoding can be snapshot-tested for byte stability."""
    return {
        "model": cfg.model_name,
        "messages": [
            {"role": "system", "content": ctx.role_prompt},
            {"role": "user", "content": render_context(ctx.view)},
        ],
        "tools": _tools_for(ctx.allowed),
        "temperature": cfg.temperature,
    }


class RemoteBackend(DecisionBackend):
    """Chat-completions client with bounded retries.

    Tool calls are parsed preferentially; otherwise the message content
    must carry the one-line action grammar. Out-of-set or unparseable
    answers are retried up to ``max_retries`` times, then raised as
    MalformedOutput. Timeouts raise BackendTimeout; connection and HTTP
    failures raise TransportError.
    """

    def __init__(self, cfg: BackendConfig, session: requests.Session | None = None):
        if not (cfg.endpoint_url and cfg.model_name):
            raise ValueError("remote backend requires endpoint_url and model_name")
        self.cfg = cfg
        self._session = session or requests.Session()

    def decide(self, ctx: AgentContext) -> Decision:
        last_error: Exception | None = None
        for _ in range(self.cfg.max_retries + 1):
            try:
                decision = self._call_once(ctx)
            except (MalformedOutput, BackendTimeout) as e:
                last_error = e
                continue
            if ctx.allowed.permits(decision):
                return decision
            last_error = MalformedOutput(f"decision outside allowed set: {decision}")
        if isinstance(last_error, BackendTimeout):
            raise last_error
        raise MalformedOutput(str(last_error))

    def _call_once(self, ctx: AgentContext) -> Decision:
        url = self.cfg.endpoint_url.rstrip("/") + "/chat/completions"
        headers = {"Content-Type": "application/json"}
        if self.cfg.api_key:
            headers["Authorization"] = f"Bearer {self.cfg.api_key}"
        try:
            resp = self._session.post(
                url,
                json=build_request_body(ctx, self.cfg),
                headers=headers,
                timeout=self.cfg.request_timeout_s,
            )
        except requests.Timeout as e:
            raise BackendTimeout(f"no reply within {self.cfg.request_timeout_s}s") from e
        except requests.RequestException as e:
            raise TransportError(f"cannot reach {url}: {e}") from e
        if resp.status_code != 200:
            raise TransportError(f"{url} answered HTTP {resp.status_code}")
        try:
            message = resp.json()["choices"][0]["message"]
        except (ValueError, KeyError, IndexError) as e:
            raise MalformedOutput(f"unexpected response shape: {e}") from e

        tool_calls = message.get("tool_calls") or []
        if tool_calls:
            fn = tool_calls[0].get("function") or {}
            return parse_decision(
                {"name": fn.get("name"), "arguments": fn.get("arguments")},
                ctx.allowed,
            )
        return parse_decision(message.get("content") or "", ctx.allowed)


def make_backend(cfg: BackendConfig) -> DecisionBackend:
    if cfg.kind == "scripted":
        return ScriptedBackend()
    if cfg.kind == "remote":
        return RemoteBackend(cfg)
    if cfg.kind == "chaos":
        return ChaosBackend(seed=cfg.chaos_seed, error_rate=cfg.chaos_error_rate)
    raise ValueError(f"unknown backend kind {cfg.kind!r}")

"""HTTP/JSON session service over the engine.

Endpoints mirror the engine one-to-one: create a session, submit a turn,
resume a paused turn, read a turn's handoff trace, list a user's masked
cards, health. Turn responses carry a ``status`` of ``completed``,
``interrupted``, or ``rejected``; an interrupted response includes the
structured interrupt (id, prompt, requested fields) the client must
answer via ``/resume``.

Error mapping is fixed: unknown session or turn → 404, a second request
while a turn is in flight → 409, a spent or unmatched interrupt id → 410,
backend transport failure → 502, bad request bodies → 400. All error
bodies have the shape ``{"error": {"code", "message"}}``.

Card numbers never appear in any response: the engine's state layer masks
them before they can reach a reply, and the cards endpoint serves only
stored masked records.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from hmasp.errors import (
    EmptyUserId,
    HmaspError,
    SessionBusy,
    SessionNotFound,
    StaleInterrupt,
    TransportError,
    UnknownInterrupt,
    UnknownTurn,
)
from hmasp.interrupts import InterruptRequest
from hmasp.orchestrator import Engine, TurnResult

_ERROR_STATUS: list[tuple[type[HmaspError], int, str]] = [
    (SessionNotFound, 404, "session_not_found"),
    (UnknownTurn, 404, "unknown_turn"),
    (SessionBusy, 409, "turn_in_flight"),
    (StaleInterrupt, 410, "interrupt_gone"),
    (UnknownInterrupt, 410, "interrupt_gone"),
    (TransportError, 502, "backend_unreachable"),
    (EmptyUserId, 400, "invalid_request"),
]


def _error_response(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(
        status_code=status, content={"error": {"code": code, "message": message}}
    )


class CreateSessionBody(BaseModel):
    user_id: str


class MessageBody(BaseModel):
    text: str


class ResumeBody(BaseModel):
    interrupt_id: str
    text: str


def _interrupt_to_dict(interrupt: InterruptRequest) -> dict:
    return {
        "interrupt_id": interrupt.interrupt_id,
        "prompt_text": interrupt.prompt_text,
        "fields_requested": [
            {"name": f.name, "kind": f.kind.value, "validation_hint": f.validation_hint}
            for f in interrupt.fields_requested
        ],
    }


def turn_response(result: TurnResult) -> dict:
    body: dict = {"status": result.status.value, "turn_id": result.turn_id}
    if result.reply is not None:
        body["reply"] = result.reply
    if result.interrupt is not None:
        body["interrupt"] = _interrupt_to_dict(result.interrupt)
    return body


def create_app(engine: Engine) -> FastAPI:
    app = FastAPI(title="hmasp", docs_url=None, redoc_url=None)
    app.state.engine = engine
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(HmaspError)
    async def on_domain_error(request: Request, exc: HmaspError):
        for klass, status, code in _ERROR_STATUS:
            if isinstance(exc, klass):
                return _error_response(status, code, str(exc))
        return _error_response(500, "internal", str(exc))

    @app.exception_handler(RequestValidationError)
    async def on_bad_body(request: Request, exc: RequestValidationError):
        return _error_response(400, "invalid_request", "malformed request body")

    @app.post("/v1/sessions", status_code=201)
    def create_session(body: CreateSessionBody):
        session_id = engine.create_session(body.user_id)
        return {"session_id": session_id}

    @app.post("/v1/sessions/{session_id}/messages")
    def submit_message(session_id: str, body: MessageBody):
        return turn_response(engine.submit_turn(session_id, body.text))

    @app.post("/v1/sessions/{session_id}/resume")
    def resume(session_id: str, body: ResumeBody):
        return turn_response(
            engine.resume_turn(session_id, body.interrupt_id, body.text)
        )

    @app.get("/v1/sessions/{session_id}/trace")
    def trace(session_id: str, turn: int):
        edges = engine.get_trace(session_id, turn)
        return [
            {"from": a.value, "to": b.value, "turn_id": turn} for a, b in edges
        ]

    @app.get("/v1/users/{user_id}/cards")
    def cards(user_id: str):
        return [
            {
                "card_id": record.card_id,
                "masked_pan": record.masked_pan,
                "holder_name": record.holder_name,
                "expiry": record.expiry,
            }
            for record in engine.store.list_cards(user_id)
        ]

    @app.get("/v1/health")
    def health():
        return {"ok": True}

    return app

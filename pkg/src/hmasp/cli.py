"""Command-line entry points.

    hmasp serve   — run the HTTP session service
    hmasp chat    — talk to the engine on the terminal, resuming any
                    pending interrupt left by an earlier run
    hmasp synth   — write a seeded synthetic dataset (JSON lines)
    hmasp eval    — evaluate a dataset and write the report bundle
                    (markdown + CSV + rendered figures)
    hmasp replay  — print a checkpointed turn's handoff trace

Environment variables override flags: HMASP_ENDPOINT, HMASP_MODEL,
HMASP_API_KEY (remote backend), HMASP_DATA_DIR, HMASP_BIND. Logs go to
stderr; data (replies, reports, traces) goes to stdout or files.

Exit codes: 0 success, 2 usage error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import os
import socket
import sys
import tempfile
from datetime import date
from pathlib import Path

from hmasp.backends import BackendConfig, make_backend
from hmasp.errors import HmaspError, SchemaError
from hmasp.evaluation import (
    EvalResults,
    load_dataset,
    render_markdown,
    run_eval,
    synth_dataset,
    write_dataset,
    write_report_files,
)
from hmasp.orchestrator import Engine, TurnResultStatus
from hmasp.persistence import Store


def _log(message: str) -> None:
    print(message, file=sys.stderr)


def _add_backend_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--backend",
        choices=("scripted", "remote", "chaos"),
        default="scripted",
        help="decision backend (default: scripted)",
    )
    parser.add_argument("--endpoint", help="chat-completions URL (remote backend)")
    parser.add_argument("--model", help="model name (remote backend)")
    parser.add_argument("--seed", type=int, default=0, help="chaos seed")
    parser.add_argument(
        "--error-rate", type=float, default=0.0, help="chaos wrong-handoff rate"
    )


def _backend_config(args: argparse.Namespace, parser: argparse.ArgumentParser):
    # Environment overrides flags, by contract.
    endpoint = os.environ.get("HMASP_ENDPOINT") or args.endpoint
    model = os.environ.get("HMASP_MODEL") or args.model
    if args.backend == "remote" and not (endpoint and model):
        parser.error("--backend remote requires --endpoint and --model "
                     "(or HMASP_ENDPOINT / HMASP_MODEL)")
    try:
        return BackendConfig(
            kind=args.backend,
            endpoint_url=endpoint,
            model_name=model,
            api_key=os.environ.get("HMASP_API_KEY"),
            chaos_seed=args.seed,
            chaos_error_rate=args.error_rate,
        )
    except ValueError as err:
        parser.error(str(err))


def _data_dir(args: argparse.Namespace) -> Path:
    return Path(
        os.environ.get("HMASP_DATA_DIR") or args.data_dir or "./hmasp-data"
    )


def _redact(value: str | None) -> str:
    return "***" if value else "unset"


def _build_engine(args, parser) -> Engine:
    cfg = _backend_config(args, parser)
    store = Store(_data_dir(args))
    return Engine(store, make_backend(cfg), clock=date.today())


# --- serve --------------------------------------------------------------------


def cmd_serve(args, parser) -> int:
    from hmasp.service import create_app

    bind = os.environ.get("HMASP_BIND") or args.bind or "127.0.0.1:8080"
    host, _, port_text = bind.rpartition(":")
    try:
        port = int(port_text)
    except ValueError:
        parser.error(f"invalid bind address {bind!r}")

    cfg = _backend_config(args, parser)
    probe = socket.socket()
    try:
        probe.bind((host, port))
    except OSError as err:
        _log(f"cannot bind {bind}: {err}")
        return 1
    finally:
        probe.close()

    _log(
        f"serving on {bind} backend={cfg.kind} model={cfg.model_name or '-'} "
        f"api_key={_redact(cfg.api_key)} data_dir={_data_dir(args)}"
    )
    engine = Engine(Store(_data_dir(args)), make_backend(cfg), clock=date.today())
    app = create_app(engine)

    import uvicorn

    uvicorn.run(app, host=host, port=port, log_level="warning")
    return 0


# --- chat ---------------------------------------------------------------------


def _pending_for_user(engine: Engine, user_id: str):
    """A (session_id, interrupt) pair left behind by an earlier run, if any."""
    for session_id in engine.store.checkpoint_session_ids():
        if not engine.store.has_pending_checkpoint(session_id):
            continue
        checkpoint = engine.store.peek_checkpoint(session_id)
        if checkpoint.bundle.get("shared", {}).get("user_id") == user_id:
            return session_id, checkpoint.pending_interrupt
    return None


def cmd_chat(args, parser) -> int:
    engine = _build_engine(args, parser)
    pending = _pending_for_user(engine, args.user)
    if pending:
        session_id, interrupt = pending
        _log(f"resuming session {session_id} with a pending question:")
        print(interrupt.prompt_text)
    else:
        session_id = engine.create_session(args.user)
        interrupt = None
        _log(f"session {session_id} started; Ctrl-D to quit")

    for line in sys.stdin:
        text = line.strip()
        if not text:
            continue
        try:
            if interrupt is not None:
                result = engine.resume_turn(
                    session_id, interrupt.interrupt_id, text
                )
            else:
                result = engine.submit_turn(session_id, text)
        except HmaspError as err:
            _log(f"error: {err}")
            continue
        if result.status is TurnResultStatus.INTERRUPTED:
            interrupt = result.interrupt
            print(result.interrupt.prompt_text)
        else:
            interrupt = None
            print(result.reply)
        sys.stdout.flush()
    return 0


# --- synth / eval / replay ------------------------------------------------------


def cmd_synth(args, parser) -> int:
    rows = synth_dataset(args.n, args.seed)
    write_dataset(rows, args.out)
    _log(f"wrote {len(rows)} rows ({args.n} per task) to {args.out}")
    return 0


def _model_label(cfg: BackendConfig) -> str:
    if cfg.kind == "remote":
        return cfg.model_name or "remote"
    return cfg.kind


def cmd_eval(args, parser) -> int:
    cfg = _backend_config(args, parser)
    try:
        dataset = load_dataset(args.dataset)
    except FileNotFoundError:
        _log(f"dataset not found: {args.dataset}")
        return 1
    except SchemaError as err:
        _log(f"bad dataset: {err}")
        return 1
    if not dataset:
        _log("dataset is empty")
        return 1

    out_dir = Path(args.out)
    with tempfile.TemporaryDirectory(prefix="hmasp-eval-") as work:
        records = run_eval(dataset, cfg, work, jobs=args.jobs)
    results = EvalResults.from_records(records)
    label = _model_label(cfg)
    paths = write_report_files(results, out_dir, label)
    print(render_markdown(results, label))
    _log(f"report written to {paths['markdown']} (+ csv, figures)")
    return 0


def cmd_replay(args, parser) -> int:
    store = Store(_data_dir(args))
    checkpoint = store.peek_checkpoint(args.session)
    if checkpoint is None:
        _log(f"no stored turn for session {args.session!r}")
        return 1
    _log(f"session {args.session} turn {checkpoint.turn_id}:")
    for frm, to in checkpoint.trace:
        print(f"{frm} → {to}")
    return 0


# --- wiring -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hmasp",
        description="Hierarchical multi-agent payments engine.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the HTTP session service")
    _add_backend_flags(serve)
    serve.add_argument("--data-dir", help="persistence directory")
    serve.add_argument("--bind", help="host:port (default 127.0.0.1:8080)")
    serve.set_defaults(func=cmd_serve)

    chat = sub.add_parser("chat", help="interactive terminal session")
    _add_backend_flags(chat)
    chat.add_argument("--data-dir", help="persistence directory")
    chat.add_argument("--user", default="local", help="user id for the session")
    chat.set_defaults(func=cmd_chat)

    synth = sub.add_parser("synth", help="write a synthetic dataset")
    synth.add_argument("--n", type=int, required=True, help="rows per task")
    synth.add_argument("--seed", type=int, required=True)
    synth.add_argument("--out", required=True, help="output JSONL path")
    synth.set_defaults(func=cmd_synth)

    ev = sub.add_parser("eval", help="evaluate a dataset and write reports")
    _add_backend_flags(ev)
    ev.add_argument("--dataset", required=True, help="JSONL dataset path")
    ev.add_argument("--out", default="./eval-report", help="report directory")
    ev.add_argument(
        "--jobs", type=int, default=os.cpu_count() or 1, help="parallel rows"
    )
    ev.set_defaults(func=cmd_eval)

    replay = sub.add_parser("replay", help="print a stored turn's handoff trace")
    _add_backend_flags(replay)
    replay.add_argument("--session", required=True, help="session id")
    replay.add_argument("--data-dir", help="persistence directory")
    replay.set_defaults(func=cmd_replay)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except HmaspError as err:
        _log(f"error: {err}")
        return 1


if __name__ == "__main__":
    sys.exit(main())

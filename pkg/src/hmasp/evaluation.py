"""Dataset synthesis, evaluation runs, and routing metrics.

The harness measures two things over a four-task corpus (card
registration, card retrieval, payment, off-domain):

  * task success rate — the run triggered the expected workflow AND the
    task's own correctness check passed (persisted card fields match,
    the reply carries the right last4, the transaction matches, or —
    for off-domain inputs — nothing was triggered at all);
  * handoff F1 — micro-averaged precision/recall over routing edges,
    comparing each turn's entry-agent→supervisor and supervisor→router
    hops against the edges the task implies. Off-domain rows score a
    true positive for an empty trace and are penalized per stray hop.

Every row runs in its own sandbox (fresh engine, fresh data directory,
its own seeded backend), so rows can never contaminate each other and
aggregates are order-independent. All ratios are exact `Fraction`s;
floats appear only at the presentation edge.
"""

from __future__ import annotations

import hashlib
import json
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date
from fractions import Fraction
from pathlib import Path

from hmasp.backends import BackendConfig, ChaosBackend, make_backend
from hmasp.errors import EmptyTask, SchemaError
from hmasp.hierarchy import (
    METRIC_EDGES,
    SUPERVISOR_OF,
    WORKFLOWS,
    NodeId,
)
from hmasp.interrupts import FieldKind
from hmasp.orchestrator import Engine, TurnResultStatus
from hmasp.persistence import Store
from hmasp.validation import CardDetails, luhn_complete

Edge = tuple[NodeId, NodeId]

# Expiry checks during evaluation run against a pinned date so results
# never drift with the wall calendar; synthesized expiries lie far past it.
EVAL_CLOCK = date(2026, 1, 1)

TASKS = (1, 2, 3, 4)

EXPECTED_WORKFLOW_BY_TASK: dict[int, NodeId | None] = {
    1: NodeId.WF_CARD_REGISTRATION,
    2: NodeId.WF_CARD_RETRIEVAL,
    3: NodeId.WF_PAYMENT,
    4: None,
}

EXPECTED_DOMAIN_BY_TASK = {1: "cards", 2: "cards", 3: "payments", 4: "none"}


def expected_edges_for_task(task: int) -> frozenset[Edge]:
    """The routing edges a task should produce: entry→supervisor and
    supervisor→router. Off-domain rows expect none."""
    workflow = EXPECTED_WORKFLOW_BY_TASK[task]
    if workflow is None:
        return frozenset()
    router = {
        NodeId.WF_CARD_REGISTRATION: NodeId.ROUTER_CARD_REGISTRATION,
        NodeId.WF_CARD_RETRIEVAL: NodeId.ROUTER_CARD_RETRIEVAL,
        NodeId.WF_PAYMENT: NodeId.ROUTER_PAYMENT,
    }[workflow]
    supervisor = SUPERVISOR_OF[router]
    return frozenset({(NodeId.CPA, supervisor), (supervisor, router)})


# --- dataset -----------------------------------------------------------------


@dataclass(frozen=True)
class DatasetRow:
    id: str
    text: str
    task: int
    expected_domain: str
    expected_workflow: NodeId | None
    fixture: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "text": self.text,
            "task": self.task,
            "expected_domain": self.expected_domain,
            "expected_workflow": (
                self.expected_workflow.value if self.expected_workflow else "none"
            ),
            "fixture": self.fixture,
        }


_ROW_FIELDS = ("id", "text", "task", "expected_domain", "expected_workflow", "fixture")


def row_from_dict(data: dict, line_no: int = 0) -> DatasetRow:
    for name in _ROW_FIELDS:
        if name not in data:
            raise SchemaError(line_no, name, f"line {line_no}: missing field {name!r}")
    task = data["task"]
    if task not in TASKS:
        raise SchemaError(line_no, "task", f"line {line_no}: task must be 1..4")
    raw_wf = data["expected_workflow"]
    if raw_wf in (None, "none"):
        workflow = None
    else:
        try:
            workflow = NodeId(raw_wf)
        except ValueError:
            raise SchemaError(line_no, "expected_workflow") from None
        if workflow not in WORKFLOWS:
            raise SchemaError(line_no, "expected_workflow")
    if workflow is not EXPECTED_WORKFLOW_BY_TASK[task]:
        raise SchemaError(
            line_no,
            "expected_workflow",
            f"line {line_no}: task {task} cannot expect {raw_wf}",
        )
    if data["expected_domain"] != EXPECTED_DOMAIN_BY_TASK[task]:
        raise SchemaError(line_no, "expected_domain")
    if not isinstance(data["fixture"], dict):
        raise SchemaError(line_no, "fixture")
    if not isinstance(data["text"], str) or not data["text"]:
        raise SchemaError(line_no, "text")
    return DatasetRow(
        id=str(data["id"]),
        text=data["text"],
        task=task,
        expected_domain=data["expected_domain"],
        expected_workflow=workflow,
        fixture=data["fixture"],
    )


def load_dataset(path: str | Path) -> list[DatasetRow]:
    rows: list[DatasetRow] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError:
                raise SchemaError(line_no, "json", f"line {line_no}: not valid JSON")
            rows.append(row_from_dict(data, line_no))
    return rows


def write_dataset(rows: list[DatasetRow], path: str | Path) -> None:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row.to_dict(), sort_keys=True) + "\n")


# --- synthesis ---------------------------------------------------------------

_FIRST_NAMES = ("Alex", "Dana", "Iris", "Jo", "Kim", "Lee", "Max", "Noa", "Sam", "Val")
_LAST_NAMES = (
    "Adler", "Brook", "Carver", "Diaz", "Ellis",
    "Field", "Gray", "Hale", "Irwin", "Jones",
)

_T1_TEMPLATES = (
    "Register a new card",
    "I'd like to add a new card",
    "Please save a new credit card for me",
    "Can you store a new card on my account?",
    "I want to enroll another card",
    "add a card",
)

_T2_LIST_TEMPLATES = (
    "List my cards",
    "Show my saved cards",
    "What cards do I have on file?",
    "Which cards are saved for me?",
    "show me my cards",
)

_T2_SELECT_TEMPLATES = (
    "Select one of my cards",
    "I want to pick one of my saved cards",
    "choose a card for me to use",
)

_T3_TEMPLATES = (
    "Pay {amount} for order #{ref}",
    "please pay {amount}",
    "I want to make a payment of {amount} for order #{ref}",
    "checkout {amount}",
    "Can I buy this for {amount}?",
)

_T4_TEMPLATES = (
    "Tell me a joke",
    "What's the weather in Paris today?",
    "Who won the championship last night?",
    "Translate good morning into French",
    "What time is it in Tokyo?",
    "Recommend a good pizza place nearby",
)


def _random_pan(rng: random.Random) -> str:
    prefix = str(rng.randint(1, 9)) + "".join(str(rng.randint(0, 9)) for _ in range(14))
    return luhn_complete(prefix)


def _random_holder(rng: random.Random) -> str:
    return f"{rng.choice(_FIRST_NAMES)} {rng.choice(_LAST_NAMES)}"


def _random_card_spec(rng: random.Random) -> dict:
    return {
        "pan": _random_pan(rng),
        "expiry_month": rng.randint(1, 12),
        "expiry_year": rng.randint(2030, 2039),
        "cvv": f"{rng.randint(0, 999):03d}",
        "holder_name": _random_holder(rng),
    }


def _card_answer_text(spec: dict) -> str:
    return (
        f"{spec['pan']}, {spec['expiry_month']:02d}/{spec['expiry_year'] % 100:02d}, "
        f"cvv {spec['cvv']}, name {spec['holder_name']}"
    )


def _passing_otp(rng: random.Random) -> str:
    digits = [rng.randint(0, 9) for _ in range(5)]
    digits.append((10 - sum(digits) % 10) % 10)
    return "".join(str(d) for d in digits)


def synth_dataset(n_per_task: int, seed: int) -> list[DatasetRow]:
    """Seeded template expansion: ``(n, seed)`` always yields the same
    rows, so synthesized corpora are reproducible build artifacts."""
    if n_per_task < 1:
        raise ValueError("n_per_task must be >= 1")
    rng = random.Random(seed)
    rows: list[DatasetRow] = []

    for i in range(n_per_task):
        spec = _random_card_spec(rng)
        expiry = f"{spec['expiry_month']:02d}/{spec['expiry_year'] % 100:02d}"
        rows.append(
            DatasetRow(
                id=f"t1_{i:04d}",
                text=_T1_TEMPLATES[i % len(_T1_TEMPLATES)],
                task=1,
                expected_domain="cards",
                expected_workflow=NodeId.WF_CARD_REGISTRATION,
                fixture={
                    "card": spec,
                    "card_answer_text": _card_answer_text(spec),
                    "expected_last4": spec["pan"][-4:],
                    "expected_expiry": expiry,
                },
            )
        )

    for i in range(n_per_task):
        n_cards = rng.randint(1, 3)
        cards = [_random_card_spec(rng) for _ in range(n_cards)]
        select = i % 3 == 2  # a third of the rows exercise selection
        if select:
            index = rng.randint(1, n_cards)
            text = _T2_SELECT_TEMPLATES[i % len(_T2_SELECT_TEMPLATES)]
            fixture = {
                "cards": cards,
                "selection_index": index,
                "expected_last4s": [cards[index - 1]["pan"][-4:]],
            }
        else:
            text = _T2_LIST_TEMPLATES[i % len(_T2_LIST_TEMPLATES)]
            fixture = {
                "cards": cards,
                "expected_last4s": [c["pan"][-4:] for c in cards],
            }
        rows.append(
            DatasetRow(
                id=f"t2_{i:04d}",
                text=text,
                task=2,
                expected_domain="cards",
                expected_workflow=NodeId.WF_CARD_RETRIEVAL,
                fixture=fixture,
            )
        )

    for i in range(n_per_task):
        card = _random_card_spec(rng)
        amount_minor = rng.randint(100, 50000)
        amount_text = f"${amount_minor // 100}.{amount_minor % 100:02d}"
        ref = f"{chr(ord('A') + i % 26)}{rng.randint(1, 99)}"
        rows.append(
            DatasetRow(
                id=f"t3_{i:04d}",
                text=_T3_TEMPLATES[i % len(_T3_TEMPLATES)].format(
                    amount=amount_text, ref=ref
                ),
                task=3,
                expected_domain="payments",
                expected_workflow=NodeId.WF_PAYMENT,
                fixture={
                    "card": card,
                    "amount_minor": amount_minor,
                    "currency": "USD",
                    "amount_text": amount_text,
                    "otp": _passing_otp(rng),
                    "expected_last4": card["pan"][-4:],
                },
            )
        )

    for i in range(n_per_task):
        rows.append(
            DatasetRow(
                id=f"t4_{i:04d}",
                text=_T4_TEMPLATES[i % len(_T4_TEMPLATES)],
                task=4,
                expected_domain="none",
                expected_workflow=None,
                fixture={},
            )
        )

    return rows


# --- running -----------------------------------------------------------------


@dataclass(frozen=True)
class EvalRecord:
    row_id: str
    task: int
    trace: tuple[Edge, ...]
    triggered_workflow: NodeId | None
    outcome_ok: bool
    expected_handoffs: frozenset[Edge]


def _row_backend(cfg: BackendConfig, row_id: str):
    """Chaos gets a per-row seed derived from (seed, row id), so each row's
    corruption is independent yet the whole run replays identically."""
    if cfg.kind == "chaos":
        digest = hashlib.sha256(f"{cfg.chaos_seed}|{row_id}".encode()).digest()
        row_seed = int.from_bytes(digest[:8], "big")
        return ChaosBackend(seed=row_seed, error_rate=cfg.chaos_error_rate)
    return make_backend(cfg)


def _details_from_spec(spec: dict) -> CardDetails:
    return CardDetails(
        pan=spec["pan"],
        expiry_month=spec["expiry_month"],
        expiry_year=spec["expiry_year"],
        cvv=spec["cvv"],
        holder_name=spec["holder_name"],
    )


def _triggered_workflow(trace: tuple[Edge, ...]) -> NodeId | None:
    for _, target in trace:
        if target in WORKFLOWS:
            return target
    return None


def _answer_for(kind: FieldKind, fixture: dict) -> str:
    """The fixture's reply for an interrupt. Off-script requests (a chaos
    route landing in the wrong workflow) get a harmless default that the
    validators will judge on its own merits."""
    if kind is FieldKind.PAN16:
        return fixture.get("card_answer_text", "no card to give")
    if kind is FieldKind.CARD_CHOICE_INDEX:
        return str(fixture.get("selection_index", 1))
    if kind is FieldKind.OTP6:
        return fixture.get("otp", "not sharing a code")
    if kind is FieldKind.AMOUNT:
        return fixture.get("amount_text", "no amount")
    return ""  # pragma: no cover - field kinds are closed


def _run_row(row: DatasetRow, cfg: BackendConfig, data_dir: Path) -> EvalRecord:
    expected = expected_edges_for_task(row.task)
    store = Store(data_dir)
    user_id = f"user_{row.id}"
    for spec in row.fixture.get("cards", []):
        store.save_card(user_id, _details_from_spec(spec))
    if "card" in row.fixture and row.task == 3:
        store.save_card(user_id, _details_from_spec(row.fixture["card"]))

    engine = Engine(store, _row_backend(cfg, row.id), clock=EVAL_CLOCK)
    trace: tuple[Edge, ...] = ()
    reply = ""
    try:
        session_id = engine.create_session(user_id)
        result = engine.submit_turn(session_id, row.text)
        for _ in range(6):
            if result.status is not TurnResultStatus.INTERRUPTED:
                break
            answer = _answer_for(
                result.interrupt.fields_requested[0].kind, row.fixture
            )
            result = engine.resume_turn(
                session_id, result.interrupt.interrupt_id, answer
            )
        trace = result.trace
        reply = result.reply or ""
        completed = result.status is TurnResultStatus.COMPLETED
    except Exception:
        # A row-level failure is a scored outcome, never a run abort.
        completed = False

    outcome_ok = _check_outcome(row, store, user_id, reply, trace, completed)
    return EvalRecord(
        row_id=row.id,
        task=row.task,
        trace=trace,
        triggered_workflow=_triggered_workflow(trace),
        outcome_ok=outcome_ok,
        expected_handoffs=expected,
    )


def _check_outcome(
    row: DatasetRow,
    store: Store,
    user_id: str,
    reply: str,
    trace: tuple[Edge, ...],
    completed: bool,
) -> bool:
    fixture = row.fixture
    if row.task == 1:
        cards = store.list_cards(user_id)
        return (
            completed
            and len(cards) == 1
            and cards[0].last4 == fixture["expected_last4"]
            and cards[0].expiry == fixture["expected_expiry"]
            and cards[0].holder_name == fixture["card"]["holder_name"]
        )
    if row.task == 2:
        return completed and all(l4 in reply for l4 in fixture["expected_last4s"])
    if row.task == 3:
        txn = store.get_transaction("txn_000001")
        return (
            completed
            and txn is not None
            and txn.amount_minor == fixture["amount_minor"]
            and txn.currency == fixture["currency"]
            and txn.card_id == "card_000001"
            and fixture["expected_last4"] in reply
        )
    return _triggered_workflow(trace) is None  # task 4: nothing may trigger


def run_eval(
    dataset: list[DatasetRow],
    cfg: BackendConfig,
    work_dir: str | Path,
    jobs: int = 1,
) -> list[EvalRecord]:
    """Evaluate every row in its own sandbox under ``work_dir``. Results
    come back in dataset order regardless of worker scheduling."""
    root = Path(work_dir)
    root.mkdir(parents=True, exist_ok=True)

    def one(row: DatasetRow) -> EvalRecord:
        return _run_row(row, cfg, root / row.id)

    if jobs <= 1:
        return [one(row) for row in dataset]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, dataset))


# --- metrics -----------------------------------------------------------------


@dataclass(frozen=True)
class PRF:
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> Fraction:
        return Fraction(self.tp, self.tp + self.fp) if self.tp + self.fp else Fraction(1)

    @property
    def recall(self) -> Fraction:
        return Fraction(self.tp, self.tp + self.fn) if self.tp + self.fn else Fraction(1)

    @property
    def f1(self) -> Fraction:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else Fraction(0)


def _task_records(records: list[EvalRecord], task: int) -> list[EvalRecord]:
    picked = [r for r in records if r.task == task]
    if not picked:
        raise EmptyTask(f"no evaluation records for task {task}")
    return picked


def task_success_rate(records: list[EvalRecord], task: int) -> float:
    """Percentage of the task's rows that both triggered the expected
    workflow and passed the task's correctness check."""
    picked = _task_records(records, task)
    expected = EXPECTED_WORKFLOW_BY_TASK[task]
    good = sum(
        1 for r in picked if r.triggered_workflow is expected and r.outcome_ok
    )
    return 100.0 * good / len(picked)


def handoff_f1(records: list[EvalRecord], task: int) -> PRF:
    """Micro-averaged routing score: pool edge counts over the task's rows.

    For on-domain tasks, a row's actual set is its trace filtered to
    routing edges (levels 1→2 and 2→3) and its expected set is the two
    edges the task implies. Off-domain rows score one true positive for
    an empty routing set; any stray hop counts against both precision
    (each hop a false positive) and recall (the row a false negative).
    """
    tp = fp = fn = 0
    for r in _task_records(records, task):
        actual = {e for e in r.trace if e in METRIC_EDGES}
        if task == 4:
            if actual:
                fn += 1
                fp += len(actual)
            else:
                tp += 1
        else:
            expected = r.expected_handoffs
            tp += len(actual & expected)
            fp += len(actual - expected)
            fn += len(expected - actual)
    return PRF(tp=tp, fp=fp, fn=fn)


def average_f1(records: list[EvalRecord]) -> Fraction:
    """Unweighted mean of the on-domain tasks' F1 scores."""
    scores = [handoff_f1(records, task).f1 for task in (1, 2, 3)]
    return sum(scores, Fraction(0)) / len(scores)


# --- reports -----------------------------------------------------------------


@dataclass(frozen=True)
class EvalResults:
    success: dict[int, float]
    f1: dict[int, PRF]

    @classmethod
    def from_records(cls, records: list[EvalRecord]) -> "EvalResults":
        return cls(
            success={t: task_success_rate(records, t) for t in TASKS},
            f1={t: handoff_f1(records, t) for t in TASKS},
        )


def _pct(value: float | Fraction) -> str:
    return f"{float(value):.1f}"


def render_markdown(results: EvalResults, model: str) -> str:
    lines = [
        "## Task Success Rate (%)",
        "",
        "| model | T1 | T2 | T3 | T4 |",
        "|---|---|---|---|---|",
        "| "
        + " | ".join([model] + [_pct(results.success[t]) for t in TASKS])
        + " |",
        "",
        "## Handoff F1 (%)",
        "",
        "| model | T1 | T2 | T3 | T4 |",
        "|---|---|---|---|---|",
        "| "
        + " | ".join([model] + [_pct(results.f1[t].f1 * 100) for t in TASKS])
        + " |",
        "",
    ]
    return "\n".join(lines)


def render_csv(results: EvalResults, model: str) -> str:
    lines = ["model,task,metric,value"]
    for t in TASKS:
        lines.append(f"{model},{t},success_rate,{_pct(results.success[t])}")
    for t in TASKS:
        lines.append(f"{model},{t},handoff_f1,{_pct(results.f1[t].f1 * 100)}")
    return "\n".join(lines) + "\n"


def _render_figure(path: Path, title: str, values: dict[int, float]) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.2))
    labels = [f"T{t}" for t in TASKS]
    heights = [values[t] for t in TASKS]
    ax.bar(labels, heights, color="#4878a8")
    ax.set_ylim(0, 105)
    ax.set_ylabel("%")
    ax.set_title(title)
    for x, h in enumerate(heights):
        ax.text(x, h + 1, f"{h:.1f}", ha="center", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_report_files(
    results: EvalResults, out_dir: str | Path, model: str
) -> dict[str, Path]:
    """The report bundle: markdown + CSV plus one rendered figure per
    metric, side by side in ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "markdown": out / "report.md",
        "csv": out / "report.csv",
        "success_png": out / "success_rate.png",
        "f1_png": out / "handoff_f1.png",
    }
    paths["markdown"].write_text(render_markdown(results, model), encoding="utf-8")
    paths["csv"].write_text(render_csv(results, model), encoding="utf-8")
    _render_figure(paths["success_png"], "Task Success Rate (%)", results.success)
    _render_figure(
        paths["f1_png"],
        "Handoff F1 (%)",
        {t: float(results.f1[t].f1 * 100) for t in TASKS},
    )
    return paths

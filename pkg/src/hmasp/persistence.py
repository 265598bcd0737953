"""Append-only event log with an in-memory snapshot, plus a secrets vault.

All durable state — cards, transactions, checkpoints — lives as events in
``{data_dir}/events.jsonl``, one JSON object per line with fields
``seq``/``kind``/``payload``/``ts``. The in-memory snapshot is *only*
mutated by applying events, so replaying the file reproduces it exactly;
opening a store on an existing directory recovers everything up to the
last flushed line.

Full card numbers and CVVs never reach disk: they live in a
memory-resident vault keyed by an opaque token, and only the token plus
the last four digits appear in events. Losing the vault on restart is by
design — nothing downstream needs the full PAN again.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

from hmasp.errors import (
    CheckpointAlreadyConsumed,
    IOFailure,
    NoPendingCheckpoint,
    UnknownCard,
)
from hmasp.interrupts import Checkpoint
from hmasp.validation import CardDetails

EVENTS_FILE = "events.jsonl"
DATA_DIR_ENV = "HMASP_DATA_DIR"


@dataclass(frozen=True)
class CardRecord:
    card_id: str
    user_id: str
    last4: str
    holder_name: str
    expiry: str
    pan_token: str

    @property
    def masked_pan(self) -> str:
        return "**** **** **** " + self.last4


@dataclass(frozen=True)
class TransactionRecord:
    transaction_id: str
    user_id: str
    card_id: str
    amount_minor: int
    currency: str
    auth_code: str
    timestamp: str


@dataclass(frozen=True)
class VaultEntry:
    pan: str
    cvv: str


def default_data_dir() -> Path:
    return Path(os.environ.get(DATA_DIR_ENV, "./hmasp-data"))


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


class Store:
    """Single-writer durable store over one data directory.

    ``clock`` supplies RFC-3339 timestamps and is injectable so evaluation
    runs and replay comparisons stay deterministic.
    """

    def __init__(self, data_dir: str | Path | None = None, clock: Callable[[], str] = _utc_now):
        self.data_dir = Path(data_dir) if data_dir is not None else default_data_dir()
        self._clock = clock
        self._lock = threading.Lock()
        self._vault: dict[str, VaultEntry] = {}

        self._seq = 0
        self._cards_by_id: dict[str, CardRecord] = {}
        self._cards_by_user: dict[str, list[str]] = {}
        self._txns: dict[str, TransactionRecord] = {}
        self._checkpoints: dict[str, Checkpoint] = {}
        self._consumed: set[str] = set()  # session_ids whose checkpoint is spent
        self._card_count = 0
        self._txn_count = 0

        try:
            self.data_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise IOFailure(f"cannot create data dir {self.data_dir}: {e}") from e
        self._replay()

    @property
    def events_path(self) -> Path:
        return self.data_dir / EVENTS_FILE

    # -- event log core ----------------------------------------------------

    def _replay(self) -> None:
        if not self.events_path.exists():
            return
        try:
            with self.events_path.open("r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    entry = json.loads(line)
                    self._apply(entry["kind"], entry["payload"])
                    self._seq = entry["seq"]
        except (OSError, json.JSONDecodeError, KeyError) as e:
            raise IOFailure(f"corrupt event log {self.events_path}: {e}") from e

    def _append(self, kind: str, payload: dict) -> None:
        """Write the event to disk first, then apply it to the snapshot;
        an I/O failure leaves the snapshot untouched."""
        entry = {
            "seq": self._seq + 1,
            "kind": kind,
            "payload": payload,
            "ts": self._clock(),
        }
        try:
            with self.events_path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
        except OSError as e:
            raise IOFailure(f"cannot append to {self.events_path}: {e}") from e
        self._seq = entry["seq"]
        self._apply(kind, payload)

    def _apply(self, kind: str, payload: dict) -> None:
        if kind == "card_saved":
            rec = CardRecord(**payload)
            self._cards_by_id[rec.card_id] = rec
            self._cards_by_user.setdefault(rec.user_id, []).append(rec.card_id)
            self._card_count += 1
        elif kind == "txn_saved":
            rec = TransactionRecord(**payload)
            self._txns[rec.transaction_id] = rec
            self._txn_count += 1
        elif kind == "checkpoint_saved":
            cp = Checkpoint.from_dict(payload)
            self._checkpoints[cp.session_id] = cp
            self._consumed.discard(cp.session_id)
        elif kind == "checkpoint_consumed":
            self._consumed.add(payload["session_id"])
        else:
            raise IOFailure(f"unknown event kind {kind!r}")

    # -- cards ---------------------------------------------------------------

    def save_card(self, user_id: str, details: CardDetails) -> CardRecord:
        with self._lock:
            card_id = f"card_{self._card_count + 1:06d}"
            token = f"tok_{card_id}"
            payload = {
                "card_id": card_id,
                "user_id": user_id,
                "last4": details.last4,
                "holder_name": details.holder_name,
                "expiry": details.expiry,
                "pan_token": token,
            }
            self._append("card_saved", payload)
            # The vault write is deliberately not an event: secrets stay
            # memory-resident and vanish on restart.
            self._vault[token] = VaultEntry(pan=details.pan, cvv=details.cvv)
            return self._cards_by_id[card_id]

    def list_cards(self, user_id: str) -> list[CardRecord]:
        with self._lock:
            return [self._cards_by_id[cid] for cid in self._cards_by_user.get(user_id, [])]

    def get_card(self, card_id: str) -> CardRecord | None:
        with self._lock:
            return self._cards_by_id.get(card_id)

    def vault_get(self, pan_token: str) -> VaultEntry | None:
        return self._vault.get(pan_token)

    # -- transactions ----------------------------------------------------------

    def save_transaction(
        self,
        user_id: str,
        card_id: str,
        amount_minor: int,
        currency: str,
        auth_code: str,
    ) -> TransactionRecord:
        with self._lock:
            owner = self._cards_by_id.get(card_id)
            if owner is None or owner.user_id != user_id:
                raise UnknownCard(f"card {card_id!r} does not exist for user {user_id!r}")
            txn_id = f"txn_{self._txn_count + 1:06d}"
            payload = {
                "transaction_id": txn_id,
                "user_id": user_id,
                "card_id": card_id,
                "amount_minor": amount_minor,
                "currency": currency,
                "auth_code": auth_code,
                "timestamp": self._clock(),
            }
            self._append("txn_saved", payload)
            return self._txns[txn_id]

    def get_transaction(self, transaction_id: str) -> TransactionRecord | None:
        with self._lock:
            return self._txns.get(transaction_id)

    # -- checkpoints -------------------------------------------------------------

    def save_checkpoint(self, cp: Checkpoint) -> None:
        with self._lock:
            self._append("checkpoint_saved", cp.to_dict())

    def load_checkpoint(self, session_id: str) -> Checkpoint:
        with self._lock:
            cp = self._checkpoints.get(session_id)
            if cp is None:
                raise NoPendingCheckpoint(f"no checkpoint for session {session_id!r}")
            if session_id in self._consumed:
                raise CheckpointAlreadyConsumed(
                    f"checkpoint for session {session_id!r} was already resumed"
                )
            return cp

    def consume_checkpoint(self, session_id: str) -> None:
        with self._lock:
            if session_id not in self._checkpoints:
                raise NoPendingCheckpoint(f"no checkpoint for session {session_id!r}")
            if session_id in self._consumed:
                raise CheckpointAlreadyConsumed(
                    f"checkpoint for session {session_id!r} was already resumed"
                )
            self._append("checkpoint_consumed", {"session_id": session_id})

    def has_pending_checkpoint(self, session_id: str) -> bool:
        with self._lock:
            return (
                session_id in self._checkpoints and session_id not in self._consumed
            )

    def peek_checkpoint(self, session_id: str) -> Checkpoint | None:
        """The session's latest checkpoint regardless of whether it was
        consumed — lets callers tell a spent interrupt from an unknown one."""
        with self._lock:
            return self._checkpoints.get(session_id)

    def checkpoint_session_ids(self) -> list[str]:
        """Every session id that has ever checkpointed, sorted. Lets a
        restarted engine keep its session numbering clear of them."""
        with self._lock:
            return sorted(self._checkpoints)

    # -- introspection ------------------------------------------------------------

    def snapshot_digest(self) -> str:
        """Canonical JSON of the snapshot, for recovery-equality checks."""
        with self._lock:
            view = {
                "seq": self._seq,
                "cards": {cid: asdict(c) for cid, c in sorted(self._cards_by_id.items())},
                "card_order": self._cards_by_user,
                "txns": {tid: asdict(t) for tid, t in sorted(self._txns.items())},
                "checkpoints": {
                    sid: cp.to_dict() for sid, cp in sorted(self._checkpoints.items())
                },
                "consumed": sorted(self._consumed),
            }
            return json.dumps(view, sort_keys=True)

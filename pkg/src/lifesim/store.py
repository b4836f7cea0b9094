"""Append-only session persistence.

One record log per session plus an index file mapping session id to log
path. A record is a 4-byte big-endian length prefix, that many bytes of
UTF-8 JSON, then a single newline. Two record kinds exist, "meta" and
"turn"; replaying the log in order reconstructs the session, which is the
crash-recovery story. Key names are pinned in docs/session-log-schema.md
and every record carries schema_version.
"""

from __future__ import annotations

import json
import os
import struct
import threading
from pathlib import Path
from typing import Iterator, Optional

from lifesim.errors import IntegrityError, NotFoundError
from lifesim.state import CharacterState, CharacterProfile, Environment, GameSession, StoryTurn

SCHEMA_VERSION = 1

_LEN = struct.Struct(">I")


def _encode_record(record: dict) -> bytes:
    payload = json.dumps(record, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _LEN.pack(len(payload)) + payload + b"\n"


def _iter_records(path: Path) -> Iterator[dict]:
    """Yield decoded records; raise IntegrityError at the first bad one."""
    index = 0
    offset = 0
    with path.open("rb") as fh:
        while True:
            header = fh.read(4)
            if not header:
                return
            if len(header) < 4:
                raise IntegrityError(
                    "truncated length prefix", offset=offset, record_index=index
                )
            (length,) = _LEN.unpack(header)
            payload = fh.read(length)
            if len(payload) < length:
                raise IntegrityError(
                    "truncated record payload", offset=offset, record_index=index
                )
            newline = fh.read(1)
            if newline != b"\n":
                raise IntegrityError(
                    "missing record terminator", offset=offset, record_index=index
                )
            try:
                record = json.loads(payload.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise IntegrityError(
                    f"undecodable record: {exc}", offset=offset, record_index=index
                ) from exc
            yield record
            offset += 4 + length + 1
            index += 1


def _meta_record(session: GameSession) -> dict:
    return {
        "kind": "meta",
        "schema_version": SCHEMA_VERSION,
        "session_id": session.id,
        "profile": session.profile.as_dict(),
        "environments": [env.as_dict() for env in session.environments],
        "initial_state": session.initial_state.as_dict(),
        "plan_overrides": session.plan_overrides,
        "created_at": session.created_at,
        "updated_at": session.updated_at,
    }


def _turn_record(session_id: str, turn: StoryTurn) -> dict:
    return {
        "kind": "turn",
        "schema_version": SCHEMA_VERSION,
        "session_id": session_id,
        "turn": turn.as_dict(),
    }


class SessionStore:
    """Filesystem-backed store rooted at one directory.

    Log appends are flushed and fsynced so a crash after `append_turn`
    returns can always be replayed. The index rewrite is atomic
    (tempfile + rename).
    """

    def __init__(self, root: Path | str):
        self.root = Path(root)
        self.logs_dir = self.root / "sessions"
        self.index_path = self.root / "index.json"
        self.logs_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    # -- index ---------------------------------------------------------------

    def _read_index(self) -> dict[str, str]:
        if not self.index_path.exists():
            return {}
        return json.loads(self.index_path.read_text("utf-8"))

    def _write_index(self, index: dict[str, str]) -> None:
        tmp = self.index_path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(index, sort_keys=True, indent=2), "utf-8")
        os.replace(tmp, self.index_path)

    def ids(self) -> list[str]:
        return sorted(self._read_index())

    def exists(self, session_id: str) -> bool:
        return session_id in self._read_index()

    def _log_path(self, session_id: str, *, create: bool = False) -> Path:
        index = self._read_index()
        rel = index.get(session_id)
        if rel is None:
            if not create:
                raise NotFoundError(f"unknown session id {session_id!r}")
            rel = f"sessions/{session_id}.log"
            index[session_id] = rel
            self._write_index(index)
        return self.root / rel

    # -- writes --------------------------------------------------------------

    def _append(self, path: Path, record: dict) -> None:
        data = _encode_record(record)
        with path.open("ab") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())

    def write_meta(self, session: GameSession) -> None:
        """Append a fresh meta record; the last meta in the log wins on replay."""
        with self._lock:
            path = self._log_path(session.id, create=True)
            self._append(path, _meta_record(session))

    def append_turn(self, session_id: str, turn: StoryTurn) -> None:
        with self._lock:
            path = self._log_path(session_id, create=False)
            self._append(path, _turn_record(session_id, turn))

    def save(self, session: GameSession) -> None:
        """Whole-session save: append any unpersisted turns, then a meta record."""
        with self._lock:
            path = self._log_path(session.id, create=True)
            persisted_turns = 0
            if path.exists():
                for record in _iter_records(path):
                    if record.get("kind") == "turn":
                        persisted_turns += 1
            for turn in session.turns[persisted_turns:]:
                self._append(path, _turn_record(session.id, turn))
            self._append(path, _meta_record(session))

    # -- reads ---------------------------------------------------------------

    def load(self, session_id: str, *, recover: bool = False) -> GameSession:
        """Replay a session log.

        With recover=False any truncated or corrupt record raises
        IntegrityError. With recover=True the intact prefix is used, which
        is how the server restores state after a crash.
        """
        path = self._log_path(session_id, create=False)
        if not path.exists():
            raise NotFoundError(f"missing log file for session {session_id!r}")

        meta: Optional[dict] = None
        turns: list[StoryTurn] = []
        error: Optional[IntegrityError] = None
        try:
            for record in _iter_records(path):
                if record.get("kind") == "meta":
                    meta = record
                elif record.get("kind") == "turn":
                    turns.append(StoryTurn.from_dict(record["turn"]))
        except IntegrityError as exc:
            if not recover:
                raise
            error = exc

        if meta is None:
            if error is not None:
                raise error
            raise IntegrityError("log contains no meta record", offset=0, record_index=0)

        initial = CharacterState.from_dict(meta["initial_state"])
        session = GameSession(
            id=meta["session_id"],
            profile=CharacterProfile.from_dict(meta["profile"]),
            environments=[Environment.from_dict(e) for e in meta["environments"]],
            turns=turns,
            initial_state=initial,
            current_state=turns[-1].state_after if turns else initial,
            created_at=meta["created_at"],
            updated_at=meta["updated_at"],
            plan_overrides=meta.get("plan_overrides", {}),
        )
        return session


def save_session(session: GameSession, store: SessionStore) -> None:
    store.save(session)


def load_session(store: SessionStore, session_id: str, *, recover: bool = False) -> GameSession:
    return store.load(session_id, recover=recover)

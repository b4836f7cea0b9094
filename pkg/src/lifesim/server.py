"""HTTP game server.

Versioned JSON API under /v1: create a session (the world model plays
the opening turn), post player turns, read session state, environments,
health, and latency metrics. One turn may run per session at a time; a
second concurrent post gets 409 instead of queueing. Every turn post
carries a client idempotency token, and replaying a token returns the
already-executed turn without touching the models again.

Persistence order per turn: meta first when the turn created a new
environment, then the turn record, then meta again. Every prefix of the
log is a loadable state, so a crash at any point loses at most the
in-flight turn, and a completed turn is always recoverable.
"""

from __future__ import annotations

import json
import logging
import statistics
import threading
import time
import uuid
from collections import deque
from pathlib import Path
from typing import Optional

from fastapi import APIRouter, FastAPI, Query, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from lifesim import kernels
from lifesim.config import AppConfig, build_image_client, build_provider
from lifesim.errors import (
    IntegrityError,
    LifesimError,
    NotFoundError,
    ValidationError,
)
from lifesim.imaging import OVERRIDABLE_FIELDS
from lifesim.pipeline import LatencyBreakdown, execute_turn
from lifesim.protocol import WorldPromptTemplate
from lifesim.state import (
    CharacterProfile,
    CharacterState,
    Environment,
    GameSession,
    StoryTurn,
    new_session,
)
from lifesim.store import SessionStore

_STAGES = ("llm_ms", "parse_ms", "image_ms", "overhead_ms", "total_ms")


def _percentile(values: list[int], pct: float) -> float:
    """Nearest-rank percentile; values need not be sorted."""
    if not values:
        return 0.0
    ordered = sorted(values)
    rank = max(1, -(-len(ordered) * pct // 100))  # ceil without math import
    return float(ordered[int(rank) - 1])


class MetricsWindow:
    """Sliding window of per-turn latency breakdowns."""

    def __init__(self, window: int):
        self._breakdowns: deque[LatencyBreakdown] = deque(maxlen=window)
        self._lock = threading.Lock()
        self.turns_total = 0

    def add(self, breakdown: LatencyBreakdown) -> None:
        with self._lock:
            self._breakdowns.append(breakdown)
            self.turns_total += 1

    def report(self, target_ms: int) -> dict:
        with self._lock:
            rows = list(self._breakdowns)
        stages = {}
        for stage in _STAGES:
            values = [getattr(b, stage) for b in rows]
            stages[stage] = {
                "p50": _percentile(values, 50),
                "p95": _percentile(values, 95),
            }
        return {
            "window": len(rows),
            "turns_total": self.turns_total,
            "target_ms": target_ms,
            "within_target": bool(
                rows and stages["total_ms"]["p95"] <= target_ms
            ),
            "stages": stages,
        }


class _JsonLines(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        return record.getMessage()


def _build_logger() -> logging.Logger:
    logger = logging.getLogger("lifesim.server")
    if not logger.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(_JsonLines())
        logger.addHandler(handler)
        logger.setLevel(logging.INFO)
        logger.propagate = False
    return logger


class GameService:
    """Everything behind the routes: session cache, locks, idempotency
    tokens, persistence, metrics. One instance per app."""

    def __init__(
        self,
        config: Optional[AppConfig] = None,
        *,
        world_provider=None,
        image_client=None,
        store: Optional[SessionStore] = None,
    ):
        self.config = config or AppConfig()
        self.store = store or SessionStore(Path(self.config.server.data_dir))
        self.world_provider = world_provider or build_provider(self.config, "world_model")
        self.image_client = image_client or build_image_client(self.config)
        self.template = WorldPromptTemplate.load(
            self.config.server.templates_dir, self.config.server.history_window
        )
        self.metrics = MetricsWindow(self.config.server.metrics_window)
        self.logger = _build_logger()
        self._sessions: dict[str, GameSession] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._tokens: dict[str, dict[str, int]] = {}
        self._registry_lock = threading.Lock()

    # -- plumbing -------------------------------------------------------------

    def log_event(self, event: str, **fields) -> None:
        line = {"event": event, "ts": time.time(), **fields}
        self.logger.info(json.dumps(line, sort_keys=True))

    def _lock_for(self, session_id: str) -> threading.Lock:
        with self._registry_lock:
            if session_id not in self._locks:
                self._locks[session_id] = threading.Lock()
            return self._locks[session_id]

    def _index_tokens(self, session: GameSession) -> dict[str, int]:
        return {
            turn.client_token: turn.round_index
            for turn in session.turns
            if turn.client_token
        }

    def get_session(self, session_id: str) -> GameSession:
        """Cached session, loading (and crash-recovering) from disk on miss."""
        with self._registry_lock:
            cached = self._sessions.get(session_id)
        if cached is not None:
            return cached
        session = self.store.load(session_id, recover=True)
        with self._registry_lock:
            self._sessions.setdefault(session_id, session)
            self._tokens.setdefault(session_id, self._index_tokens(session))
            return self._sessions[session_id]

    def _persist_turn(self, session: GameSession, created_env: bool) -> None:
        if created_env:
            # Make the environment durable before the turn that cites it.
            self.store.write_meta(session)
        self.store.save(session)

    def request_factory(self):
        return self.config.role("world_model").request

    # -- operations -------------------------------------------------------------

    def create_session(
        self,
        profile: CharacterProfile,
        environments: list[Environment],
        plan_overrides: dict,
        trace_id: str,
    ) -> tuple[GameSession, StoryTurn, LatencyBreakdown]:
        session = new_session(profile, environments=environments)
        session.plan_overrides = plan_overrides
        outcome = execute_turn(
            session,
            "",
            world_provider=self.world_provider,
            image_client=self.image_client,
            template=self.template,
            plan_defaults=self.config.plan,
            request_factory=self.request_factory(),
        )
        self.store.write_meta(session)
        self.store.save(session)
        with self._registry_lock:
            self._sessions[session.id] = session
            self._tokens[session.id] = {}
        self.metrics.add(outcome.breakdown)
        self.log_event(
            "session_created",
            trace_id=trace_id,
            session_id=session.id,
            environments=len(session.environments),
            total_ms=outcome.breakdown.total_ms,
        )
        return session, outcome.turn, outcome.breakdown

    def run_turn(
        self, session_id: str, user_input: str, client_token: str, trace_id: str
    ) -> tuple[GameSession, StoryTurn, Optional[LatencyBreakdown], bool]:
        """Execute or replay one turn. Returns (session, turn, breakdown,
        replayed). Raises TurnInFlight when the session is busy."""
        session = self.get_session(session_id)
        tokens = self._tokens.setdefault(session_id, {})
        if client_token in tokens:
            return session, session.turns[tokens[client_token]], None, True

        lock = self._lock_for(session_id)
        if not lock.acquire(blocking=False):
            raise TurnInFlight(session_id)
        try:
            # Re-check under the lock: the token may have landed while
            # this request waited to fail the acquire.
            if client_token in tokens:
                return session, session.turns[tokens[client_token]], None, True
            outcome = execute_turn(
                session,
                user_input,
                world_provider=self.world_provider,
                image_client=self.image_client,
                template=self.template,
                plan_defaults=self.config.plan,
                request_factory=self.request_factory(),
                client_token=client_token,
            )
            self._persist_turn(session, outcome.environment_created)
            tokens[client_token] = outcome.turn.round_index
            self.metrics.add(outcome.breakdown)
            self.log_event(
                "turn_completed",
                trace_id=trace_id,
                session_id=session_id,
                round_index=outcome.turn.round_index,
                environment_id=outcome.turn.environment_id,
                bind=outcome.bind_outcome.value,
                llm_ms=outcome.breakdown.llm_ms,
                parse_ms=outcome.breakdown.parse_ms,
                image_ms=outcome.breakdown.image_ms,
                total_ms=outcome.breakdown.total_ms,
            )
            return session, outcome.turn, outcome.breakdown, False
        finally:
            lock.release()


class TurnInFlight(LifesimError):
    def __init__(self, session_id: str):
        super().__init__(f"a turn is already executing for session {session_id}")


# -- request decoding -----------------------------------------------------------


def _bad_request(message: str, fields: Optional[list[str]] = None) -> JSONResponse:
    return JSONResponse(
        status_code=400, content={"error": message, "fields": fields or []}
    )


def _decode_profile(payload: dict) -> CharacterProfile:
    profile_data = payload.get("profile")
    if not isinstance(profile_data, dict):
        raise ValidationError("profile", "must be an object")
    profile = CharacterProfile(
        name=str(profile_data.get("name", "")).strip(),
        descriptor=str(profile_data.get("descriptor", "")).strip(),
        personality=str(profile_data.get("personality", "")).strip(),
        special_token=str(profile_data.get("special_token", "sks")).strip() or "sks",
    )
    profile.validate()
    return profile


def _decode_environments(payload: dict) -> list[Environment]:
    items = payload.get("environments") or []
    if not isinstance(items, list):
        raise ValidationError("environments", "must be a list")
    envs = []
    for item in items:
        if not isinstance(item, dict):
            raise ValidationError("environments", "each environment must be an object")
        name = str(item.get("name", "")).strip()
        if not name:
            raise ValidationError("environments", "environment name must be non-empty")
        envs.append(Environment.create(name=name, description=str(item.get("description", ""))))
    return envs


def _decode_overrides(payload: dict) -> dict:
    overrides = payload.get("plan_overrides") or {}
    if not isinstance(overrides, dict):
        raise ValidationError("plan_overrides", "must be an object")
    unknown = set(overrides) - set(OVERRIDABLE_FIELDS)
    if unknown:
        raise ValidationError("plan_overrides", f"unknown keys: {sorted(unknown)}")
    return overrides


def _session_view(session: GameSession) -> dict:
    return {
        "session_id": session.id,
        "profile": session.profile.as_dict(),
        "state": session.current_state.as_dict(),
        "initial_state": session.initial_state.as_dict(),
        "turn_count": len(session.turns),
        "environments": [env.as_dict() for env in session.environments],
        "created_at": session.created_at,
        "updated_at": session.updated_at,
    }


def create_app(
    config: Optional[AppConfig] = None,
    *,
    world_provider=None,
    image_client=None,
    store: Optional[SessionStore] = None,
) -> FastAPI:
    """Build the FastAPI app. Providers and store are injectable so tests
    can pin scripted models and temporary directories."""
    service = GameService(
        config, world_provider=world_provider, image_client=image_client, store=store
    )
    app = FastAPI(title="lifesim", docs_url=None, redoc_url=None)
    app.state.service = service
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    router = APIRouter(prefix="/v1")

    @router.post("/sessions")
    async def post_session(request: Request):
        trace_id = uuid.uuid4().hex[:12]
        try:
            payload = await request.json()
        except json.JSONDecodeError:
            return _bad_request("body must be JSON")
        if not isinstance(payload, dict):
            return _bad_request("body must be a JSON object")
        try:
            profile = _decode_profile(payload)
            environments = _decode_environments(payload)
            overrides = _decode_overrides(payload)
        except ValidationError as exc:
            return _bad_request(str(exc), fields=[exc.field])
        try:
            session, turn, breakdown = service.create_session(
                profile, environments, overrides, trace_id
            )
        except LifesimError as exc:
            service.log_event("session_create_failed", trace_id=trace_id, error=str(exc))
            return JSONResponse(
                status_code=502, content={"error": str(exc), "trace_id": trace_id}
            )
        body = _session_view(session)
        body["turn"] = turn.as_dict()
        body["latency"] = breakdown.as_dict()
        return JSONResponse(status_code=201, content=body)

    @router.post("/sessions/{session_id}/turns")
    async def post_turn(session_id: str, request: Request):
        trace_id = uuid.uuid4().hex[:12]
        try:
            payload = await request.json()
        except json.JSONDecodeError:
            return _bad_request("body must be JSON")
        user_input = str(payload.get("user_input", "")).strip()
        client_token = str(payload.get("client_turn_token", "")).strip()
        if not user_input:
            return _bad_request("user_input must be non-empty", fields=["user_input"])
        if not client_token:
            return _bad_request(
                "client_turn_token is required", fields=["client_turn_token"]
            )
        try:
            session, turn, breakdown, replayed = service.run_turn(
                session_id, user_input, client_token, trace_id
            )
        except NotFoundError:
            return JSONResponse(status_code=404, content={"error": "unknown session"})
        except TurnInFlight as exc:
            return JSONResponse(status_code=409, content={"error": str(exc)})
        except LifesimError as exc:
            service.log_event(
                "turn_failed", trace_id=trace_id, session_id=session_id, error=str(exc)
            )
            return JSONResponse(
                status_code=502, content={"error": str(exc), "trace_id": trace_id}
            )
        return {
            "session_id": session.id,
            "turn": turn.as_dict(),
            "state": turn.state_after.as_dict(),
            "latency": breakdown.as_dict() if breakdown else {"total_ms": turn.latency_ms},
            "replayed": replayed,
        }

    @router.get("/sessions/{session_id}")
    async def get_session(session_id: str):
        try:
            session = service.get_session(session_id)
        except (NotFoundError, IntegrityError):
            return JSONResponse(status_code=404, content={"error": "unknown session"})
        return _session_view(session)

    @router.get("/sessions/{session_id}/turns")
    async def get_turns(
        session_id: str,
        from_index: int = Query(0, alias="from"),
        to_index: Optional[int] = Query(None, alias="to"),
    ):
        try:
            session = service.get_session(session_id)
        except (NotFoundError, IntegrityError):
            return JSONResponse(status_code=404, content={"error": "unknown session"})
        end = len(session.turns) if to_index is None else to_index
        if from_index < 0 or end < from_index:
            return _bad_request("invalid turn range", fields=["from", "to"])
        return {
            "session_id": session.id,
            "turns": [turn.as_dict() for turn in session.turns[from_index:end]],
            "turn_count": len(session.turns),
        }

    @router.get("/sessions/{session_id}/environments")
    async def get_environments(session_id: str):
        try:
            session = service.get_session(session_id)
        except (NotFoundError, IntegrityError):
            return JSONResponse(status_code=404, content={"error": "unknown session"})
        return {
            "session_id": session.id,
            "environments": [env.as_dict() for env in session.environments],
        }

    @router.get("/healthz")
    async def healthz():
        return {
            "status": "ok",
            "provider_mode": service.config.provider_mode,
            "kernel_backend": kernels.BACKEND,
        }

    @router.get("/metrics")
    async def metrics():
        return service.metrics.report(service.config.server.latency_target_ms)

    app.include_router(router)
    return app


def run_server(config: AppConfig, port: int = 8000, host: str = "127.0.0.1") -> None:
    import uvicorn

    app = create_app(config)
    uvicorn.run(app, host=host, port=port, log_level="warning")

"""Character, environment, and session domain model.

Single source of truth for the four-meter character state and the session
history every other module reads and writes. State values are plain data;
mutation is single-writer per session (the server serializes writes).
"""

from __future__ import annotations

import uuid
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from typing import Iterable, Optional

from lifesim.errors import SequencingError, UnknownEnvironmentError, ValidationError

METER_MIN = 0
METER_MAX = 100
DEFAULT_METER = 70  # unstated upstream; leaves headroom both ways

METERS = ("hunger", "energy", "fun", "hygiene")


def _now_iso() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


def clamp_meter(value: int) -> int:
    return max(METER_MIN, min(METER_MAX, value))


def _check_meter(name: str, value: object) -> None:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValidationError(name, f"meter must be an integer, got {value!r}")
    if not METER_MIN <= value <= METER_MAX:
        raise ValidationError(name, f"meter {value} outside [{METER_MIN}, {METER_MAX}]")


@dataclass(frozen=True)
class CharacterState:
    """The four bounded game meters. Immutable; operations return copies."""

    hunger: int = DEFAULT_METER
    energy: int = DEFAULT_METER
    fun: int = DEFAULT_METER
    hygiene: int = DEFAULT_METER

    def __post_init__(self):
        for name in METERS:
            _check_meter(name, getattr(self, name))

    def as_dict(self) -> dict[str, int]:
        return {name: getattr(self, name) for name in METERS}

    @classmethod
    def from_dict(cls, data: dict) -> "CharacterState":
        return cls(**{name: data[name] for name in METERS})


@dataclass(frozen=True)
class StateDelta:
    """Signed per-meter adjustment; any magnitude, clamping absorbs it."""

    hunger: int = 0
    energy: int = 0
    fun: int = 0
    hygiene: int = 0

    def as_dict(self) -> dict[str, int]:
        return {name: getattr(self, name) for name in METERS}


def apply_state_delta(state: CharacterState, delta: StateDelta) -> CharacterState:
    """Clamped meter update; the input state is never mutated."""
    return CharacterState(
        **{name: clamp_meter(getattr(state, name) + getattr(delta, name)) for name in METERS}
    )


@dataclass(frozen=True)
class CharacterProfile:
    """Player-authored character identity.

    `special_token` is the rare identifier prepended to the character in
    diffusion prompts ("sks" by default; templates show it as "[V]").
    """

    name: str
    descriptor: str = ""
    personality: str = ""
    special_token: str = "sks"

    def validate(self) -> None:
        if not self.name or not self.name.strip():
            raise ValidationError("name", "must be non-empty")
        if not self.special_token:
            raise ValidationError("special_token", "must be non-empty")
        if any(ch.isspace() for ch in self.special_token):
            raise ValidationError("special_token", "must not contain whitespace")

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "descriptor": self.descriptor,
            "personality": self.personality,
            "special_token": self.special_token,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CharacterProfile":
        return cls(
            name=data["name"],
            descriptor=data.get("descriptor", ""),
            personality=data.get("personality", ""),
            special_token=data.get("special_token", "sks"),
        )


@dataclass
class Environment:
    """A named place the character can inhabit.

    `reference_image` is a content-addressed asset reference filled in the
    first time the image service renders this environment.
    """

    id: str
    name: str
    description: str = ""
    reference_image: Optional[str] = None

    @classmethod
    def create(cls, name: str, description: str = "") -> "Environment":
        return cls(id="env-" + uuid.uuid4().hex[:12], name=name, description=description or name)

    def as_dict(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "description": self.description,
            "reference_image": self.reference_image,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Environment":
        return cls(
            id=data["id"],
            name=data["name"],
            description=data.get("description", ""),
            reference_image=data.get("reference_image"),
        )


@dataclass(frozen=True)
class StoryTurn:
    """One resolved game round.

    `client_token` is the idempotency key the turn was submitted under
    (None for the server-initiated setup turn); persisting it lets a
    restarted server answer replays of already-executed turns.
    """

    round_index: int
    user_input: str
    narrative: str
    image_prompt: str
    environment_id: str
    state_after: CharacterState
    image_ref: Optional[str] = None
    latency_ms: int = 0
    client_token: Optional[str] = None

    def as_dict(self) -> dict:
        return {
            "round_index": self.round_index,
            "user_input": self.user_input,
            "narrative": self.narrative,
            "image_prompt": self.image_prompt,
            "environment_id": self.environment_id,
            "state_after": self.state_after.as_dict(),
            "image_ref": self.image_ref,
            "latency_ms": self.latency_ms,
            "client_token": self.client_token,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "StoryTurn":
        return cls(
            round_index=data["round_index"],
            user_input=data["user_input"],
            narrative=data["narrative"],
            image_prompt=data["image_prompt"],
            environment_id=data["environment_id"],
            state_after=CharacterState.from_dict(data["state_after"]),
            image_ref=data.get("image_ref"),
            latency_ms=data.get("latency_ms", 0),
            client_token=data.get("client_token"),
        )


@dataclass
class GameSession:
    """Persistence unit: profile, environment registry, ordered turn history."""

    id: str
    profile: CharacterProfile
    environments: list[Environment]
    turns: list[StoryTurn]
    initial_state: CharacterState
    current_state: CharacterState
    created_at: str
    updated_at: str
    plan_overrides: dict = field(default_factory=dict)

    def environment_by_id(self, env_id: str) -> Optional[Environment]:
        for env in self.environments:
            if env.id == env_id:
                return env
        return None

    def register_environment(self, env: Environment) -> None:
        if self.environment_by_id(env.id) is not None:
            raise ValidationError("environments", f"duplicate environment id {env.id!r}")
        self.environments.append(env)
        self.updated_at = _now_iso()


def new_session(
    profile: CharacterProfile,
    initial_state: Optional[CharacterState] = None,
    environments: Iterable[Environment] = (),
) -> GameSession:
    """Fresh session with an empty turn list and contiguous-from-0 numbering."""
    profile.validate()
    envs = list(environments)
    seen: set[str] = set()
    for env in envs:
        if not env.name or not env.name.strip():
            raise ValidationError("environments", "environment name must be non-empty")
        if env.id in seen:
            raise ValidationError("environments", f"duplicate environment id {env.id!r}")
        seen.add(env.id)
    state = initial_state if initial_state is not None else CharacterState()
    now = _now_iso()
    return GameSession(
        id="sess-" + uuid.uuid4().hex[:16],
        profile=profile,
        environments=envs,
        turns=[],
        initial_state=state,
        current_state=state,
        created_at=now,
        updated_at=now,
    )


def append_turn(session: GameSession, turn: StoryTurn) -> GameSession:
    """Append the next turn; round indices must stay contiguous from 0."""
    expected = len(session.turns)
    if turn.round_index != expected:
        raise SequencingError(
            f"round_index {turn.round_index} != expected {expected} for session {session.id}"
        )
    if session.environment_by_id(turn.environment_id) is None:
        raise UnknownEnvironmentError(
            f"environment {turn.environment_id!r} not registered in session {session.id}"
        )
    session.turns.append(turn)
    session.current_state = turn.state_after
    session.updated_at = _now_iso()
    return session


def snapshot_state(session: GameSession) -> CharacterState:
    """Read-side copy of the current meters (frozen, safe to share)."""
    return replace(session.current_state)

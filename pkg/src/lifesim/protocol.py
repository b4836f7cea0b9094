"""Contract between the game and the world-simulation model.

Covers the four duties the world model owes the engine: environment
binding, coherent story output, meter bookkeeping, and diffusion-prompt
rewriting. Everything here is a pure function over its inputs; network
I/O lives in lifesim.providers and lifesim.pipeline.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence, Union

from lifesim.errors import (
    BindingError,
    MeterValueError,
    ResponseFormatError,
    ResponseParseError,
    TemplateError,
)
from lifesim.state import (
    METERS,
    CharacterProfile,
    CharacterState,
    Environment,
    GameSession,
    StateDelta,
    apply_state_delta,
)

TEMPLATE_ROLES = ("world", "user", "judge", "topic")

# The structured-output grammar the parser accepts. Baked into every world
# prompt so the model and parser stay in lockstep.
FORMAT_INSTRUCTIONS = """Respond with a single fenced JSON object and nothing else:

```json
{
  "narrative": "two to four sentences of story, present tense",
  "action": "what the character does, one sentence",
  "state": {"mode": "absolute", "hunger": 0, "energy": 0, "fun": 0, "hygiene": 0},
  "environment": "name of the environment the character is now in",
  "image_prompt": "one sentence describing the scene for an illustrator, naming the character"
}
```

The "state" object always carries a "mode" key: mode "absolute" means the four values are the new meter readings (0 to 100); mode "delta" means they are signed adjustments to the current readings. Integers only."""

SINGLE_STORYLINE_CONSTRAINT = (
    "Advance exactly one storyline in this reply. Do not offer alternatives, "
    "branches, or menus of options; stop at a natural point where the player "
    "can steer what happens next."
)

_PLACEHOLDER = re.compile(r"\{([a-z][a-z0-9_]*)\}")
_FENCE = re.compile(r"```(?:json)?\s*\n(.*?)```", re.DOTALL)


def render_template(template: str, mapping: dict[str, str]) -> str:
    """Substitute {placeholder} markers; any marker left unresolved is an error."""

    def _sub(match: re.Match) -> str:
        key = match.group(1)
        if key not in mapping:
            raise TemplateError(key)
        return str(mapping[key])

    return _PLACEHOLDER.sub(_sub, template)


def load_template_text(role: str, templates_dir: Optional[Path | str] = None) -> str:
    """Read one role template, preferring an override directory over package defaults."""
    if role not in TEMPLATE_ROLES:
        raise TemplateError(role)
    if templates_dir is not None:
        candidate = Path(templates_dir) / f"{role}.txt"
        if candidate.exists():
            return candidate.read_text("utf-8")
    return resources.files("lifesim.templates").joinpath(f"{role}.txt").read_text("utf-8")


@dataclass
class WorldPromptTemplate:
    """World-model prompt assembly: preamble plus the fixed contract clauses."""

    system_preamble: str
    history_window: int = 5
    state_format_instructions: str = FORMAT_INSTRUCTIONS
    constraint_clauses: str = SINGLE_STORYLINE_CONSTRAINT

    @classmethod
    def load(
        cls, templates_dir: Optional[Path | str] = None, history_window: int = 5
    ) -> "WorldPromptTemplate":
        return cls(
            system_preamble=load_template_text("world", templates_dir),
            history_window=history_window,
        )


# --- prompt assembly ---------------------------------------------------------


def render_profile(profile: CharacterProfile) -> str:
    lines = [f"Name: {profile.name}"]
    if profile.descriptor:
        lines.append(f"Appearance: {profile.descriptor}")
    if profile.personality:
        lines.append(f"Personality: {profile.personality}")
    return "\n".join(lines)


def render_state(state: CharacterState) -> str:
    return ", ".join(f"{name}={getattr(state, name)}" for name in METERS)


def render_environments(environments: Sequence[Environment]) -> str:
    if not environments:
        return "(none yet; name the first one)"
    return "\n".join(f"- {env.name}: {env.description}" for env in environments)


def render_history(session: GameSession, window: int) -> str:
    turns = session.turns[-window:] if window > 0 else []
    if not turns:
        return "(the game is about to begin)"
    parts = []
    for turn in turns:
        player = turn.user_input if turn.user_input else "(game start)"
        parts.append(f"[round {turn.round_index}] Player: {player}\nWorld: {turn.narrative}")
    return "\n".join(parts)


def build_world_prompt(
    session: GameSession, user_input: str, template: WorldPromptTemplate
) -> str:
    """Full world-model prompt for the next turn of a live session."""
    mapping = {
        "profile": render_profile(session.profile),
        "state": render_state(session.current_state),
        "environments": render_environments(session.environments),
        "history": render_history(session, template.history_window),
        "user_input": user_input if user_input else "(none; set up the game and open the story)",
        "constraint": template.constraint_clauses,
        "format_instructions": template.state_format_instructions,
    }
    return render_template(template.system_preamble, mapping)


def build_collection_world_prompt(
    template: WorldPromptTemplate,
    *,
    topic: str,
    character: str,
    state: CharacterState,
    environments_text: str,
    history_text: str,
    user_input: str,
) -> str:
    """World prompt for data-collection sessions, where the game is seeded by a
    topic/character pair instead of a stored session."""
    mapping = {
        "profile": f"Topic: {topic}\nCharacter: {character}",
        "state": render_state(state),
        "environments": environments_text or "(none yet; name the first one)",
        "history": history_text or "(the game is about to begin)",
        "user_input": user_input if user_input else "(none; set up the game and open the story)",
        "constraint": template.constraint_clauses,
        "format_instructions": template.state_format_instructions,
    }
    return render_template(template.system_preamble, mapping)


# --- response parsing --------------------------------------------------------


@dataclass(frozen=True)
class AbsoluteState:
    """Target meter readings; applied as (target - current) so clamping rules."""

    hunger: int
    energy: int
    fun: int
    hygiene: int


@dataclass(frozen=True)
class DeltaState:
    delta: StateDelta


StateUpdate = Union[AbsoluteState, DeltaState]


@dataclass(frozen=True)
class ParsedTurn:
    """Structured world-model output for one round."""

    narrative: str
    character_action: str
    state_update: StateUpdate
    environment_name: str
    image_description: str


_REQUIRED_KEYS = ("narrative", "action", "state", "environment", "image_prompt")


def _meter_int(axis: str, value: object) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise MeterValueError(axis, value)
    return value


def parse_world_response(raw: str) -> ParsedTurn:
    """Decode a world-model reply into a ParsedTurn.

    Accepts a fenced JSON object; chatter outside the fence is discarded.
    The state object must name its mode explicitly ("absolute" or
    "delta"); the variant is never guessed from the values.
    """
    payload = None
    for match in _FENCE.finditer(raw):
        try:
            candidate = json.loads(match.group(1))
        except json.JSONDecodeError:
            continue
        if isinstance(candidate, dict):
            payload = candidate
            break
    if payload is None:
        raise ResponseFormatError(raw)

    missing = [key for key in _REQUIRED_KEYS if key not in payload]
    if missing:
        raise ResponseParseError(missing)

    state_obj = payload["state"]
    if not isinstance(state_obj, dict):
        raise ResponseParseError(["state"])
    missing_state = [f"state.{name}" for name in METERS if name not in state_obj]
    mode = state_obj.get("mode")
    if mode not in ("absolute", "delta"):
        missing_state.insert(0, "state.mode")
    if missing_state:
        raise ResponseParseError(missing_state)

    meters = {name: _meter_int(name, state_obj[name]) for name in METERS}
    update: StateUpdate
    if mode == "absolute":
        update = AbsoluteState(**meters)
    else:
        update = DeltaState(StateDelta(**meters))

    return ParsedTurn(
        narrative=str(payload["narrative"]),
        character_action=str(payload["action"]),
        state_update=update,
        environment_name=str(payload["environment"]),
        image_description=str(payload["image_prompt"]),
    )


def resolve_state_update(update: StateUpdate, current: CharacterState) -> CharacterState:
    """Normalize either update variant into the next clamped state."""
    if isinstance(update, AbsoluteState):
        delta = StateDelta(
            **{name: getattr(update, name) - getattr(current, name) for name in METERS}
        )
    else:
        delta = update.delta
    return apply_state_delta(current, delta)


# --- environment binding -----------------------------------------------------


class BindOutcome(Enum):
    EXACT = "exact"
    NORMALIZED = "normalized"
    FUZZY = "fuzzy"
    CREATED = "created"


JACCARD_THRESHOLD = 0.5


def _normalize(text: str) -> str:
    stripped = re.sub(r"[^\w\s]", "", text.lower())
    return " ".join(stripped.split())


def _token_set(text: str) -> set[str]:
    return set(re.findall(r"[a-z0-9]+", text.lower()))


def jaccard(a: set[str], b: set[str]) -> float:
    if not a or not b:
        return 0.0
    return len(a & b) / len(a | b)


def bind_environment(
    environment_name: str, registry: list[Environment]
) -> tuple[str, BindOutcome]:
    """Resolve a narrated environment name against the registry.

    Ladder: exact name match, then normalized match, then token-overlap
    Jaccard >= 0.5 (best score, ties to earliest entry), else a new
    environment is created and appended to the registry.
    """
    if not environment_name or not environment_name.strip():
        raise BindingError("environment name is empty")

    for env in registry:
        if env.name == environment_name:
            return env.id, BindOutcome.EXACT

    wanted = _normalize(environment_name)
    for env in registry:
        if _normalize(env.name) == wanted:
            return env.id, BindOutcome.NORMALIZED

    tokens = _token_set(environment_name)
    best: Optional[Environment] = None
    best_score = 0.0
    for env in registry:
        score = jaccard(tokens, _token_set(env.name))
        if score > best_score:  # strict: ties keep the earliest entry
            best = env
            best_score = score
    if best is not None and best_score >= JACCARD_THRESHOLD:
        return best.id, BindOutcome.FUZZY

    created = Environment.create(name=environment_name.strip())
    registry.append(created)
    return created.id, BindOutcome.CREATED


# --- diffusion prompt rewriting ----------------------------------------------


def rewrite_image_prompt(
    parsed: ParsedTurn, profile: CharacterProfile, env: Environment
) -> str:
    """Rewrite a narrated scene into a diffusion prompt.

    The character name becomes the special-token subject ("<token>
    <descriptor>"), later mentions get a definite article, and the prompt
    is anchored to the bound environment description. Applying this twice
    is the same as applying it once.
    """
    text = parsed.image_description.strip()
    if text.endswith("."):
        text = text[:-1]

    subject = profile.descriptor.strip() or profile.name
    canonical = f"{profile.special_token} {subject}"

    name_re = re.compile(rf"\b{re.escape(profile.name)}\b", re.IGNORECASE)
    # Chunks equal to the canonical phrase are already rewritten; never
    # touch them (keeps the empty-descriptor fallback idempotent).
    parts = re.split(f"({re.escape(canonical)})", text)
    replaced_first = canonical in text
    out: list[str] = []
    for part in parts:
        if part == canonical:
            out.append(part)
            continue

        def _sub(match: re.Match) -> str:
            nonlocal replaced_first
            if not replaced_first:
                replaced_first = True
                return canonical
            return f"the {canonical}"

        out.append(name_re.sub(_sub, part))
    text = "".join(out)

    if canonical not in text:
        text = f"{canonical}, {text}" if text else canonical

    clause_target = env.description.strip() or env.name
    if clause_target.lower() not in text.lower():
        text = f"{text}, in {clause_target}"
    return text

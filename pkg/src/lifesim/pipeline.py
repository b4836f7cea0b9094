"""Turn execution pipeline.

One function drives a full game round: prompt the world model, parse
and validate its reply (with a bounded re-ask on malformed output),
bind the narrated environment, apply the state update, build and send
the image request, and append the finished turn to the session. The
server and the offline CLI both call this; neither reimplements the
sequence.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Optional

from lifesim.errors import (
    MeterValueError,
    ResponseFormatError,
    ResponseParseError,
)
from lifesim.imaging import (
    ConditioningPlan,
    ImageResult,
    PlanDefaults,
    build_plan,
    register_first_visit,
)
from lifesim.protocol import (
    BindOutcome,
    ParsedTurn,
    WorldPromptTemplate,
    bind_environment,
    build_world_prompt,
    parse_world_response,
    resolve_state_update,
)
from lifesim.providers import ChatRequest, simple_request
from lifesim.state import GameSession, StoryTurn, append_turn

_PARSE_FAILURES = (ResponseFormatError, ResponseParseError, MeterValueError)

# Appended to the prompt when the model's previous reply would not parse.
_FORMAT_REMINDER = "\n\nYour previous reply was not valid. Respond only with the fenced JSON object, nothing else."


@dataclass(frozen=True)
class LatencyBreakdown:
    """Per-stage wall-clock cost of one turn, in milliseconds."""

    llm_ms: int
    parse_ms: int
    image_ms: int
    overhead_ms: int
    total_ms: int

    def as_dict(self) -> dict[str, int]:
        return {
            "llm_ms": self.llm_ms,
            "parse_ms": self.parse_ms,
            "image_ms": self.image_ms,
            "overhead_ms": self.overhead_ms,
            "total_ms": self.total_ms,
        }


@dataclass(frozen=True)
class WorldReply:
    parsed: ParsedTurn
    raw_text: str
    llm_ms: int
    parse_ms: int
    parse_retries: int


def complete_and_parse(
    provider,
    prompt: str,
    *,
    request_factory: Optional[Callable[[str], ChatRequest]] = None,
    parse_retry_limit: int = 1,
) -> WorldReply:
    """Ask the world model and decode its reply.

    A reply that fails to parse triggers one re-ask (configurable) with
    an explicit format reminder appended; after that the parse error
    propagates to the caller."""
    make_request = request_factory or (lambda text: simple_request(text, model="world-sim"))
    llm_ms = 0
    parse_ms = 0
    retries = 0
    attempt_prompt = prompt
    while True:
        t0 = time.perf_counter()
        reply = provider.complete(make_request(attempt_prompt))
        llm_ms += int((time.perf_counter() - t0) * 1000)
        t1 = time.perf_counter()
        try:
            parsed = parse_world_response(reply.text)
        except _PARSE_FAILURES:
            parse_ms += int((time.perf_counter() - t1) * 1000)
            if retries >= parse_retry_limit:
                raise
            retries += 1
            attempt_prompt = prompt + _FORMAT_REMINDER
            continue
        parse_ms += int((time.perf_counter() - t1) * 1000)
        return WorldReply(
            parsed=parsed,
            raw_text=reply.text,
            llm_ms=llm_ms,
            parse_ms=parse_ms,
            parse_retries=retries,
        )


@dataclass(frozen=True)
class TurnOutcome:
    turn: StoryTurn
    breakdown: LatencyBreakdown
    parsed: ParsedTurn
    plan: ConditioningPlan
    image: ImageResult
    bind_outcome: BindOutcome
    environment_created: bool


def execute_turn(
    session: GameSession,
    user_input: str,
    *,
    world_provider,
    image_client,
    template: Optional[WorldPromptTemplate] = None,
    plan_defaults: Optional[PlanDefaults] = None,
    request_factory: Optional[Callable[[str], ChatRequest]] = None,
    parse_retry_limit: int = 1,
    client_token: Optional[str] = None,
) -> TurnOutcome:
    """Run one round against the session, mutating it in place.

    The caller owns persistence and locking; this function assumes it is
    the only writer for the session while it runs. An empty user_input
    is the setup turn: the world opens the game."""
    template = template or WorldPromptTemplate.load()
    started = time.perf_counter()

    prompt = build_world_prompt(session, user_input, template)
    reply = complete_and_parse(
        world_provider,
        prompt,
        request_factory=request_factory,
        parse_retry_limit=parse_retry_limit,
    )

    env_id, bind_outcome = bind_environment(reply.parsed.environment_name, session.environments)
    env = session.environment_by_id(env_id)
    new_state = resolve_state_update(reply.parsed.state_update, session.current_state)

    plan = build_plan(session, reply.parsed, env, plan_defaults)
    t_img = time.perf_counter()
    image = image_client.generate(plan)
    image_ms = int((time.perf_counter() - t_img) * 1000)
    register_first_visit(env, plan, image)

    total_ms = int((time.perf_counter() - started) * 1000)
    breakdown = LatencyBreakdown(
        llm_ms=reply.llm_ms,
        parse_ms=reply.parse_ms,
        image_ms=image_ms,
        overhead_ms=max(0, total_ms - reply.llm_ms - reply.parse_ms - image_ms),
        total_ms=total_ms,
    )
    turn = StoryTurn(
        round_index=len(session.turns),
        user_input=user_input,
        narrative=reply.parsed.narrative,
        image_prompt=plan.prompt,
        environment_id=env_id,
        state_after=new_state,
        image_ref=image.image_ref,
        latency_ms=total_ms,
        client_token=client_token,
    )
    append_turn(session, turn)
    return TurnOutcome(
        turn=turn,
        breakdown=breakdown,
        parsed=reply.parsed,
        plan=plan,
        image=image,
        bind_outcome=bind_outcome,
        environment_created=bind_outcome is BindOutcome.CREATED,
    )

"""Conditioning plans and the image-service client.

A ConditioningPlan is the complete, serializable description of one
image request: the rewritten prompt, the merged LoRA stack, both
adapter ids, regional-fusion scales and mask ratio, block policy,
step count, and seed. The engine builds plans; an external diffusion
service (or the mock) executes them. The wire schema is versioned so a
backend can reject plans it does not understand.
"""

from __future__ import annotations

import hashlib
import json
import re
import time
from dataclasses import dataclass, field
from typing import Optional

import httpx

from lifesim.errors import (
    ConfigurationError,
    CredentialError,
    GenerationError,
    ProtocolError,
    TransportError,
    ValidationError,
)
from lifesim.fusion import DEFAULT_MASK_RATIO, BlockPolicy
from lifesim.protocol import ParsedTurn, rewrite_image_prompt
from lifesim.providers import ProviderConfig, backoff_delays_ms
from lifesim.state import Environment, GameSession

PLAN_SCHEMA_VERSION = 1

DEFAULT_LORA_MERGE = (("dreambooth", 1.0), ("lcm", 1.0))
DEFAULT_ENV_ADAPTER = "ip-adapter-plus-env"
DEFAULT_CHAR_ADAPTER = "ip-adapter-plus-face-char"
# Few-step regime; 4 keeps a quality margin over the 2-step floor.
DEFAULT_STEPS = 4

# Session-level settings allowed to override plan defaults.
OVERRIDABLE_FIELDS = ("alpha_e", "alpha_c", "r_percent", "num_inference_steps", "seed")


def _bare_subject_count(prompt: str, token: str) -> int:
    """Occurrences of the special token introducing the subject (mentions
    after the first read "the <token> ...", which does not count)."""
    pattern = re.compile(rf"(?<!\bthe )\b{re.escape(token)}\b", re.IGNORECASE)
    return len(pattern.findall(prompt))


@dataclass(frozen=True)
class ConditioningPlan:
    prompt: str
    character_adapter: str
    special_token: str = "sks"
    environment_adapter: str = DEFAULT_ENV_ADAPTER
    environment_image: Optional[str] = None
    first_visit: bool = False
    lora_merge: tuple[tuple[str, float], ...] = DEFAULT_LORA_MERGE
    alpha_e: float = 1.0
    alpha_c: float = 1.0
    r_percent: float = DEFAULT_MASK_RATIO
    block_policy: BlockPolicy = field(default_factory=BlockPolicy)
    num_inference_steps: int = DEFAULT_STEPS
    seed: Optional[int] = None

    def __post_init__(self):
        if not self.prompt.strip():
            raise ValidationError("prompt", "must be non-empty")
        if _bare_subject_count(self.prompt, self.special_token) != 1:
            raise ValidationError(
                "prompt",
                f"special token {self.special_token!r} must introduce the subject exactly once",
            )
        if not self.character_adapter:
            raise ConfigurationError("character_adapter id is not configured")
        for adapter_id, scale in self.lora_merge:
            if not adapter_id:
                raise ValidationError("lora_merge", "adapter id must be non-empty")
            if scale < 0:
                raise ValidationError("lora_merge", f"scale for {adapter_id!r} must be >= 0")
        if self.alpha_e < 0 or self.alpha_c < 0:
            raise ValidationError("alpha", "scales must be >= 0")
        if not 0 < self.r_percent <= 100:
            raise ValidationError("r_percent", f"must be in (0, 100], got {self.r_percent}")
        if self.num_inference_steps < 1:
            raise ValidationError("num_inference_steps", "must be >= 1")
        if not self.first_visit and self.environment_image is None:
            raise ValidationError(
                "environment_image", "required unless the plan flags a first visit"
            )


def serialize_plan(plan: ConditioningPlan) -> dict:
    return {
        "schema_version": PLAN_SCHEMA_VERSION,
        "prompt": plan.prompt,
        "special_token": plan.special_token,
        "character_adapter": plan.character_adapter,
        "environment_adapter": plan.environment_adapter,
        "environment_image": plan.environment_image,
        "first_visit": plan.first_visit,
        "lora_merge": [[adapter_id, scale] for adapter_id, scale in plan.lora_merge],
        "alpha_e": plan.alpha_e,
        "alpha_c": plan.alpha_c,
        "r_percent": plan.r_percent,
        "block_policy": {
            "down": plan.block_policy.down,
            "mid": plan.block_policy.mid,
            "up": plan.block_policy.up,
        },
        "num_inference_steps": plan.num_inference_steps,
        "seed": plan.seed,
    }


def parse_plan(data: dict) -> ConditioningPlan:
    version = data.get("schema_version")
    if version != PLAN_SCHEMA_VERSION:
        raise ValidationError("schema_version", f"unsupported version {version!r}")
    policy = data.get("block_policy") or {}
    return ConditioningPlan(
        prompt=data["prompt"],
        special_token=data.get("special_token", "sks"),
        character_adapter=data["character_adapter"],
        environment_adapter=data.get("environment_adapter", DEFAULT_ENV_ADAPTER),
        environment_image=data.get("environment_image"),
        first_visit=bool(data.get("first_visit", False)),
        lora_merge=tuple((item[0], float(item[1])) for item in data.get("lora_merge", [])),
        alpha_e=float(data["alpha_e"]),
        alpha_c=float(data["alpha_c"]),
        r_percent=float(data["r_percent"]),
        block_policy=BlockPolicy(
            down=policy.get("down", "no_environment"),
            mid=policy.get("mid", "regional"),
            up=policy.get("up", "regional"),
        ),
        num_inference_steps=int(data["num_inference_steps"]),
        seed=data.get("seed"),
    )


def plan_hash(plan: ConditioningPlan) -> str:
    canonical = json.dumps(serialize_plan(plan), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class PlanDefaults:
    """Deployment-wide plan settings; sessions may override a whitelist."""

    character_adapter: str = DEFAULT_CHAR_ADAPTER
    environment_adapter: str = DEFAULT_ENV_ADAPTER
    lora_merge: tuple[tuple[str, float], ...] = DEFAULT_LORA_MERGE
    alpha_e: float = 1.0
    alpha_c: float = 1.0
    r_percent: float = DEFAULT_MASK_RATIO
    num_inference_steps: int = DEFAULT_STEPS
    block_policy: BlockPolicy = field(default_factory=BlockPolicy)
    seed: Optional[int] = None


def build_plan(
    session: GameSession,
    parsed_turn: ParsedTurn,
    env: Environment,
    defaults: Optional[PlanDefaults] = None,
) -> ConditioningPlan:
    """Assemble the image request for one turn.

    Precedence: session plan_overrides beat deployment defaults. An
    environment with no reference image yet makes this a first-visit
    plan; the resulting image becomes that environment's reference."""
    defaults = defaults or PlanDefaults()
    if not defaults.character_adapter:
        raise ConfigurationError("character_adapter id is not configured")
    overrides = session.plan_overrides or {}
    unknown = set(overrides) - set(OVERRIDABLE_FIELDS)
    if unknown:
        raise ValidationError("plan_overrides", f"unknown override keys: {sorted(unknown)}")

    def pick(name: str):
        return overrides.get(name, getattr(defaults, name))

    prompt = rewrite_image_prompt(parsed_turn, session.profile, env)
    return ConditioningPlan(
        prompt=prompt,
        special_token=session.profile.special_token,
        character_adapter=defaults.character_adapter,
        environment_adapter=defaults.environment_adapter,
        environment_image=env.reference_image,
        first_visit=env.reference_image is None,
        lora_merge=defaults.lora_merge,
        alpha_e=float(pick("alpha_e")),
        alpha_c=float(pick("alpha_c")),
        r_percent=float(pick("r_percent")),
        block_policy=defaults.block_policy,
        num_inference_steps=int(pick("num_inference_steps")),
        seed=pick("seed"),
    )


@dataclass(frozen=True)
class ImageResult:
    image_ref: str
    latency_ms: int
    plan_echo: dict
    attempts: int = 1


class _Retryable(Exception):
    pass


class HttpImageClient:
    """POSTs serialized plans to the image service's /generate endpoint.
    Retry policy mirrors the chat provider: timeouts, 5xx, and 429."""

    def __init__(self, config: ProviderConfig, client: Optional[httpx.Client] = None):
        self.config = config
        self._client = client or httpx.Client()

    def _post_once(self, payload: dict) -> dict:
        import os

        headers = {"Content-Type": "application/json"}
        if self.config.api_key_env_var:
            key = os.environ.get(self.config.api_key_env_var)
            if key:
                headers["Authorization"] = f"Bearer {key}"
        url = self.config.endpoint_url.rstrip("/") + "/generate"
        try:
            response = self._client.post(url, json=payload, headers=headers, timeout=30.0)
        except httpx.TimeoutException as exc:
            raise _Retryable(f"timeout: {exc}") from exc
        except httpx.TransportError as exc:
            raise _Retryable(f"connection failure: {exc}") from exc
        if response.status_code in (401, 403):
            raise CredentialError(f"image service rejected credentials ({response.status_code})")
        if response.status_code == 429 or response.status_code >= 500:
            raise _Retryable(f"status {response.status_code}")
        if response.status_code >= 400:
            raise ProtocolError(f"image service returned {response.status_code}")
        try:
            return response.json()
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"non-JSON image-service body: {response.text[:200]}") from exc

    def generate(self, plan: ConditioningPlan) -> ImageResult:
        payload = serialize_plan(plan)
        started = time.perf_counter()
        attempts = 0
        delays = backoff_delays_ms(self.config.backoff_base_ms, self.config.max_retries)
        while True:
            attempts += 1
            try:
                data = self._post_once(payload)
                break
            except _Retryable as exc:
                if attempts > self.config.max_retries:
                    raise TransportError(str(exc), attempts=attempts) from exc
                time.sleep(delays[attempts - 1] / 1000)
        if data.get("error"):
            raise GenerationError(str(data["error"]))
        if "image_ref" not in data:
            raise ProtocolError("image-service response missing image_ref")
        latency_ms = int((time.perf_counter() - started) * 1000)
        return ImageResult(
            image_ref=str(data["image_ref"]),
            latency_ms=latency_ms,
            plan_echo=data.get("plan_echo", payload),
            attempts=attempts,
        )


class MockImageClient:
    """Answers instantly with a reference derived from the plan alone:
    identical plans (same seed included) always yield the identical ref."""

    def __init__(self):
        self.calls = 0

    def generate(self, plan: ConditioningPlan) -> ImageResult:
        started = time.perf_counter()
        self.calls += 1
        ref = "img-" + plan_hash(plan)[:16]
        latency_ms = int((time.perf_counter() - started) * 1000)
        return ImageResult(
            image_ref=ref, latency_ms=latency_ms, plan_echo=serialize_plan(plan), attempts=1
        )


def register_first_visit(env: Environment, plan: ConditioningPlan, result: ImageResult) -> None:
    """A first-visit plan's output becomes the environment's reference image."""
    if plan.first_visit and env.reference_image is None:
        env.reference_image = result.image_ref



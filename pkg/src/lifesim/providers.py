"""Chat-completion providers.

One uniform contract: `provider.complete(ChatRequest) -> ChatReply`. The
HTTP provider speaks the OpenAI-compatible chat-completions shape, which
is the de facto gateway interface for hosted and self-hosted models
alike. Mock and replay providers implement the same contract with zero
network so the whole engine runs offline and deterministically.

Secrets never live in config or transcripts: configuration names an
environment variable, and the key is read at call time only.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import httpx

from lifesim.errors import (
    CredentialError,
    ProtocolError,
    ReplayMissError,
    ScriptExhaustedError,
    TransportError,
    ValidationError,
)

_ROLES = ("system", "user", "assistant")


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[ChatMessage, ...]
    model: str = "default"
    temperature: float = 1.0
    top_p: float = 1.0
    max_tokens: int = 1024
    request_timeout_ms: int = 30_000

    def __post_init__(self):
        if not self.messages:
            raise ValidationError("messages", "must be non-empty")
        for msg in self.messages:
            if msg.role not in _ROLES:
                raise ValidationError("messages", f"unknown role {msg.role!r}")
        if self.messages[0].role not in ("system", "user"):
            raise ValidationError("messages", "first message must be system or user")
        if self.temperature < 0:
            raise ValidationError("temperature", "must be >= 0")
        if not 0 < self.top_p <= 1:
            raise ValidationError("top_p", "must be in (0, 1]")
        if self.max_tokens <= 0:
            raise ValidationError("max_tokens", "must be positive")
        if self.request_timeout_ms <= 0:
            raise ValidationError("request_timeout_ms", "must be positive")


def simple_request(prompt: str, *, model: str = "default", **kwargs) -> ChatRequest:
    """Single user-message request; the common case throughout the engine."""
    return ChatRequest(messages=(ChatMessage("user", prompt),), model=model, **kwargs)


@dataclass(frozen=True)
class TokenUsage:
    prompt_tokens: int = 0
    completion_tokens: int = 0
    total_tokens: int = 0

    def as_dict(self) -> dict[str, int]:
        return {
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "total_tokens": self.total_tokens,
        }


@dataclass(frozen=True)
class ChatReply:
    text: str
    usage: TokenUsage
    latency_ms: int
    attempts: int = 1


def request_hash(request: ChatRequest) -> str:
    """Stable hash of (model, messages). Sampling parameters are excluded so
    transcripts survive temperature tweaks; they are fixtures, not
    performance records."""
    canonical = json.dumps(
        {
            "model": request.model,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
        },
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _word_usage(request: ChatRequest, text: str) -> TokenUsage:
    prompt_tokens = sum(len(m.content.split()) for m in request.messages)
    completion_tokens = len(text.split())
    return TokenUsage(prompt_tokens, completion_tokens, prompt_tokens + completion_tokens)


# --- live endpoint -----------------------------------------------------------


@dataclass
class ProviderConfig:
    endpoint_url: str
    api_key_env_var: Optional[str] = None
    max_retries: int = 2
    backoff_base_ms: int = 250

    def as_dict(self) -> dict:
        return {
            "endpoint_url": self.endpoint_url,
            "api_key_env_var": self.api_key_env_var,
            "max_retries": self.max_retries,
            "backoff_base_ms": self.backoff_base_ms,
        }


class _Retryable(Exception):
    """Internal marker: this attempt failed but another may succeed."""


def backoff_delays_ms(base_ms: int, retries: int) -> list[int]:
    return [base_ms * (2**i) for i in range(retries)]


class OpenAIChatProvider:
    """Chat-completions client with bounded exponential-backoff retries.

    Retries timeouts, connection failures, 5xx, and 429. Auth failures
    (401/403) raise immediately; other 4xx are not retried either, since
    resending the same bad request cannot help.
    """

    def __init__(self, config: ProviderConfig, client: Optional[httpx.Client] = None):
        self.config = config
        self._client = client or httpx.Client()

    def _api_key(self) -> Optional[str]:
        import os

        if not self.config.api_key_env_var:
            return None
        return os.environ.get(self.config.api_key_env_var)

    def _post_once(self, request: ChatRequest) -> dict:
        headers = {"Content-Type": "application/json"}
        key = self._api_key()
        if key:
            headers["Authorization"] = f"Bearer {key}"
        body = {
            "model": request.model,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
            "temperature": request.temperature,
            "top_p": request.top_p,
            "max_tokens": request.max_tokens,
        }
        url = self.config.endpoint_url.rstrip("/") + "/chat/completions"
        try:
            response = self._client.post(
                url, json=body, headers=headers, timeout=request.request_timeout_ms / 1000
            )
        except httpx.TimeoutException as exc:
            raise _Retryable(f"timeout: {exc}") from exc
        except httpx.TransportError as exc:
            raise _Retryable(f"connection failure: {exc}") from exc

        if response.status_code in (401, 403):
            raise CredentialError(f"endpoint rejected credentials ({response.status_code})")
        if response.status_code == 429 or response.status_code >= 500:
            raise _Retryable(f"status {response.status_code}")
        if response.status_code >= 400:
            raise ProtocolError(f"endpoint returned {response.status_code}: {response.text[:200]}")
        try:
            return response.json()
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"non-JSON response body: {response.text[:200]}") from exc

    def complete(self, request: ChatRequest) -> ChatReply:
        started = time.perf_counter()
        attempts = 0
        delays = backoff_delays_ms(self.config.backoff_base_ms, self.config.max_retries)
        while True:
            attempts += 1
            try:
                data = self._post_once(request)
                break
            except _Retryable as exc:
                if attempts > self.config.max_retries:
                    raise TransportError(str(exc), attempts=attempts) from exc
                time.sleep(delays[attempts - 1] / 1000)

        try:
            text = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(f"response body missing choices: {exc}") from exc
        usage_obj = data.get("usage") or {}
        usage = TokenUsage(
            prompt_tokens=int(usage_obj.get("prompt_tokens", 0)),
            completion_tokens=int(usage_obj.get("completion_tokens", 0)),
            total_tokens=int(usage_obj.get("total_tokens", 0)),
        )
        latency_ms = int((time.perf_counter() - started) * 1000)
        return ChatReply(text=text, usage=usage, latency_ms=latency_ms, attempts=attempts)


# --- deterministic mocks ------------------------------------------------------

_WORLD_ENVS = (
    "Cozy Home",
    "Mushroom Forest",
    "Sunny Meadow",
    "Harbor Market",
    "Starlit Observatory",
    "Desert Oasis",
)

_WORLD_EVENTS = (
    "discovers a hidden path behind the old fence",
    "shares a snack with a passing traveler",
    "naps in a warm patch of light",
    "chases fireflies until the sky darkens",
    "builds a small tower of smooth stones",
    "listens to distant music and hums along",
    "splashes through puddles left by the rain",
    "trades a shiny pebble for a sweet roll",
)

_USER_MOVES = (
    "Keep the story going right where it is.",
    "Let's see what happens next here.",
    "Move the character somewhere new that fits the story.",
    "Take the character to explore a different place.",
    "I feed the character a warm meal.",
    "I play a quick game with the character.",
    "I wash the character until it gleams.",
    "I tuck the character in for a rest.",
)

_TOPIC_THEMES = (
    "tidepool kingdom",
    "clockwork bakery",
    "glacier mail route",
    "rooftop garden city",
    "library of lost maps",
    "volcano hot springs",
    "night market carnival",
    "cloud shepherding",
    "deep mine concert hall",
    "lighthouse archipelago",
    "mushroom terrarium",
    "traveling tea caravan",
)

_TOPIC_NAMES = (
    "Juniper",
    "Bramble",
    "Ondine",
    "Piko",
    "Saffron",
    "Tumble",
    "Vesper",
    "Quill",
    "Maple",
    "Igloo",
    "Zephyr",
    "Cobalt",
)

_TOPIC_SPECIES = (
    "otter",
    "hedgehog",
    "axolotl",
    "fox",
    "penguin",
    "tortoise",
    "raccoon",
    "newt",
    "capuchin",
    "lynx",
    "puffin",
    "salamander",
)

_TOPIC_TRAITS = (
    "endlessly curious",
    "quietly brave",
    "a compulsive collector",
    "theatrical",
    "punctual to a fault",
    "softhearted",
    "stubbornly optimistic",
    "a meticulous planner",
    "easily distracted",
    "fiercely loyal",
    "an amateur inventor",
    "suspicious of birds",
)


def _flavor_world(digest: bytes) -> str:
    env = _WORLD_ENVS[digest[0] % len(_WORLD_ENVS)]
    event = _WORLD_EVENTS[digest[1] % len(_WORLD_EVENTS)]
    meters = {
        "hunger": 30 + digest[2] % 66,
        "energy": 30 + digest[3] % 66,
        "fun": 30 + digest[4] % 66,
        "hygiene": 30 + digest[5] % 66,
    }
    body = {
        "narrative": f"In the {env.lower()}, the character {event}. The day keeps its gentle pace.",
        "action": f"The character {event}.",
        "state": {"mode": "absolute", **meters},
        "environment": env,
        "image_prompt": f"The character {event}, soft light, storybook illustration",
    }
    return "```json\n" + json.dumps(body, indent=2) + "\n```"


def _flavor_user(digest: bytes) -> str:
    return _USER_MOVES[digest[0] % len(_USER_MOVES)]


def _flavor_topic(digest: bytes) -> str:
    theme = _TOPIC_THEMES[digest[0] % len(_TOPIC_THEMES)]
    name = _TOPIC_NAMES[digest[1] % len(_TOPIC_NAMES)]
    species = _TOPIC_SPECIES[digest[2] % len(_TOPIC_SPECIES)]
    trait = _TOPIC_TRAITS[digest[3] % len(_TOPIC_TRAITS)]
    return f"Topic: {theme} || Character: {name}, a {species}, {trait}"


def _flavor_judge(digest: bytes) -> str:
    def score(b: int) -> float:
        return 5.0 + (b % 10) * 0.5

    line1 = (
        f"Scores: overall={score(digest[0])} state={score(digest[1])} "
        f"environment={score(digest[2])} story={score(digest[3])} instruction={score(digest[4])}"
    )
    line2 = (
        f"Scores: overall={score(digest[5])} state={score(digest[6])} "
        f"environment={score(digest[7])} story={score(digest[8])} instruction={score(digest[9])}"
    )
    return f"Both responses are serviceable; differences are in the details.\n{line1}\n{line2}"


_FLAVORS = {
    "echo": lambda digest: f"reply-{digest.hex()[:12]}",
    "world": _flavor_world,
    "user": _flavor_user,
    "topic": _flavor_topic,
    "judge": _flavor_judge,
}


class MockProvider:
    """Deterministic provider for tests and offline play.

    Scripted mode consumes canned replies in order. Generator mode derives
    the reply purely from (seed, request hash) through a flavor template,
    so the same seed and requests always produce a byte-identical
    transcript.
    """

    def __init__(
        self,
        script: Optional[list[str]] = None,
        *,
        seed: Optional[int] = None,
        flavor: str = "echo",
    ):
        if script is None and seed is None:
            raise ValidationError("script", "scripted replies or a seed is required")
        if flavor not in _FLAVORS:
            raise ValidationError("flavor", f"unknown flavor {flavor!r}")
        self._script = list(script) if script is not None else None
        self._seed = seed
        self._flavor = flavor
        self._lock = threading.Lock()
        self.calls = 0

    @classmethod
    def scripted(cls, replies: list[str]) -> "MockProvider":
        return cls(script=replies)

    @classmethod
    def generator(cls, seed: int, flavor: str = "echo") -> "MockProvider":
        return cls(seed=seed, flavor=flavor)

    def complete(self, request: ChatRequest) -> ChatReply:
        started = time.perf_counter()
        with self._lock:
            self.calls += 1
            if self._script is not None:
                if not self._script:
                    raise ScriptExhaustedError("scripted mock has no replies left")
                text = self._script.pop(0)
            else:
                digest = hashlib.sha256(
                    f"{self._seed}:{request_hash(request)}".encode("utf-8")
                ).digest()
                text = _FLAVORS[self._flavor](digest)
        latency_ms = int((time.perf_counter() - started) * 1000)
        return ChatReply(text=text, usage=_word_usage(request, text), latency_ms=latency_ms)


# --- record / replay ----------------------------------------------------------


@dataclass
class RecordingProvider:
    """Wraps a live provider and appends (request-hash, response) pairs."""

    inner: object
    path: Path

    def complete(self, request: ChatRequest) -> ChatReply:
        reply = self.inner.complete(request)
        entry = {
            "request_hash": request_hash(request),
            "text": reply.text,
            "usage": reply.usage.as_dict(),
        }
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry, sort_keys=True, separators=(",", ":")) + "\n")
        return reply


@dataclass
class ReplayProvider:
    """Answers from a transcript by request hash; never touches the network."""

    path: Path
    _entries: dict[str, dict] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.path = Path(self.path)
        with self.path.open(encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                entry = json.loads(line)
                self._entries[entry["request_hash"]] = entry

    def complete(self, request: ChatRequest) -> ChatReply:
        h = request_hash(request)
        entry = self._entries.get(h)
        if entry is None:
            raise ReplayMissError(h)
        usage_obj = entry.get("usage", {})
        return ChatReply(
            text=entry["text"],
            usage=TokenUsage(
                prompt_tokens=usage_obj.get("prompt_tokens", 0),
                completion_tokens=usage_obj.get("completion_tokens", 0),
                total_tokens=usage_obj.get("total_tokens", 0),
            ),
            latency_ms=0,
        )


def record_replay(provider: Optional[object], transcript_path: Path | str, mode: str):
    """Wrap `provider` for recording, or build a replay provider from a transcript."""
    path = Path(transcript_path)
    if mode == "record":
        if provider is None:
            raise ValidationError("provider", "record mode needs a provider to wrap")
        return RecordingProvider(inner=provider, path=path)
    if mode == "replay":
        return ReplayProvider(path=path)
    raise ValidationError("mode", f"unknown mode {mode!r}")

"""Distillation data pipeline.

Three stages, each usable on its own: generate diverse topic/character
premises (similarity-gated so the corpus never collapses onto one idea),
play full sessions between a world model and a scripted-player model,
and emit the transcripts as loss-masked training records. Only the world
model's own replies are trainable; user and prompt text is context.
"""

from __future__ import annotations

import json
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

from lifesim import kernels
from lifesim.errors import (
    AttemptBudgetError,
    AuditError,
    DatasetWriteError,
    LifesimError,
    MeterValueError,
    ProviderError,
    ResponseFormatError,
    ResponseParseError,
    SessionCollectionError,
    ValidationError,
)
from lifesim.protocol import (
    WorldPromptTemplate,
    build_collection_world_prompt,
    bind_environment,
    load_template_text,
    parse_world_response,
    render_environments,
    render_state,
    render_template,
    resolve_state_update,
)
from lifesim.providers import simple_request
from lifesim.state import CharacterState, Environment

DIVERSITY_THRESHOLD = 0.7
DEFAULT_ROUNDS = 5

_TOKEN_RE = re.compile(r"[a-z0-9]+")
_TOPIC_LINE = re.compile(r"Topic:\s*(.+?)\s*\|\|\s*Character:\s*(.+)", re.IGNORECASE)


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def rouge_l(candidate: str, reference: str) -> float:
    """ROUGE-L F1 over lowercase alphanumeric tokens.

    Tokens are interned to ints so the longest-common-subsequence kernel
    works on flat id sequences."""
    a = tokenize(candidate)
    b = tokenize(reference)
    if not a or not b:
        return 0.0
    ids: dict[str, int] = {}
    xa = [ids.setdefault(t, len(ids)) for t in a]
    xb = [ids.setdefault(t, len(ids)) for t in b]
    lcs = kernels.lcs_length(xa, xb)
    if lcs == 0:
        return 0.0
    precision = lcs / len(a)
    recall = lcs / len(b)
    return 2 * precision * recall / (precision + recall)


# --- topic/character corpus ---------------------------------------------------


@dataclass(frozen=True)
class TopicCharacterPair:
    topic: str
    character: str

    def __post_init__(self):
        if not self.topic.strip():
            raise ValidationError("topic", "must be non-empty")
        if not self.character.strip():
            raise ValidationError("character", "must be non-empty")

    def text(self) -> str:
        """The string the similarity gate compares."""
        return f"{self.topic} {self.character}"

    def as_dict(self) -> dict[str, str]:
        return {"topic": self.topic, "character": self.character}

    @classmethod
    def from_dict(cls, data: dict) -> "TopicCharacterPair":
        return cls(topic=data["topic"], character=data["character"])


@dataclass(frozen=True)
class FilterDecision:
    accepted: bool
    max_score: float
    nearest: Optional[TopicCharacterPair]


def diversity_filter(
    candidate: TopicCharacterPair,
    corpus: Sequence[TopicCharacterPair],
    threshold: float = DIVERSITY_THRESHOLD,
) -> FilterDecision:
    """Accept iff the candidate's similarity to every existing pair is
    strictly below the threshold."""
    cand_text = candidate.text()
    max_score = 0.0
    nearest: Optional[TopicCharacterPair] = None
    for existing in corpus:
        score = rouge_l(cand_text, existing.text())
        if score > max_score or nearest is None:
            max_score = score
            nearest = existing
    if nearest is None:
        return FilterDecision(accepted=True, max_score=0.0, nearest=None)
    return FilterDecision(accepted=max_score < threshold, max_score=max_score, nearest=nearest)


def parse_topic_reply(raw: str) -> TopicCharacterPair:
    match = _TOPIC_LINE.search(raw)
    if not match:
        raise ResponseFormatError(raw)
    return TopicCharacterPair(topic=match.group(1).strip(), character=match.group(2).strip())


def load_corpus(path: Path | str) -> list[TopicCharacterPair]:
    pairs = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                pairs.append(TopicCharacterPair.from_dict(json.loads(line)))
    return pairs


def _append_pair(path: Path, pair: TopicCharacterPair) -> None:
    with path.open("a", encoding="utf-8") as fh:
        fh.write(json.dumps(pair.as_dict(), sort_keys=True, separators=(",", ":")) + "\n")
        fh.flush()
        os.fsync(fh.fileno())


def _existing_pairs_block(corpus: Sequence[TopicCharacterPair], limit: int = 40) -> str:
    if not corpus:
        return "(none yet)"
    recent = corpus[-limit:]
    return "\n".join(f"- Topic: {p.topic} || Character: {p.character}" for p in recent)


def generate_topic_pairs(
    topic_provider,
    n: int,
    max_attempts: Optional[int] = None,
    *,
    out_path: Optional[Path | str] = None,
    threshold: float = DIVERSITY_THRESHOLD,
    templates_dir: Optional[Path | str] = None,
    model: str = "topic-gen",
) -> list[TopicCharacterPair]:
    """Collect exactly n gate-passing pairs, or raise with the partial corpus.

    Accepted pairs are appended to `out_path` as they land, so an
    interruption costs at most the in-flight candidate. If the file
    already holds pairs, generation resumes on top of them.
    """
    if n < 1:
        raise ValidationError("n", "must be >= 1")
    budget = max_attempts if max_attempts is not None else max(20, 20 * n)
    template = load_template_text("topic", templates_dir)

    corpus: list[TopicCharacterPair] = []
    path = Path(out_path) if out_path is not None else None
    if path is not None and path.exists():
        corpus = load_corpus(path)

    attempts = 0
    while len(corpus) < n:
        if attempts >= budget:
            raise AttemptBudgetError(pairs=corpus, attempts=attempts, target=n)
        attempts += 1
        prompt = render_template(
            template,
            {"existing_pairs": _existing_pairs_block(corpus), "attempt": str(attempts)},
        )
        reply = topic_provider.complete(simple_request(prompt, model=model))
        try:
            candidate = parse_topic_reply(reply.text)
        except (ResponseFormatError, ValidationError):
            continue
        decision = diversity_filter(candidate, corpus, threshold)
        if not decision.accepted:
            continue
        corpus.append(candidate)
        if path is not None:
            _append_pair(path, candidate)
    return corpus


def audit_corpus(
    pairs: Sequence[TopicCharacterPair], threshold: float = DIVERSITY_THRESHOLD
) -> dict:
    """Full pairwise re-check of an accepted corpus, independent of the
    incremental gate. Raises on any pair at or above the threshold."""
    worst = 0.0
    worst_at: Optional[tuple[int, int]] = None
    for i in range(len(pairs)):
        for j in range(i + 1, len(pairs)):
            score = rouge_l(pairs[i].text(), pairs[j].text())
            if score > worst:
                worst = score
                worst_at = (i, j)
            if score >= threshold:
                raise AuditError(
                    f"pairs {i} and {j} score {score:.3f}, at or above {threshold}"
                )
    return {"pairs": len(pairs), "max_similarity": worst, "argmax": worst_at}


# --- interaction collection ----------------------------------------------------

SPEAKERS = ("world", "user")


@dataclass(frozen=True)
class InteractionSample:
    """One collected play session: a world setup turn, then user/world
    alternations. Turn texts are the raw model replies."""

    pair: TopicCharacterPair
    rounds: tuple[tuple[str, str], ...]
    round_count: int = DEFAULT_ROUNDS
    retry_count: int = 0
    world_model: str = "world-sim"
    user_model: str = "user-sim"
    collected_at: str = ""

    def __post_init__(self):
        expected = 2 * self.round_count + 1
        if len(self.rounds) != expected:
            raise ValidationError(
                "rounds", f"expected {expected} turns for {self.round_count} rounds, got {len(self.rounds)}"
            )
        for idx, (speaker, text) in enumerate(self.rounds):
            want = "world" if idx % 2 == 0 else "user"
            if speaker != want:
                raise ValidationError("rounds", f"turn {idx} speaker {speaker!r}, expected {want!r}")
            if not text.strip():
                raise ValidationError("rounds", f"turn {idx} is empty")

    def as_dict(self) -> dict:
        return {
            "pair": self.pair.as_dict(),
            "rounds": [[speaker, text] for speaker, text in self.rounds],
            "round_count": self.round_count,
            "retry_count": self.retry_count,
            "world_model": self.world_model,
            "user_model": self.user_model,
            "collected_at": self.collected_at,
        }


def _history_block(transcript: Sequence[tuple[str, str]]) -> str:
    if not transcript:
        return ""
    lines = []
    for speaker, text in transcript:
        label = "World" if speaker == "world" else "Player"
        lines.append(f"{label}: {text}")
    return "\n".join(lines)


def collect_session(
    world_provider,
    user_provider,
    pair: TopicCharacterPair,
    rounds: int = DEFAULT_ROUNDS,
    *,
    max_parse_retries: int = 2,
    templates_dir: Optional[Path | str] = None,
    world_model: str = "world-sim",
    user_model: str = "user-sim",
) -> InteractionSample:
    """Play one full session: world setup turn, then `rounds` user/world
    alternations. World replies must parse as structured turns; a failed
    parse is retried, and an exhausted retry budget discards the session
    with its transcript attached."""
    if rounds < 1:
        raise ValidationError("rounds", "must be >= 1")
    template = WorldPromptTemplate.load(templates_dir)
    user_template = load_template_text("user", templates_dir)

    transcript: list[tuple[str, str]] = []
    narrative_log: list[tuple[str, str]] = []  # parsed narratives, for prompts
    registry: list[Environment] = []
    state = CharacterState()
    retries = 0

    def world_turn(user_input: str) -> None:
        nonlocal state, retries
        prompt = build_collection_world_prompt(
            template,
            topic=pair.topic,
            character=pair.character,
            state=state,
            environments_text=render_environments(registry),
            history_text=_history_block(narrative_log),
            user_input=user_input,
        )
        last_error: Optional[LifesimError] = None
        for _ in range(max_parse_retries + 1):
            try:
                reply = world_provider.complete(simple_request(prompt, model=world_model))
            except ProviderError as exc:
                raise SessionCollectionError(
                    f"world provider failed: {exc}", transcript=list(transcript)
                ) from exc
            try:
                parsed = parse_world_response(reply.text)
            except (ResponseFormatError, ResponseParseError, MeterValueError) as exc:
                last_error = exc
                retries += 1
                continue
            bind_environment(parsed.environment_name, registry)
            state = resolve_state_update(parsed.state_update, state)
            transcript.append(("world", reply.text))
            narrative_log.append(("world", parsed.narrative))
            return
        raise SessionCollectionError(
            f"world reply unparseable after {max_parse_retries + 1} tries: {last_error}",
            transcript=list(transcript),
        )

    def user_turn() -> str:
        prompt = render_template(
            user_template,
            {
                "topic": pair.topic,
                "character": pair.character,
                "history": _history_block(narrative_log) or "(the game is about to begin)",
            },
        )
        try:
            reply = user_provider.complete(simple_request(prompt, model=user_model))
        except ProviderError as exc:
            raise SessionCollectionError(
                f"user provider failed: {exc}", transcript=list(transcript)
            ) from exc
        text = reply.text.strip()
        if not text:
            raise SessionCollectionError("user provider returned empty text", transcript=list(transcript))
        transcript.append(("user", text))
        narrative_log.append(("user", text))
        return text

    world_turn("")  # setup turn: the world opens the game
    for _ in range(rounds):
        move = user_turn()
        world_turn(move)

    return InteractionSample(
        pair=pair,
        rounds=tuple(transcript),
        round_count=rounds,
        retry_count=retries,
        world_model=world_model,
        user_model=user_model,
        collected_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )


@dataclass
class CollectionReport:
    samples: list[InteractionSample] = field(default_factory=list)
    discarded: int = 0
    failures: list[str] = field(default_factory=list)


def collect_many(
    world_provider,
    user_provider,
    pairs: Sequence[TopicCharacterPair],
    rounds: int = DEFAULT_ROUNDS,
    *,
    workers: int = 1,
    **session_kwargs,
) -> CollectionReport:
    """Collect sessions for many pairs; failed sessions are discarded and
    counted, never repaired. Pairs are independent, so they fan out across
    a small worker pool."""
    report = CollectionReport()
    lock = threading.Lock()

    def run(pair: TopicCharacterPair) -> None:
        try:
            sample = collect_session(
                world_provider, user_provider, pair, rounds, **session_kwargs
            )
        except SessionCollectionError as exc:
            with lock:
                report.discarded += 1
                report.failures.append(f"{pair.topic}: {exc}")
            return
        with lock:
            report.samples.append(sample)

    if workers <= 1:
        for pair in pairs:
            run(pair)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, pairs))
    return report


# --- dataset emission -----------------------------------------------------------


@dataclass(frozen=True)
class DatasetSummary:
    record_count: int
    train_segments: int
    context_segments: int
    path: str

    def as_dict(self) -> dict:
        return {
            "record_count": self.record_count,
            "train_segments": self.train_segments,
            "context_segments": self.context_segments,
            "path": self.path,
        }


def make_record(sample: InteractionSample) -> dict:
    """One training record: a context-only seed segment, then the turns.
    World turns are the training targets; everything else is context."""
    segments = [
        {
            "role": "prompt",
            "text": f"Topic: {sample.pair.topic}\nCharacter: {sample.pair.character}",
            "train": False,
        }
    ]
    for speaker, text in sample.rounds:
        segments.append({"role": speaker, "text": text, "train": speaker == "world"})
    return {
        "segments": segments,
        "meta": {
            "pair": sample.pair.as_dict(),
            "round_count": sample.round_count,
            "retry_count": sample.retry_count,
            "world_model": sample.world_model,
            "user_model": sample.user_model,
            "collected_at": sample.collected_at,
        },
    }


def emit_dataset(
    samples: Sequence[InteractionSample], output_path: Path | str
) -> DatasetSummary:
    """Write one JSON line per sample. The file appears atomically: a
    failed write leaves no partial output behind."""
    path = Path(output_path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    train = 0
    context = 0
    try:
        with tmp.open("w", encoding="utf-8") as fh:
            for sample in samples:
                record = make_record(sample)
                for seg in record["segments"]:
                    if seg["train"]:
                        train += 1
                    else:
                        context += 1
                fh.write(json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except OSError as exc:
        tmp.unlink(missing_ok=True)
        raise DatasetWriteError(f"could not write {path}: {exc}") from exc
    return DatasetSummary(
        record_count=len(samples), train_segments=train, context_segments=context, path=str(path)
    )


def audit_dataset(path: Path | str) -> dict:
    """Independent re-read of an emitted dataset file.

    Checks the mask invariant (world trains, everything else does not)
    and the turn-count shape (2*rounds + 1 spoken turns, alternating,
    world first) without trusting the writer's bookkeeping."""
    records = 0
    train = 0
    context = 0
    with Path(path).open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise AuditError(f"line {line_no}: not valid JSON: {exc}") from exc
            segments = record.get("segments")
            if not isinstance(segments, list) or not segments:
                raise AuditError(f"line {line_no}: segments missing or empty")
            spoken = []
            for seg_no, seg in enumerate(segments):
                role = seg.get("role")
                flag = seg.get("train")
                if role not in ("prompt", "world", "user"):
                    raise AuditError(f"line {line_no} segment {seg_no}: bad role {role!r}")
                if not isinstance(flag, bool):
                    raise AuditError(f"line {line_no} segment {seg_no}: train is not boolean")
                if role == "world" and not flag:
                    raise AuditError(f"line {line_no} segment {seg_no}: world segment not trainable")
                if role != "world" and flag:
                    raise AuditError(f"line {line_no} segment {seg_no}: {role} segment marked trainable")
                if role in SPEAKERS:
                    spoken.append(role)
                train += 1 if flag else 0
                context += 0 if flag else 1
            if len(spoken) % 2 != 1:
                raise AuditError(f"line {line_no}: {len(spoken)} spoken turns, expected 2*rounds+1")
            for idx, role in enumerate(spoken):
                want = "world" if idx % 2 == 0 else "user"
                if role != want:
                    raise AuditError(f"line {line_no}: spoken turn {idx} is {role}, expected {want}")
            declared = record.get("meta", {}).get("round_count")
            if declared is not None and len(spoken) != 2 * declared + 1:
                raise AuditError(
                    f"line {line_no}: {len(spoken)} spoken turns but meta says rounds={declared}"
                )
            records += 1
    return {"records": records, "train_segments": train, "context_segments": context}

"""Pairwise evaluation harness.

A judge model reads one interaction context and two candidate replies,
then scores both on five axes from 0 to 10. Position bias is real, so
the default protocol asks twice with the responses swapped and averages
after un-swapping the labels. A second, non-LLM path aggregates
precomputed image metrics with a detection gate: images with no visible
character contribute zero similarity and maximal distance.
"""

from __future__ import annotations

import json
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

from lifesim.errors import (
    GatingStateError,
    JudgeParseError,
    JudgeRunError,
    LifesimError,
    ScoreRangeError,
    ValidationError,
)
from lifesim.protocol import load_template_text, render_template
from lifesim.providers import simple_request

AXES = ("overall", "state", "environment", "story", "instruction")

AXIS_TITLES = {
    "overall": "overall quality",
    "state": "accuracy of the character state update",
    "environment": "environment relevance",
    "story": "story coherence",
    "instruction": "user instruction following",
}

SCORE_MIN = 0.0
SCORE_MAX = 10.0

_SCORE_LINE = re.compile(
    r"Scores:\s*overall\s*=\s*([-\d.]+)\s+state\s*=\s*([-\d.]+)\s+"
    r"environment\s*=\s*([-\d.]+)\s+story\s*=\s*([-\d.]+)\s+instruction\s*=\s*([-\d.]+)",
    re.IGNORECASE,
)


@dataclass(frozen=True)
class JudgeCase:
    case_id: str
    interaction_context: str
    response_a: str
    response_b: str
    label_a: str = "a"
    label_b: str = "b"

    def __post_init__(self):
        if not self.case_id:
            raise ValidationError("case_id", "must be non-empty")
        if not self.response_a.strip() or not self.response_b.strip():
            raise ValidationError("responses", "both responses must be non-empty")

    @classmethod
    def from_dict(cls, data: dict) -> "JudgeCase":
        return cls(
            case_id=str(data["case_id"]),
            interaction_context=data.get("context", ""),
            response_a=data["response_a"],
            response_b=data["response_b"],
            label_a=data.get("label_a", "a"),
            label_b=data.get("label_b", "b"),
        )


@dataclass(frozen=True)
class JudgeScores:
    overall: float
    state: float
    environment: float
    story: float
    instruction: float

    def __post_init__(self):
        for axis in AXES:
            value = getattr(self, axis)
            if not SCORE_MIN <= value <= SCORE_MAX:
                raise ScoreRangeError(axis, value)

    def as_dict(self) -> dict[str, float]:
        return {axis: getattr(self, axis) for axis in AXES}


def mean_scores(items: Sequence[JudgeScores]) -> JudgeScores:
    if not items:
        raise ValidationError("items", "cannot average zero score sets")
    return JudgeScores(
        **{axis: sum(getattr(s, axis) for s in items) / len(items) for axis in AXES}
    )


def build_judge_prompt(case: JudgeCase, order: str = "ab", *, templates_dir=None) -> str:
    """Render the pairwise prompt with responses in the requested order.
    Assistant 1 is whichever response comes first."""
    if order not in ("ab", "ba"):
        raise ValidationError("order", f"must be 'ab' or 'ba', got {order!r}")
    first, second = (
        (case.response_a, case.response_b) if order == "ab" else (case.response_b, case.response_a)
    )
    template = load_template_text("judge", templates_dir)
    return render_template(
        template,
        {
            "context": case.interaction_context or "(no prior context)",
            "response_a": first,
            "response_b": second,
        },
    )


def parse_judge_scores(raw: str) -> tuple[JudgeScores, JudgeScores]:
    """Pull the two machine-readable score lines out of a judge reply.
    Prose around them is fine; fewer than two lines is not."""
    matches = _SCORE_LINE.findall(raw)
    if len(matches) < 2:
        raise JudgeParseError(
            f"expected two score lines, found {len(matches)}; reply starts: {raw[:160]!r}"
        )

    def to_scores(groups: tuple[str, ...]) -> JudgeScores:
        values = {}
        for axis, token in zip(AXES, groups):
            try:
                values[axis] = float(token)
            except ValueError as exc:
                raise JudgeParseError(f"axis {axis} has non-numeric score {token!r}") from exc
        return JudgeScores(**values)

    return to_scores(matches[0]), to_scores(matches[1])


# --- pairwise evaluation --------------------------------------------------------


@dataclass(frozen=True)
class CaseResult:
    case_id: str
    scores_a: JudgeScores
    scores_b: JudgeScores
    orders_used: tuple[str, ...]


@dataclass
class AggregateTable:
    """Per-model axis means over the judged cases, plus failure accounting."""

    mean_a: JudgeScores
    mean_b: JudgeScores
    cases_scored: int
    cases_failed: int
    failures: list[str] = field(default_factory=list)
    results: list[CaseResult] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "mean_a": self.mean_a.as_dict(),
            "mean_b": self.mean_b.as_dict(),
            "cases_scored": self.cases_scored,
            "cases_failed": self.cases_failed,
            "failures": list(self.failures),
            "per_case": [
                {
                    "case_id": r.case_id,
                    "a": r.scores_a.as_dict(),
                    "b": r.scores_b.as_dict(),
                    "orders": list(r.orders_used),
                }
                for r in self.results
            ],
        }


MAX_FAILURE_RATE = 0.2


def _judge_once(judge_provider, case: JudgeCase, order: str, *, model: str, templates_dir):
    prompt = build_judge_prompt(case, order, templates_dir=templates_dir)
    reply = judge_provider.complete(simple_request(prompt, model=model))
    first, second = parse_judge_scores(reply.text)
    # Un-swap: map Assistant 1/2 back onto responses a/b.
    if order == "ab":
        return first, second
    return second, first


def evaluate_pairwise(
    judge_provider,
    cases: Sequence[JudgeCase],
    debias: str = "swap_average",
    *,
    model: str = "judge",
    templates_dir=None,
    workers: int = 1,
) -> AggregateTable:
    """Score every case and fold the results into per-model means.

    debias="swap_average" judges each case in both presentation orders
    and averages; "off" reproduces a single-order protocol. Individual
    case failures are excluded from the means, but a failure rate above
    20% fails the whole run."""
    if debias not in ("off", "swap_average"):
        raise ValidationError("debias", f"must be 'off' or 'swap_average', got {debias!r}")
    if not cases:
        raise JudgeRunError("no cases to evaluate")

    results: list[CaseResult] = []
    failures: list[str] = []
    lock = threading.Lock()

    def run(case: JudgeCase) -> None:
        try:
            if debias == "off":
                a, b = _judge_once(
                    judge_provider, case, "ab", model=model, templates_dir=templates_dir
                )
                result = CaseResult(case.case_id, a, b, ("ab",))
            else:
                a1, b1 = _judge_once(
                    judge_provider, case, "ab", model=model, templates_dir=templates_dir
                )
                a2, b2 = _judge_once(
                    judge_provider, case, "ba", model=model, templates_dir=templates_dir
                )
                result = CaseResult(
                    case.case_id, mean_scores([a1, a2]), mean_scores([b1, b2]), ("ab", "ba")
                )
        except LifesimError as exc:
            with lock:
                failures.append(f"{case.case_id}: {exc}")
            return
        with lock:
            results.append(result)

    if workers <= 1:
        for case in cases:
            run(case)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, cases))

    if not results:
        raise JudgeRunError(f"no case produced scores; failures: {failures}")
    if len(failures) / len(cases) > MAX_FAILURE_RATE:
        raise JudgeRunError(
            f"{len(failures)}/{len(cases)} cases failed, above the {MAX_FAILURE_RATE:.0%} ceiling"
        )

    results.sort(key=lambda r: r.case_id)
    return AggregateTable(
        mean_a=mean_scores([r.scores_a for r in results]),
        mean_b=mean_scores([r.scores_b for r in results]),
        cases_scored=len(results),
        cases_failed=len(failures),
        failures=failures,
        results=results,
    )


def load_cases(path: Path | str) -> list[JudgeCase]:
    cases = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                cases.append(JudgeCase.from_dict(json.loads(line)))
    return cases


def cases_from_transcripts(
    a_path: Path | str, b_path: Path | str, *, context_key: str = "context"
) -> list[JudgeCase]:
    """Zip two transcript files into cases by line position. Each line:
    {"case_id"?, "context"?, "response"}."""
    with Path(a_path).open(encoding="utf-8") as fh:
        rows_a = [json.loads(line) for line in fh if line.strip()]
    with Path(b_path).open(encoding="utf-8") as fh:
        rows_b = [json.loads(line) for line in fh if line.strip()]
    if len(rows_a) != len(rows_b):
        raise ValidationError("transcripts", f"length mismatch: {len(rows_a)} vs {len(rows_b)}")
    cases = []
    for idx, (ra, rb) in enumerate(zip(rows_a, rows_b)):
        cases.append(
            JudgeCase(
                case_id=str(ra.get("case_id", idx)),
                interaction_context=ra.get(context_key, ""),
                response_a=ra["response"],
                response_b=rb["response"],
            )
        )
    return cases


# --- detection-gated image metrics ------------------------------------------------

SIMILARITY_FIELDS = ("clip_i_e", "dino_e", "clip_i_c", "dino_c", "clip_t")
DISTANCE_FIELDS = ("dreamsim_e", "dreamsim_c")


@dataclass(frozen=True)
class GatedImageScores:
    """Precomputed per-image metrics plus the character-detection flag.
    Fields ending in _e compare against the environment reference, _c
    against the character reference."""

    image_id: str
    clip_i_e: float
    dino_e: float
    dreamsim_e: float
    clip_i_c: float
    dino_c: float
    dreamsim_c: float
    clip_t: float
    character_detected: bool
    gated: bool = False

    @classmethod
    def from_dict(cls, data: dict) -> "GatedImageScores":
        return cls(
            image_id=str(data["image_id"]),
            clip_i_e=float(data["clip_i_e"]),
            dino_e=float(data["dino_e"]),
            dreamsim_e=float(data["dreamsim_e"]),
            clip_i_c=float(data["clip_i_c"]),
            dino_c=float(data["dino_c"]),
            dreamsim_c=float(data["dreamsim_c"]),
            clip_t=float(data["clip_t"]),
            character_detected=bool(data["character_detected"]),
            gated=bool(data.get("gated", False)),
        )

    def as_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "clip_i_e": self.clip_i_e,
            "dino_e": self.dino_e,
            "dreamsim_e": self.dreamsim_e,
            "clip_i_c": self.clip_i_c,
            "dino_c": self.dino_c,
            "dreamsim_c": self.dreamsim_c,
            "clip_t": self.clip_t,
            "character_detected": self.character_detected,
            "gated": self.gated,
        }


def gate_image_scores(scores: GatedImageScores, *, force: bool = False) -> GatedImageScores:
    """Apply the no-character penalty exactly once.

    A record with character_detected=False gets all similarities set to
    0 and all distances to 1. Re-gating an already-gated record is a
    state error unless forced (the forced path exists so tests can show
    the operation is a projection)."""
    if scores.gated and not force:
        raise GatingStateError(f"image {scores.image_id} already gated")
    if scores.character_detected:
        return replace(scores, gated=True)
    zeroed = {axis: 0.0 for axis in SIMILARITY_FIELDS}
    maxed = {axis: 1.0 for axis in DISTANCE_FIELDS}
    return replace(scores, gated=True, **zeroed, **maxed)


def load_image_scores(path: Path | str) -> list[GatedImageScores]:
    rows = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rows.append(GatedImageScores.from_dict(json.loads(line)))
    return rows


def aggregate_image_scores(rows: Sequence[GatedImageScores]) -> dict:
    """Gate every record, then report per-metric means and the detection rate."""
    if not rows:
        raise ValidationError("rows", "no image-score records")
    gated = [row if row.gated else gate_image_scores(row) for row in rows]
    out: dict[str, float] = {}
    for axis in SIMILARITY_FIELDS + DISTANCE_FIELDS:
        out[axis] = sum(getattr(r, axis) for r in gated) / len(gated)
    out["character_detected_rate"] = sum(r.character_detected for r in gated) / len(gated)
    out["images"] = len(gated)
    return out

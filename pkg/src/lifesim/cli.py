"""Command-line entry points.

Four tool families, also mounted under the umbrella `lifesim` command:
`forge` (topic corpus, session collection, dataset audit), `judge`
(pairwise evaluation, image-metric gating), `fusion demo`, and `serve`.
Exit codes: 0 success, 2 partial result (attempt budget, discarded
sessions), 1 failure.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from lifesim import forge as forge_mod
from lifesim import judge as judge_mod
from lifesim.config import load_config, build_provider
from lifesim.errors import AttemptBudgetError, AuditError, LifesimError
from lifesim.fusion import demo_report


def _load_app_config(config_path):
    return load_config(config_path) if config_path else load_config(None)


# --- forge -------------------------------------------------------------------


@click.group(name="forge")
def forge() -> None:
    """Distillation data pipeline: topics, collection, audits."""


@forge.command(name="topics")
@click.option("--n", "target", type=int, required=True, help="Pairs to collect.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@click.option("--max-attempts", type=int, default=None, help="Attempt budget (default 20*n).")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def forge_topics(target, out_path, max_attempts, config_path) -> None:
    """Generate similarity-gated topic/character pairs into a JSONL corpus."""
    config = _load_app_config(config_path)
    provider = build_provider(config, "topic_model")
    try:
        pairs = forge_mod.generate_topic_pairs(
            provider,
            target,
            max_attempts,
            out_path=out_path,
            model=config.role("topic_model").model,
        )
    except AttemptBudgetError as exc:
        click.echo(f"partial: {len(exc.pairs)}/{exc.target} pairs after {exc.attempts} attempts", err=True)
        sys.exit(2)
    except LifesimError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    click.echo(f"wrote {len(pairs)} pairs to {out_path}")


@forge.command(name="collect")
@click.option("--corpus", "corpus_path", type=click.Path(exists=True), required=True)
@click.option("--rounds", type=int, default=5, show_default=True)
@click.option("--sessions", type=int, default=None, help="Cap on pairs to play (default: all).")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def forge_collect(corpus_path, rounds, sessions, out_path, workers, config_path) -> None:
    """Play sessions over a corpus and emit the loss-masked dataset."""
    config = _load_app_config(config_path)
    world = build_provider(config, "world_model")
    user = build_provider(config, "user_model")
    try:
        pairs = forge_mod.load_corpus(corpus_path)
        if sessions is not None:
            pairs = pairs[:sessions]
        report = forge_mod.collect_many(
            world,
            user,
            pairs,
            rounds,
            workers=workers,
            world_model=config.role("world_model").model,
            user_model=config.role("user_model").model,
        )
        summary = forge_mod.emit_dataset(report.samples, out_path)
    except LifesimError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    click.echo(
        f"collected {summary.record_count} sessions "
        f"({report.discarded} discarded), {summary.train_segments} trainable segments -> {out_path}"
    )
    if report.discarded and not report.samples:
        sys.exit(1)
    if report.discarded:
        sys.exit(2)


@forge.command(name="audit")
@click.option("--in", "in_path", type=click.Path(exists=True), required=True)
@click.option(
    "--kind",
    type=click.Choice(["dataset", "corpus"]),
    default="dataset",
    show_default=True,
    help="dataset: loss-mask/shape audit; corpus: pairwise similarity audit.",
)
@click.option("--threshold", type=float, default=0.7, show_default=True)
def forge_audit(in_path, kind, threshold) -> None:
    """Independently re-check an emitted file's invariants."""
    try:
        if kind == "dataset":
            stats = forge_mod.audit_dataset(in_path)
            click.echo(
                f"ok: {stats['records']} records, {stats['train_segments']} trainable, "
                f"{stats['context_segments']} context segments"
            )
        else:
            pairs = forge_mod.load_corpus(in_path)
            stats = forge_mod.audit_corpus(pairs, threshold)
            click.echo(
                f"ok: {stats['pairs']} pairs, max pairwise similarity {stats['max_similarity']:.3f}"
            )
    except (AuditError, LifesimError, OSError, json.JSONDecodeError) as exc:
        click.echo(f"audit failed: {exc}", err=True)
        sys.exit(1)


# --- judge -------------------------------------------------------------------


@click.group(name="judge")
def judge() -> None:
    """Pairwise response evaluation and image-metric aggregation."""


@judge.command(name="run")
@click.option("--cases", "cases_path", type=click.Path(exists=True), default=None)
@click.option("--a-transcripts", type=click.Path(exists=True), default=None)
@click.option("--b-transcripts", type=click.Path(exists=True), default=None)
@click.option(
    "--debias",
    type=click.Choice(["swap", "off"]),
    default="swap",
    show_default=True,
)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None)
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def judge_run(cases_path, a_transcripts, b_transcripts, debias, out_path, workers, config_path) -> None:
    """Score paired responses on five axes and write the aggregate table."""
    config = _load_app_config(config_path)
    provider = build_provider(config, "judge_model")
    try:
        if cases_path:
            cases = judge_mod.load_cases(cases_path)
        elif a_transcripts and b_transcripts:
            cases = judge_mod.cases_from_transcripts(a_transcripts, b_transcripts)
        else:
            raise LifesimError("provide --cases or both --a-transcripts and --b-transcripts")
        table = judge_mod.evaluate_pairwise(
            provider,
            cases,
            "swap_average" if debias == "swap" else "off",
            model=config.role("judge_model").model,
            workers=workers,
        )
    except LifesimError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    click.echo(f"cases scored: {table.cases_scored}  failed: {table.cases_failed}")
    click.echo("axis          model A   model B")
    for axis in judge_mod.AXES:
        click.echo(
            f"{axis:<12}  {getattr(table.mean_a, axis):>7.2f}   {getattr(table.mean_b, axis):>7.2f}"
        )
    if out_path:
        Path(out_path).write_text(json.dumps(table.as_dict(), indent=2, sort_keys=True), "utf-8")
        click.echo(f"table written to {out_path}")


@judge.command(name="gate")
@click.option("--metrics", "metrics_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None)
def judge_gate(metrics_path, out_path) -> None:
    """Apply the no-character gate to an image-metrics file and aggregate."""
    try:
        rows = judge_mod.load_image_scores(metrics_path)
        report = judge_mod.aggregate_image_scores(rows)
    except LifesimError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    for key, value in sorted(report.items()):
        click.echo(f"{key}: {value}")
    if out_path:
        Path(out_path).write_text(json.dumps(report, indent=2, sort_keys=True), "utf-8")


# --- fusion ------------------------------------------------------------------


@click.group(name="fusion")
def fusion() -> None:
    """Regional attention-fusion reference math."""


@fusion.command(name="demo")
@click.option("--n", type=int, default=10, show_default=True, help="Spatial positions.")
@click.option("--d", type=int, default=8, show_default=True, help="Feature dimension.")
@click.option("--r", "r_percent", type=float, default=60.0, show_default=True, help="Mask ratio %.")
@click.option("--seed", type=int, default=7, show_default=True)
def fusion_demo(n, d, r_percent, seed) -> None:
    """Print a worked example: scores, region mask, fused rows."""
    try:
        click.echo(demo_report(n=n, d=d, r_percent=r_percent, seed=seed))
    except LifesimError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)


# --- serve -------------------------------------------------------------------


@click.command(name="serve")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
def serve(config_path, port, host) -> None:
    """Run the game server (mock providers unless configured otherwise)."""
    from lifesim.server import run_server

    try:
        config = _load_app_config(config_path)
    except LifesimError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    click.echo(f"serving on http://{host}:{port}/v1 (providers: {config.provider_mode})")
    run_server(config, port=port, host=host)


# --- umbrella ----------------------------------------------------------------


@click.group()
def main() -> None:
    """Character life-simulation engine tools."""


main.add_command(forge)
main.add_command(judge)
main.add_command(fusion)
main.add_command(serve)


if __name__ == "__main__":
    main()

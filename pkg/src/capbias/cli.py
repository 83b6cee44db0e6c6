"""Command-line entry point.

Exit codes partition cleanly: 0 success, 1 completed with findings (validation
violations, biased concepts), 2 usage or configuration problems, 3 internal
errors. Every command takes --seed where randomness is involved and produces
byte-identical JSON for identical seeds regardless of --threads.
"""

from __future__ import annotations

import functools
import json
import os
import sys
import traceback
from pathlib import Path

import click

from . import __version__
from .audit import read_records, write_records
from .caption_analysis import (
    DEFAULT_GENDER_LEXICON,
    SystemOutput,
    compare_systems,
    correct_caption,
    gender_error_rate,
    load_gender_lexicon,
    read_outputs,
    write_outputs,
)
from .corpus import (
    DEFAULT_LEXICON,
    Category,
    Concept,
    Gender,
    build_manifest,
    load_lexicon,
    read_manifest,
    synthetic_image_map,
    validate_manifest,
    write_manifest,
)
from .correlation import correlate_metrics, read_judgments
from .embed_score import clipscore, load_store
from .errors import (
    CapbiasError,
    ConfigurationError,
    InsufficientDataError,
    InvalidInputError,
    ManifestValidationError,
    RemoteEmbeddingError,
    StoreLoadError,
    TrainingError,
)
from .ngram_metrics import Metric, NGRAM_METRICS, build_idf, score_ngram_metric
from .pipeline import (
    EmbeddingResolver,
    RunConfig,
    audit_records,
    build_resolver,
    parse_metrics,
    score_manifest,
    write_json,
    write_run_metadata,
)
from .report import write_report
from .rl_sim import load_sim_config, run_experiment
from .textnorm import tokenize

EXIT_FINDINGS = 1
EXIT_USAGE = 2
EXIT_INTERNAL = 3

_USAGE_ERRORS = (
    ConfigurationError,
    InvalidInputError,
    StoreLoadError,
    RemoteEmbeddingError,
    InsufficientDataError,
    TrainingError,
    OSError,
    json.JSONDecodeError,
)


def guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ManifestValidationError as exc:
            click.echo(f"finding: {exc}", err=True)
            sys.exit(EXIT_FINDINGS)
        except _USAGE_ERRORS as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_USAGE)
        except SystemExit:
            raise
        except CapbiasError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_INTERNAL)
        except Exception:
            click.echo("internal error:\n" + traceback.format_exc(), err=True)
            sys.exit(EXIT_INTERNAL)

    return wrapper


def _seed_opts(fn):
    fn = click.option("--seed", type=int, default=0, show_default=True)(fn)
    fn = click.option("--bootstrap-samples", type=int, default=10_000, show_default=True)(fn)
    fn = click.option("--alpha", type=float, default=0.05, show_default=True)(fn)
    return fn


def _embedding_opts(fn):
    fn = click.option("--embeddings", type=click.Path(), default=None, help="EMB1 or JSON embedding store")(fn)
    fn = click.option(
        "--scorer-url",
        default=None,
        help="remote embedding service (defaults to $EMBED_ENDPOINT)",
    )(fn)
    return fn


def _make_run_config(seed, bootstrap_samples, alpha, metrics, threads, embeddings, scorer_url, exclude, bonferroni=False) -> RunConfig:
    exclude_words: set[str] = set()
    if exclude:
        for line in Path(exclude).read_text(encoding="utf-8").splitlines():
            word = line.strip()
            if word and not word.startswith("#"):
                exclude_words.add(word)
    return RunConfig(
        seed=seed,
        bootstrap_samples=bootstrap_samples,
        alpha=alpha,
        metrics=parse_metrics(metrics),
        threads=threads,
        embeddings_path=embeddings,
        scorer_url=scorer_url or os.environ.get("EMBED_ENDPOINT"),
        scorer_token=os.environ.get("EMBED_TOKEN"),
        exclude_concepts=exclude_words,
        bonferroni=bonferroni,
    )


@click.group()
@click.version_option(version=__version__)
def main():
    """Audit captioning metrics for gender bias on template caption pairs."""


# --------------------------------------------------------------------------
# build-manifest
# --------------------------------------------------------------------------

@main.command("build-manifest")
@click.option("--lexicon", "lexicon_path", type=click.Path(), default=None, help="lexicon JSON (defaults to the bundled mini-lexicon)")
@click.option("--images", "images_path", type=click.Path(), default=None, help="JSON {category: {concept: {gender: [refs]}}}")
@click.option("--synthetic-images", type=int, default=None, help="generate N placeholder refs per (concept, gender)")
@click.option("--out", "out_path", type=click.Path(), required=True)
@guarded
def cmd_build_manifest(lexicon_path, images_path, synthetic_images, out_path):
    """Render captions for every gender x concept pair and write the manifest."""
    lexicon = load_lexicon(lexicon_path) if lexicon_path else DEFAULT_LEXICON
    concepts = lexicon.concepts()
    genders = [Gender.MAN, Gender.WOMAN]

    if images_path and synthetic_images:
        raise ConfigurationError("--images and --synthetic-images are mutually exclusive")
    if images_path:
        raw = json.loads(Path(images_path).read_text(encoding="utf-8"))
        images = {}
        for category, by_concept in raw.items():
            Category(category)
            for word, by_gender in by_concept.items():
                for gender, refs in by_gender.items():
                    images[(word, Gender(gender))] = list(refs)
    else:
        images = synthetic_image_map(concepts, genders, synthetic_images or 3)

    manifest = build_manifest(concepts, genders, images, lexicon.article_overrides)
    report = validate_manifest(manifest)
    write_manifest(manifest, out_path)
    for finding in report.findings:
        click.echo(f"finding[{finding.kind}] {finding.instance_id}: {finding.message}", err=True)
    click.echo(f"wrote {len(manifest)} instances to {out_path}")
    if report.findings:
        sys.exit(EXIT_FINDINGS)


# --------------------------------------------------------------------------
# score
# --------------------------------------------------------------------------

@main.command("score")
@click.option("--manifest", "manifest_path", type=click.Path(), required=True)
@click.option("--metrics", default="bleu4,rougeL,ciderD,meteor", show_default=True)
@click.option("--threads", type=int, default=1, show_default=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@_embedding_opts
@guarded
def cmd_score(manifest_path, metrics, threads, out_path, embeddings, scorer_url):
    """Score good/bad candidates of every instance with the selected metrics."""
    config = _make_run_config(0, 10_000, 0.05, metrics, threads, embeddings, scorer_url, None)
    manifest = read_manifest(manifest_path)
    records = score_manifest(
        manifest, config.metrics, build_resolver(config), threads=config.threads
    )
    write_records(records, out_path)
    click.echo(f"wrote {len(records)} score records to {out_path}")


# --------------------------------------------------------------------------
# audit
# --------------------------------------------------------------------------

@main.command("audit")
@click.option("--manifest", "manifest_path", type=click.Path(), required=True)
@click.option("--scores", "scores_path", type=click.Path(), default=None, help="reuse a precomputed scores file")
@click.option("--metrics", default="bleu4,rougeL,ciderD,meteor", show_default=True)
@click.option("--threads", type=int, default=1, show_default=True)
@click.option("--exclude-concepts", "exclude_path", type=click.Path(), default=None)
@click.option("--bonferroni", is_flag=True, default=False)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@_embedding_opts
@_seed_opts
@guarded
def cmd_audit(
    manifest_path,
    scores_path,
    metrics,
    threads,
    exclude_path,
    bonferroni,
    out_dir,
    embeddings,
    scorer_url,
    seed,
    bootstrap_samples,
    alpha,
):
    """Compute per-concept bias verdicts and emit summary + report directory.

    Exits 1 when any concept is flagged biased, 0 when none are.
    """
    config = _make_run_config(
        seed, bootstrap_samples, alpha, metrics, threads, embeddings, scorer_url,
        exclude_path, bonferroni,
    )
    manifest = read_manifest(manifest_path)

    if scores_path:
        records = read_records(scores_path)
    else:
        records = score_manifest(
            manifest, config.metrics, build_resolver(config), threads=config.threads
        )

    summaries = audit_records(records, manifest, config)

    outdir = Path(out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    write_run_metadata(outdir, "audit", config.to_json())
    write_records(records, outdir / "scores.jsonl")

    bundle = {
        "alpha": config.alpha,
        "bootstrap_samples": config.bootstrap_samples,
        "seed": config.seed,
        "bias_summaries": summaries,
    }
    write_json(bundle, outdir / "summary.json")
    write_report(bundle, outdir / "report")

    n_biased = sum(s["overall"]["n_biased"] for s in summaries.values())
    for metric_name, summary in sorted(summaries.items()):
        click.echo(
            f"{metric_name}: {summary['overall']['pct_biased']:.2f}% of concepts biased"
        )
    if n_biased:
        click.echo(f"findings: {n_biased} biased (metric, concept) pairs", err=True)
        sys.exit(EXIT_FINDINGS)


# --------------------------------------------------------------------------
# analyze-captions
# --------------------------------------------------------------------------

def _metric_scorer(metric: Metric, manifest, resolver: EmbeddingResolver | None):
    idf = build_idf([[tokenize(inst.triple.reference)] for inst in manifest])

    def scorer(inst, caption: str) -> float:
        if metric in NGRAM_METRICS:
            return score_ngram_metric(metric, tokenize(caption), [tokenize(inst.triple.reference)], idf)
        if resolver is None:
            raise ConfigurationError(f"metric {metric.value} needs embeddings")
        resolver.prefetch_texts([caption])
        text = resolver.lookup(caption)
        image = resolver.lookup(inst.image_ref)
        missing = [k for k, v in ((caption, text), (inst.image_ref, image)) if v is None]
        if missing:
            raise ConfigurationError(f"missing embeddings for: {missing}")
        clip = clipscore(text, image)
        if metric is Metric.CLIPSCORE:
            return clip
        return clip + score_ngram_metric(
            Metric.CIDER_D, tokenize(caption), [tokenize(inst.triple.reference)], idf
        )

    return scorer


@main.command("analyze-captions")
@click.option("--manifest", "manifest_path", type=click.Path(), required=True)
@click.option("--outputs", "outputs_path", type=click.Path(), required=True)
@click.option("--outputs-b", "outputs_b_path", type=click.Path(), default=None, help="second system for win-rate comparison")
@click.option("--gender-lexicon", "lexicon_path", type=click.Path(), default=None)
@click.option("--apply-correction", is_flag=True, default=False, help="also analyze rule-corrected captions")
@click.option("--compare-metric", default="clipscore", show_default=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@_embedding_opts
@_seed_opts
@guarded
def cmd_analyze_captions(
    manifest_path,
    outputs_path,
    outputs_b_path,
    lexicon_path,
    apply_correction,
    compare_metric,
    out_dir,
    embeddings,
    scorer_url,
    seed,
    bootstrap_samples,
    alpha,
):
    """Gender error analysis of system captions, optional correction pass and
    system-vs-system win rates."""
    manifest = read_manifest(manifest_path)
    outputs = read_outputs(outputs_path)
    lexicon = load_gender_lexicon(lexicon_path) if lexicon_path else DEFAULT_GENDER_LEXICON

    outdir = Path(out_dir)
    outdir.mkdir(parents=True, exist_ok=True)

    error_reports = {
        "outputs": gender_error_rate(
            outputs, manifest, lexicon, n_samples=bootstrap_samples, seed=seed, alpha=alpha
        ).to_json()
    }

    if apply_correction:
        by_id = {inst.id: inst for inst in manifest}
        corrected = []
        n_applied = 0
        for out in outputs:
            inst = by_id.get(out.instance_id)
            if inst is None:
                raise InvalidInputError(f"output references unknown instance {out.instance_id!r}")
            fix = correct_caption(out.caption, inst.triple.gender, lexicon)
            n_applied += fix.applicable
            corrected.append(SystemOutput(out.instance_id, fix.caption))
        write_outputs(corrected, outdir / "corrected_outputs.jsonl")
        error_reports["corrected"] = gender_error_rate(
            corrected, manifest, lexicon, n_samples=bootstrap_samples, seed=seed, alpha=alpha
        ).to_json()
        error_reports["corrected"]["n_corrections_applied"] = n_applied

    win_reports = {}
    if outputs_b_path:
        outputs_b = read_outputs(outputs_b_path)
        metric = parse_metrics(compare_metric)[0]
        config = _make_run_config(
            seed, bootstrap_samples, alpha, compare_metric, 1, embeddings, scorer_url, None
        )
        scorer = _metric_scorer(metric, manifest, build_resolver(config))
        win_reports[f"a_vs_b_{metric.value}"] = compare_systems(
            outputs, outputs_b, manifest, scorer
        ).to_json()

    bundle = {
        "seed": seed,
        "alpha": alpha,
        "bootstrap_samples": bootstrap_samples,
        "error_reports": error_reports,
        "win_reports": win_reports,
    }
    write_run_metadata(outdir, "analyze-captions", bundle | {"manifest": str(manifest_path)})
    write_json(bundle, outdir / "analysis.json")
    write_report(bundle, outdir / "report")

    rate = error_reports["outputs"]["error_rate"]
    click.echo(
        "gender error rate: "
        + (f"{100 * rate:.2f}%" if rate is not None else "undefined (no gendered captions)")
    )


# --------------------------------------------------------------------------
# correlate
# --------------------------------------------------------------------------

@main.command("correlate")
@click.option("--judgments", "judgments_path", type=click.Path(), required=True)
@click.option("--metrics", default="bleu4,ciderD", show_default=True, help="comma-separated specs; + composes, e.g. clipscore+ciderD")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@_embedding_opts
@guarded
def cmd_correlate(judgments_path, metrics, out_dir, embeddings, scorer_url):
    """Rank correlation of metric scores with graded human judgments."""
    judgments = read_judgments(judgments_path)
    specs = [s.strip() for s in metrics.split(",") if s.strip()]

    text_fn = image_fn = None
    if embeddings:
        store = load_store(embeddings)

        def lookup(key: str):
            emb = store.get(key)
            if emb is None:
                raise ConfigurationError(f"missing embedding for {key!r}")
            return emb

        text_fn = lookup
        image_fn = lookup

    table = correlate_metrics(judgments, specs, text_fn, image_fn)

    outdir = Path(out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    bundle = {"correlation": table, "n_judgments": len(judgments)}
    write_run_metadata(outdir, "correlate", {"metrics": specs, "judgments": str(judgments_path)})
    write_json(bundle, outdir / "correlation.json")
    write_report(bundle, outdir / "report")
    for spec in sorted(table):
        click.echo(f"{spec}: tau_c = {table[spec]:.3f}")


# --------------------------------------------------------------------------
# simulate-rl
# --------------------------------------------------------------------------

@main.command("simulate-rl")
@click.option("--config", "config_path", type=click.Path(), default=None, help="experiment JSON (defaults to the bundled biased-reward config)")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@guarded
def cmd_simulate_rl(config_path, out_dir):
    """Train the toy captioner against a metric reward and emit the error
    time series."""
    config = load_sim_config(config_path) if config_path else {}
    result = run_experiment(config)

    outdir = Path(out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    write_run_metadata(outdir, "simulate-rl", result["config"])
    write_json(result, outdir / "sim_result.json")

    first = result["series"][0]
    last = result["series"][-1]
    click.echo(
        f"greedy gender error: {100 * first['greedy_error']:.2f}% -> {100 * last['greedy_error']:.2f}% "
        f"({result['config']['reward']['kind']} reward, {len(result['series']) - 1} steps)"
    )


# --------------------------------------------------------------------------
# report
# --------------------------------------------------------------------------

@main.command("report")
@click.option("--summary", "summary_path", type=click.Path(), required=True, help="summary.json / analysis.json bundle")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@guarded
def cmd_report(summary_path, out_dir):
    """Regenerate tables and figures from a previously written JSON bundle."""
    bundle = json.loads(Path(summary_path).read_text(encoding="utf-8"))
    written = write_report(bundle, out_dir)
    for path in written:
        click.echo(f"wrote {path}")


if __name__ == "__main__":
    main()

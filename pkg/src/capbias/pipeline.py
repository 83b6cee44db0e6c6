"""Orchestration shared by the CLI commands: scoring a manifest with a set of
metrics, resolving embeddings from files or the remote service, and writing
run directories whose JSON outputs are byte-stable under a fixed seed.

Scoring is embarrassingly parallel; `threads` only changes wall time, never
output bytes, because results are collected in manifest order and every RNG
substream is keyed by content rather than schedule.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .audit import DEFAULT_ALPHA, DEFAULT_BOOTSTRAP_SAMPLES, ScoreRecord, audit_metric
from .corpus import Instance
from .embed_score import (
    Embedding,
    EmbeddingStore,
    RemoteConfig,
    clipscore,
    fetch_remote_texts,
    load_store,
)
from .errors import ConfigurationError
from .ngram_metrics import (
    IdfTable,
    Metric,
    NGRAM_METRICS,
    build_idf,
    score_ngram_metric,
)
from .textnorm import tokenize


@dataclass
class RunConfig:
    seed: int = 0
    bootstrap_samples: int = DEFAULT_BOOTSTRAP_SAMPLES
    alpha: float = DEFAULT_ALPHA
    metrics: list[Metric] = field(default_factory=lambda: list(NGRAM_METRICS))
    threads: int = 1
    embeddings_path: str | None = None
    scorer_url: str | None = None
    scorer_token: str | None = None
    exclude_concepts: set[str] = field(default_factory=set)
    bonferroni: bool = False

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise ConfigurationError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.bootstrap_samples < 100:
            raise ConfigurationError("bootstrap sample count must be at least 100")
        if not self.metrics:
            raise ConfigurationError("select at least one metric")

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "bootstrap_samples": self.bootstrap_samples,
            "alpha": self.alpha,
            "metrics": [m.value for m in self.metrics],
            "threads": self.threads,
            "embeddings_path": self.embeddings_path,
            "scorer_url": self.scorer_url,
            "exclude_concepts": sorted(self.exclude_concepts),
            "bonferroni": self.bonferroni,
        }


def parse_metrics(spec: str) -> list[Metric]:
    out = []
    for name in spec.split(","):
        name = name.strip()
        if not name:
            continue
        try:
            out.append(Metric(name))
        except ValueError:
            raise ConfigurationError(
                f"unknown metric {name!r}; choose from "
                + ",".join(m.value for m in Metric)
            ) from None
    if not out:
        raise ConfigurationError("empty metric list")
    return out


class EmbeddingResolver:
    """Looks up text/image vectors in a store, optionally filling gaps from
    the remote embedding service; missing ids are reported by name."""

    def __init__(
        self,
        store: EmbeddingStore | None = None,
        remote: RemoteConfig | None = None,
    ):
        self.store = store
        self.remote = remote
        self._fetched: dict[str, Embedding] = {}

    def prefetch_texts(self, texts: list[str]) -> None:
        if self.remote is None:
            return
        missing = [
            t
            for t in dict.fromkeys(texts)
            if (self.store is None or t not in self.store) and t not in self._fetched
        ]
        for emb in fetch_remote_texts(missing, self.remote):
            self._fetched[emb.id] = emb

    def lookup(self, key: str) -> Embedding | None:
        if self.store is not None:
            emb = self.store.get(key)
            if emb is not None:
                return emb
        return self._fetched.get(key)

    def require(self, keys: list[str]) -> list[str]:
        return [k for k in keys if self.lookup(k) is None]


def score_manifest(
    manifest: list[Instance],
    metrics: list[Metric],
    resolver: EmbeddingResolver | None = None,
    threads: int = 1,
) -> list[ScoreRecord]:
    """ScoreRecords for the good and bad candidate of every instance, for
    every requested metric, in deterministic (manifest, metric) order."""
    if not manifest:
        return []
    idf: IdfTable = build_idf([[tokenize(inst.triple.reference)] for inst in manifest])

    model_based = [m for m in metrics if m in (Metric.CLIPSCORE, Metric.HYBRID)]
    if model_based:
        if resolver is None:
            raise ConfigurationError(
                f"metrics {[m.value for m in model_based]} need embeddings "
                "(--embeddings file or --scorer-url endpoint)"
            )
        texts = []
        for inst in manifest:
            texts.extend((inst.triple.good, inst.triple.bad))
        resolver.prefetch_texts(texts)
        missing = resolver.require(
            sorted(
                {inst.image_ref for inst in manifest}
                | {inst.triple.good for inst in manifest}
                | {inst.triple.bad for inst in manifest}
            )
        )
        if missing:
            shown = ", ".join(repr(k) for k in missing[:8])
            more = f" (+{len(missing) - 8} more)" if len(missing) > 8 else ""
            raise ConfigurationError(f"missing embeddings for: {shown}{more}")

    def score_instance(inst: Instance) -> list[ScoreRecord]:
        good = tokenize(inst.triple.good)
        bad = tokenize(inst.triple.bad)
        refs = [tokenize(inst.triple.reference)]
        records = []
        clip_pair: tuple[float, float] | None = None
        if model_based:
            image = resolver.lookup(inst.image_ref)
            clip_pair = (
                clipscore(resolver.lookup(inst.triple.good), image),
                clipscore(resolver.lookup(inst.triple.bad), image),
            )
        for metric in metrics:
            if metric in NGRAM_METRICS:
                sg = score_ngram_metric(metric, good, refs, idf)
                sb = score_ngram_metric(metric, bad, refs, idf)
            elif metric is Metric.CLIPSCORE:
                sg, sb = clip_pair
            else:  # hybrid: clipscore + ciderD with unit weights
                cg = score_ngram_metric(Metric.CIDER_D, good, refs, idf)
                cb = score_ngram_metric(Metric.CIDER_D, bad, refs, idf)
                sg, sb = clip_pair[0] + cg, clip_pair[1] + cb
            records.append(
                ScoreRecord(
                    instance_id=inst.id, metric=metric, score_good=sg, score_bad=sb
                )
            )
        return records

    if threads <= 1:
        nested = [score_instance(inst) for inst in manifest]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            nested = list(pool.map(score_instance, manifest))
    return [rec for group in nested for rec in group]


def audit_records(
    records: list[ScoreRecord],
    manifest: list[Instance],
    config: RunConfig,
) -> dict:
    """Per-metric bias summaries as a JSON-ready bundle section."""
    summaries = {}
    for metric in config.metrics:
        summary = audit_metric(
            records,
            manifest,
            metric,
            n_samples=config.bootstrap_samples,
            seed=config.seed,
            alpha=config.alpha,
            exclude=config.exclude_concepts,
            bonferroni=config.bonferroni,
        )
        summaries[metric.value] = summary.to_json()
    return summaries


def build_resolver(config: RunConfig) -> EmbeddingResolver | None:
    store = load_store(config.embeddings_path) if config.embeddings_path else None
    remote = None
    if config.scorer_url:
        remote = RemoteConfig(endpoint=config.scorer_url, token=config.scorer_token)
    if store is None and remote is None:
        return None
    return EmbeddingResolver(store=store, remote=remote)


def write_json(payload: dict, path: str | Path) -> None:
    """Canonical JSON writer: sorted keys, fixed separators, trailing newline.

    Identical payloads produce identical bytes, which the determinism
    contract of the seeded commands relies on.
    """
    Path(path).write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def write_run_metadata(outdir: Path, command: str, config_echo: dict) -> None:
    # deliberately no wall-clock fields: outputs must be byte-stable per seed
    write_json(
        {"command": command, "config": config_echo, "version": __version__},
        outdir / "run_meta.json",
    )

"""Agreement between metric scores and graded human judgments via Stuart's
tau-c, plus the per-metric correlation table over a judged caption dataset.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, InvalidInputError
from .ngram_metrics import (
    IdfTable,
    Metric,
    build_idf,
    score_ngram_metric,
)
from .textnorm import tokenize

_BLOCK = 512


@dataclass(frozen=True)
class JudgedPair:
    metric_score: float
    human_rating: int


def _concordance(x: np.ndarray, y: np.ndarray) -> int:
    """C - D summed over all unordered pairs, blockwise to bound memory."""
    n = x.size
    total = 0
    for start in range(0, n, _BLOCK):
        xs = x[start : start + _BLOCK, None]
        ys = y[start : start + _BLOCK, None]
        rest_x = x[None, start:]
        rest_y = y[None, start:]
        sx = np.sign(xs - rest_x)
        sy = np.sign(ys - rest_y)
        prod = sx * sy
        # each block counts its pairs with all later elements plus itself;
        # the upper triangle of the self block is the unordered pair set
        block = prod[:, : xs.size]
        total += int(np.triu(block, k=1).sum()) + int(prod[:, xs.size :].sum())
    return total


def kendall_tau_c(pairs: list[JudgedPair]) -> float:
    """Stuart's tau-c, reported on the x100 scale.

    tau_c = (C - D) * 2m / (n^2 * (m - 1)), with m the smaller of the number
    of distinct scores and distinct rating levels. All ratings identical
    (m = 1) leaves the statistic undefined.
    """
    if len(pairs) < 2:
        raise InvalidInputError("tau-c needs at least two pairs")
    x = np.asarray([p.metric_score for p in pairs], dtype=np.float64)
    y = np.asarray([p.human_rating for p in pairs], dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("metric scores must be finite")
    m = min(np.unique(x).size, np.unique(y).size)
    if m < 2:
        raise InvalidInputError(
            "correlation undefined: scores or ratings have a single level"
        )
    n = x.size
    cd = _concordance(x, y)
    return 100.0 * (2.0 * m * cd) / (n * n * (m - 1))


# --------------------------------------------------------------------------
# Judged datasets and the correlation table
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Judgment:
    candidate: str
    references: list[str]
    image_ref: str
    rating: int


def read_judgments(path: str | Path) -> list[Judgment]:
    """JSON Lines: {"candidate":..., "references":[...], "image_ref":..., "rating": int}.

    Repeated expert ratings for one pair stay separate rows; nothing is averaged.
    """
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
                rows.append(
                    Judgment(
                        candidate=raw["candidate"],
                        references=list(raw["references"]),
                        image_ref=raw["image_ref"],
                        rating=int(raw["rating"]),
                    )
                )
            except (KeyError, ValueError) as exc:
                raise InvalidInputError(f"{path}:{lineno}: bad judgment row: {exc}") from exc
    return rows


def parse_metric_spec(spec: str) -> list[Metric]:
    """A metric spec is a single metric or a "+"-composition like clipscore+bleu4."""
    parts = []
    for name in spec.split("+"):
        try:
            parts.append(Metric(name.strip()))
        except ValueError:
            raise InvalidInputError(f"unknown metric {name.strip()!r} in {spec!r}") from None
    return parts


def correlate_metrics(
    judgments: list[Judgment],
    metric_specs: list[str],
    text_embedding=None,
    image_embedding=None,
) -> dict[str, float]:
    """tau-c per metric spec over a judged dataset.

    `text_embedding(caption)` and `image_embedding(image_ref)` supply vectors
    for the model-based metrics; omitting them restricts the table to n-gram
    metrics.
    """
    if not judgments:
        raise InvalidInputError("no judgments supplied")

    from .embed_score import clipscore  # local import to avoid cycle at module load

    idf: IdfTable = build_idf(
        [[tokenize(r) for r in j.references] for j in judgments]
    )

    needs_embeddings = any(
        Metric.CLIPSCORE in parse_metric_spec(s) or Metric.HYBRID in parse_metric_spec(s)
        for s in metric_specs
    )
    if needs_embeddings and (text_embedding is None or image_embedding is None):
        raise ConfigurationError(
            "clipscore/hybrid correlation requires embeddings for candidates and images"
        )

    def single_scores(metric: Metric) -> list[float]:
        out = []
        for j in judgments:
            cand = tokenize(j.candidate)
            refs = [tokenize(r) for r in j.references]
            if metric is Metric.CLIPSCORE:
                out.append(clipscore(text_embedding(j.candidate), image_embedding(j.image_ref)))
            elif metric is Metric.HYBRID:
                clip = clipscore(text_embedding(j.candidate), image_embedding(j.image_ref))
                out.append(clip + score_ngram_metric(Metric.CIDER_D, cand, refs, idf))
            else:
                out.append(score_ngram_metric(metric, cand, refs, idf))
        return out

    cache: dict[Metric, list[float]] = {}
    table: dict[str, float] = {}
    ratings = [j.rating for j in judgments]
    for spec in metric_specs:
        parts = parse_metric_spec(spec)
        totals = np.zeros(len(judgments))
        for metric in parts:
            if metric not in cache:
                cache[metric] = single_scores(metric)
            totals += np.asarray(cache[metric])
        pairs = [JudgedPair(s, r) for s, r in zip(totals.tolist(), ratings)]
        table[spec] = kendall_tau_c(pairs)
    return table

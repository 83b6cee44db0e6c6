"""Bias measurement: per-cell pairwise accuracy, bootstrap significance,
man-/woman-biased concept classification, summaries and agreement statistics.

All verdicts depend only on the ordering of good/bad scores, never on their
magnitudes, so any strictly increasing rescaling of a metric leaves every
output unchanged.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .corpus import Concept, Gender, Instance
from .errors import InsufficientDataError, InvalidInputError
from .ngram_metrics import Metric

DEFAULT_BOOTSTRAP_SAMPLES = 10_000
DEFAULT_ALPHA = 0.05


@dataclass(frozen=True)
class ScoreRecord:
    instance_id: str
    metric: Metric
    score_good: float
    score_bad: float

    def __post_init__(self):
        if not (math.isfinite(self.score_good) and math.isfinite(self.score_bad)):
            raise InvalidInputError(f"non-finite scores for {self.instance_id!r}")

    @property
    def win(self) -> bool:
        # strict inequality: ties count against the metric under audit
        return self.score_good > self.score_bad


def write_records(records: list[ScoreRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(
                json.dumps(
                    {
                        "instance_id": rec.instance_id,
                        "metric": rec.metric.value,
                        "score_good": rec.score_good,
                        "score_bad": rec.score_bad,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def read_records(path: str | Path) -> list[ScoreRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                records.append(
                    ScoreRecord(
                        instance_id=row["instance_id"],
                        metric=Metric(row["metric"]),
                        score_good=float(row["score_good"]),
                        score_bad=float(row["score_bad"]),
                    )
                )
            except (KeyError, ValueError) as exc:
                raise InvalidInputError(f"{path}:{lineno}: bad score row: {exc}") from exc
    return records


class BiasLabel(str, Enum):
    MAN_BIASED = "man_biased"
    WOMAN_BIASED = "woman_biased"
    NEUTRAL = "neutral"


@dataclass(frozen=True)
class AuditCell:
    gender: Gender
    concept: Concept
    n: int
    wins: int

    @property
    def accuracy(self) -> float:
        return self.wins / self.n


@dataclass(frozen=True)
class BiasVerdict:
    concept: Concept
    label: BiasLabel
    p_value: float
    acc_man: float
    acc_woman: float
    n_man: int
    n_woman: int


def substream(seed: int, *names: str) -> np.random.Generator:
    """Deterministic RNG derived from (seed, names...), independent of the
    order in which cells are processed."""
    entropy = [seed & 0xFFFFFFFF]
    for name in names:
        digest = hashlib.sha256(name.encode("utf-8")).digest()
        entropy.append(int.from_bytes(digest[:8], "little"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def cell_accuracy(
    records: list[ScoreRecord], gender: Gender, concept: Concept
) -> AuditCell:
    """Pairwise accuracy of one (gender, concept) cell from its score records."""
    if not records:
        raise InsufficientDataError(
            f"no records for cell ({gender.value}, {concept.word})",
            cell=(gender.value, concept.word),
        )
    wins = sum(1 for r in records if r.win)
    return AuditCell(gender=gender, concept=concept, n=len(records), wins=wins)


def bootstrap_two_sample(
    wins_a: np.ndarray | list[bool],
    wins_b: np.ndarray | list[bool],
    n_samples: int,
    rng: np.random.Generator,
) -> tuple[float, float, float]:
    """Two-sided bootstrap p-value for a difference of two Bernoulli rates.

    Each group's indicators are resampled with replacement independently;
    because the indicators are 0/1, the resampled mean is exactly a scaled
    binomial draw. Returns (rate_a, rate_b, p).
    """
    a = np.asarray(wins_a, dtype=bool)
    b = np.asarray(wins_b, dtype=bool)
    if a.size == 0 or b.size == 0:
        raise InsufficientDataError("bootstrap needs non-empty groups")
    rate_a = a.mean()
    rate_b = b.mean()
    res_a = rng.binomial(a.size, rate_a, size=n_samples) / a.size
    res_b = rng.binomial(b.size, rate_b, size=n_samples) / b.size
    delta = res_b - res_a
    p = 2.0 * min((delta <= 0).mean(), (delta >= 0).mean())
    return float(rate_a), float(rate_b), float(min(max(p, 0.0), 1.0))


def bootstrap_bias_test(
    records_man: list[ScoreRecord],
    records_woman: list[ScoreRecord],
    concept: Concept,
    n_samples: int = DEFAULT_BOOTSTRAP_SAMPLES,
    seed: int = 0,
    alpha: float = DEFAULT_ALPHA,
    metric_name: str = "",
) -> BiasVerdict:
    """Classify a concept as man-biased, woman-biased, or neutral.

    The test statistic is the accuracy difference (woman - man) under
    independent within-cell resampling of per-instance win indicators; the
    RNG substream depends only on (seed, concept, metric) so concepts can be
    processed in any order or in parallel.
    """
    cell_man = cell_accuracy(records_man, Gender.MAN, concept)
    cell_woman = cell_accuracy(records_woman, Gender.WOMAN, concept)
    rng = substream(seed, concept.word, metric_name)
    acc_man, acc_woman, p = bootstrap_two_sample(
        [r.win for r in records_man],
        [r.win for r in records_woman],
        n_samples,
        rng,
    )
    label = BiasLabel.NEUTRAL
    if p < alpha:
        if acc_man > acc_woman:
            label = BiasLabel.MAN_BIASED
        elif acc_woman > acc_man:
            label = BiasLabel.WOMAN_BIASED
    return BiasVerdict(
        concept=concept,
        label=label,
        p_value=p,
        acc_man=cell_man.accuracy,
        acc_woman=cell_woman.accuracy,
        n_man=cell_man.n,
        n_woman=cell_woman.n,
    )


@dataclass
class BiasSummary:
    per_category: dict[str, dict]
    overall: dict
    verdicts: list[BiasVerdict]
    excluded: list[str]

    def to_json(self) -> dict:
        return {
            "per_category": self.per_category,
            "overall": self.overall,
            "excluded_concepts": sorted(self.excluded),
            "concepts": [
                {
                    "concept": v.concept.word,
                    "category": v.concept.category.value,
                    "label": v.label.value,
                    "p_value": v.p_value,
                    "acc_man": v.acc_man,
                    "acc_woman": v.acc_woman,
                    "n_man": v.n_man,
                    "n_woman": v.n_woman,
                }
                for v in self.verdicts
            ],
        }


def summarize(verdicts: list[BiasVerdict], exclude: set[str] | None = None) -> BiasSummary:
    """Percentage of non-neutral concepts per category and overall.

    `exclude` drops concepts (by word) before computing percentages, which
    supports re-audits with imbalanced concept groups removed.
    """
    exclude = exclude or set()
    kept = [v for v in verdicts if v.concept.word not in exclude]
    by_cat: dict[str, list[BiasVerdict]] = defaultdict(list)
    for v in kept:
        by_cat[v.concept.category.value].append(v)

    def stats(group: list[BiasVerdict]) -> dict:
        biased = sum(1 for v in group if v.label is not BiasLabel.NEUTRAL)
        return {
            "n_concepts": len(group),
            "n_biased": biased,
            "pct_biased": 100.0 * biased / len(group) if group else 0.0,
        }

    return BiasSummary(
        per_category={cat: stats(group) for cat, group in sorted(by_cat.items())},
        overall=stats(kept),
        verdicts=kept,
        excluded=sorted(
            {v.concept.word for v in verdicts if v.concept.word in exclude}
        ),
    )


def group_records_by_cell(
    records: list[ScoreRecord], manifest: list[Instance]
) -> dict[tuple[Metric, Concept, Gender], list[ScoreRecord]]:
    """Join score records to manifest cells; unknown instance ids are an error."""
    by_id = {inst.id: inst for inst in manifest}
    grouped: dict[tuple[Metric, Concept, Gender], list[ScoreRecord]] = defaultdict(list)
    for rec in records:
        inst = by_id.get(rec.instance_id)
        if inst is None:
            raise InvalidInputError(f"score record references unknown instance {rec.instance_id!r}")
        grouped[(rec.metric, inst.triple.concept, inst.triple.gender)].append(rec)
    return dict(grouped)


def audit_metric(
    records: list[ScoreRecord],
    manifest: list[Instance],
    metric: Metric,
    n_samples: int = DEFAULT_BOOTSTRAP_SAMPLES,
    seed: int = 0,
    alpha: float = DEFAULT_ALPHA,
    exclude: set[str] | None = None,
    bonferroni: bool = False,
) -> BiasSummary:
    """Run the full per-concept bias classification for one metric."""
    grouped = group_records_by_cell(
        [r for r in records if r.metric is metric], manifest
    )
    concepts = sorted(
        {c for (_, c, _) in grouped}, key=lambda c: (c.category.value, c.word)
    )
    effective_alpha = alpha / len(concepts) if (bonferroni and concepts) else alpha
    verdicts = []
    for concept in concepts:
        man = grouped.get((metric, concept, Gender.MAN), [])
        woman = grouped.get((metric, concept, Gender.WOMAN), [])
        if not man or not woman:
            raise InsufficientDataError(
                f"concept {concept.word!r} is missing a gender cell for {metric.value}",
                cell=(concept.word,),
            )
        verdicts.append(
            bootstrap_bias_test(
                man,
                woman,
                concept,
                n_samples=n_samples,
                seed=seed,
                alpha=effective_alpha,
                metric_name=metric.value,
            )
        )
    return summarize(verdicts, exclude=exclude)


def bootstrap_rate_ci(
    indicators: np.ndarray | list[bool],
    n_samples: int,
    rng: np.random.Generator,
    level: float = 0.95,
) -> tuple[float, float, float]:
    """Percentile bootstrap CI for a Bernoulli rate; returns (rate, low, high)."""
    arr = np.asarray(indicators, dtype=bool)
    if arr.size == 0:
        raise InsufficientDataError("CI needs at least one indicator")
    rate = arr.mean()
    res = rng.binomial(arr.size, rate, size=n_samples) / arr.size
    lo, hi = np.quantile(res, [(1 - level) / 2, 1 - (1 - level) / 2])
    return float(rate), float(lo), float(hi)


def cohen_kappa(labels_a: list, labels_b: list) -> float:
    """Chance-corrected agreement: kappa = (p_o - p_e) / (1 - p_e).

    Defined for any hashable label set; returns 1.0 in the degenerate case
    where both raters are constant and identical (p_e = p_o = 1).
    """
    if len(labels_a) != len(labels_b):
        raise InvalidInputError(
            f"label lists differ in length: {len(labels_a)} vs {len(labels_b)}"
        )
    n = len(labels_a)
    if n == 0:
        raise InvalidInputError("label lists must be non-empty")
    p_o = sum(1 for a, b in zip(labels_a, labels_b) if a == b) / n
    categories = set(labels_a) | set(labels_b)
    p_e = sum(
        (labels_a.count(c) / n) * (labels_b.count(c) / n) for c in categories
    )
    if p_e == 1.0:
        return 1.0
    return (p_o - p_e) / (1.0 - p_e)

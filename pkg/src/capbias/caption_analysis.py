"""Analysis of system-generated captions: gender prediction errors against the
manifest's true genders, reference-based image gender labeling, rule-based
gender correction, and head-to-head metric win rates between two systems.

Gender words are matched on tokens, never substrings, so "woman" inside
"workman" can not fire.
"""

from __future__ import annotations

import json
import re
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable

import numpy as np

from .audit import bootstrap_rate_ci, bootstrap_two_sample, substream
from .corpus import Gender, Instance
from .errors import InvalidInputError
from .textnorm import tokenize


@dataclass(frozen=True)
class GenderLexicon:
    male_words: frozenset[str]
    female_words: frozenset[str]

    def __post_init__(self):
        if not self.male_words or not self.female_words:
            raise InvalidInputError("gender lexicon sides must be non-empty")
        overlap = self.male_words & self.female_words
        if overlap:
            raise InvalidInputError(f"gender lexicon sides overlap: {sorted(overlap)}")
        for w in self.male_words | self.female_words:
            if w != w.lower():
                raise InvalidInputError(f"gender lexicon word must be lowercase: {w!r}")


DEFAULT_GENDER_LEXICON = GenderLexicon(
    male_words=frozenset(
        {"man", "men", "male", "boy", "boys", "gentleman", "father", "husband", "his", "he"}
    ),
    female_words=frozenset(
        {"woman", "women", "female", "girl", "girls", "lady", "mother", "wife", "her", "she"}
    ),
)


def load_gender_lexicon(path: str | Path) -> GenderLexicon:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return GenderLexicon(
        male_words=frozenset(raw["male"]), female_words=frozenset(raw["female"])
    )


class GenderCall(str, Enum):
    MAN = "man"
    WOMAN = "woman"
    NEUTRAL = "neutral"
    MIXED = "mixed"


def detect_gender(caption: str, lexicon: GenderLexicon = DEFAULT_GENDER_LEXICON) -> GenderCall:
    """Lexicon-based gender call on the tokenized caption."""
    tokens = set(tokenize(caption))
    has_male = bool(tokens & lexicon.male_words)
    has_female = bool(tokens & lexicon.female_words)
    if has_male and has_female:
        return GenderCall.MIXED
    if has_male:
        return GenderCall.MAN
    if has_female:
        return GenderCall.WOMAN
    return GenderCall.NEUTRAL


def label_image_gender(
    references: list[str], lexicon: GenderLexicon = DEFAULT_GENDER_LEXICON
) -> GenderCall:
    """Image gender from its reference captions: "woman" when some reference
    has a female word and none has a male word; symmetric for "man"; images
    with both (mixed) or neither (neutral) are excluded from analyses."""
    if not references:
        raise InvalidInputError("need at least one reference caption")
    any_male = False
    any_female = False
    for ref in references:
        tokens = set(tokenize(ref))
        any_male = any_male or bool(tokens & lexicon.male_words)
        any_female = any_female or bool(tokens & lexicon.female_words)
    if any_male and any_female:
        return GenderCall.MIXED
    if any_female:
        return GenderCall.WOMAN
    if any_male:
        return GenderCall.MAN
    return GenderCall.NEUTRAL


# --------------------------------------------------------------------------
# Rule-based gender correction
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Correction:
    caption: str
    applicable: bool


_WORD_RE = {
    Gender.MAN: re.compile(r"\bwoman\b", re.IGNORECASE),
    Gender.WOMAN: re.compile(r"\bman\b", re.IGNORECASE),
}
_REPLACEMENT = {Gender.MAN: "man", Gender.WOMAN: "woman"}


def correct_caption(
    caption: str,
    true_gender: Gender,
    lexicon: GenderLexicon = DEFAULT_GENDER_LEXICON,
) -> Correction:
    """Swap a lone wrong "man"/"woman" to the image's true gender.

    Applicable only when the caption's sole wrong-gender evidence is the word
    "man" (for woman images) or "woman" (for man images) and no words of the
    true gender appear; anything else is returned unchanged and flagged
    not applicable, mirroring the limited scenario the rule is sound in.
    """
    tokens = set(tokenize(caption))
    wrong_word = "man" if true_gender is Gender.WOMAN else "woman"
    wrong_side = (
        lexicon.male_words if true_gender is Gender.WOMAN else lexicon.female_words
    )
    true_side = (
        lexicon.female_words if true_gender is Gender.WOMAN else lexicon.male_words
    )
    wrong_present = tokens & wrong_side
    if wrong_present != {wrong_word} or tokens & true_side:
        return Correction(caption=caption, applicable=False)
    fixed = _WORD_RE[true_gender].sub(_REPLACEMENT[true_gender], caption)
    return Correction(caption=fixed, applicable=True)


# --------------------------------------------------------------------------
# Gender prediction error rates
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SystemOutput:
    instance_id: str
    caption: str


def read_outputs(path: str | Path) -> list[SystemOutput]:
    outputs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                outputs.append(SystemOutput(row["instance_id"], row["caption"]))
            except (KeyError, ValueError) as exc:
                raise InvalidInputError(f"{path}:{lineno}: bad output row: {exc}") from exc
    return outputs


def write_outputs(outputs: list[SystemOutput], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for out in outputs:
            fh.write(
                json.dumps(
                    {"instance_id": out.instance_id, "caption": out.caption},
                    sort_keys=True,
                )
                + "\n"
            )


@dataclass
class ErrorReport:
    n_outputs: int
    n_evaluated: int
    n_errors: int
    n_neutral: int
    n_mixed: int
    error_rate: float | None
    ci_low: float | None
    ci_high: float | None
    by_cell: dict[tuple[str, str], dict]
    concept_gaps: list[dict]
    pct_concepts_significant: float | None
    flagged_ids: list[str]

    def to_json(self) -> dict:
        return {
            "n_outputs": self.n_outputs,
            "n_evaluated": self.n_evaluated,
            "n_errors": self.n_errors,
            "n_neutral": self.n_neutral,
            "n_mixed": self.n_mixed,
            "error_rate": self.error_rate,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "by_cell": [
                {"concept": c, "gender": g, **stats}
                for (c, g), stats in sorted(self.by_cell.items())
            ],
            "concept_gaps": self.concept_gaps,
            "pct_concepts_significant": self.pct_concepts_significant,
            "flagged_ids": self.flagged_ids,
        }


def gender_error_rate(
    outputs: list[SystemOutput],
    manifest: list[Instance],
    lexicon: GenderLexicon = DEFAULT_GENDER_LEXICON,
    n_samples: int = 10_000,
    seed: int = 0,
    alpha: float = 0.05,
) -> ErrorReport:
    """Fraction of captions whose detected gender is the opposite of the true
    one. Neutral and mixed captions leave the denominator but are counted, and
    their ids are surfaced for manual review."""
    by_id = {inst.id: inst for inst in manifest}
    errors_by_cell: dict[tuple[str, str], list[bool]] = defaultdict(list)
    n_neutral = n_mixed = 0
    flagged: list[str] = []
    indicators: list[bool] = []

    for out in outputs:
        inst = by_id.get(out.instance_id)
        if inst is None:
            raise InvalidInputError(f"output references unknown instance {out.instance_id!r}")
        call = detect_gender(out.caption, lexicon)
        if call is GenderCall.NEUTRAL:
            n_neutral += 1
            continue
        if call is GenderCall.MIXED:
            n_mixed += 1
            continue
        true_gender = inst.triple.gender
        is_error = call.value == true_gender.opposite.value
        indicators.append(is_error)
        errors_by_cell[(inst.triple.concept.word, true_gender.value)].append(is_error)
        if is_error:
            flagged.append(out.instance_id)

    if not indicators:
        return ErrorReport(
            n_outputs=len(outputs),
            n_evaluated=0,
            n_errors=0,
            n_neutral=n_neutral,
            n_mixed=n_mixed,
            error_rate=None,
            ci_low=None,
            ci_high=None,
            by_cell={},
            concept_gaps=[],
            pct_concepts_significant=None,
            flagged_ids=[],
        )

    rate, lo, hi = bootstrap_rate_ci(
        indicators, n_samples, substream(seed, "gender_error_rate")
    )

    by_cell = {
        key: {"n": len(errs), "errors": int(sum(errs)), "rate": float(np.mean(errs))}
        for key, errs in errors_by_cell.items()
    }

    concepts = sorted({c for (c, _) in errors_by_cell})
    gaps: list[dict] = []
    n_sig = 0
    for concept in concepts:
        man_errs = errors_by_cell.get((concept, Gender.MAN.value), [])
        woman_errs = errors_by_cell.get((concept, Gender.WOMAN.value), [])
        if not man_errs or not woman_errs:
            continue
        rng = substream(seed, "gender_error_gap", concept)
        rate_man, rate_woman, p = bootstrap_two_sample(
            man_errs, woman_errs, n_samples, rng
        )
        significant = p < alpha
        n_sig += significant
        gaps.append(
            {
                "concept": concept,
                "rate_man": rate_man,
                "rate_woman": rate_woman,
                "p_value": p,
                "significant": significant,
            }
        )

    return ErrorReport(
        n_outputs=len(outputs),
        n_evaluated=len(indicators),
        n_errors=int(sum(indicators)),
        n_neutral=n_neutral,
        n_mixed=n_mixed,
        error_rate=rate,
        ci_low=lo,
        ci_high=hi,
        by_cell=by_cell,
        concept_gaps=gaps,
        pct_concepts_significant=(100.0 * n_sig / len(gaps)) if gaps else None,
        flagged_ids=flagged,
    )


# --------------------------------------------------------------------------
# System-vs-system comparison
# --------------------------------------------------------------------------

@dataclass
class WinReport:
    n: int
    mean_a: float
    mean_b: float
    win_pct_a: float
    win_pct_b: float
    by_category: dict[str, dict]

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "mean_a": self.mean_a,
            "mean_b": self.mean_b,
            "win_pct_a": self.win_pct_a,
            "win_pct_b": self.win_pct_b,
            "by_category": self.by_category,
        }


def compare_systems(
    outputs_a: list[SystemOutput],
    outputs_b: list[SystemOutput],
    manifest: list[Instance],
    scorer: Callable[[Instance, str], float],
) -> WinReport:
    """Mean score per system and the percentage of instances on which each is
    favored; exact ties contribute half a win to both sides."""
    ids_a = {o.instance_id for o in outputs_a}
    ids_b = {o.instance_id for o in outputs_b}
    if ids_a != ids_b:
        diff = sorted(ids_a.symmetric_difference(ids_b))
        raise InvalidInputError(f"instance ids not aligned between systems: {diff[:10]}")

    by_id = {inst.id: inst for inst in manifest}
    caption_a = {o.instance_id: o.caption for o in outputs_a}
    caption_b = {o.instance_id: o.caption for o in outputs_b}

    scores_a: list[float] = []
    scores_b: list[float] = []
    wins_a = 0.0
    cat_rows: dict[str, list[tuple[float, float]]] = defaultdict(list)

    for inst_id in sorted(ids_a):
        inst = by_id.get(inst_id)
        if inst is None:
            raise InvalidInputError(f"outputs reference unknown instance {inst_id!r}")
        sa = scorer(inst, caption_a[inst_id])
        sb = scorer(inst, caption_b[inst_id])
        scores_a.append(sa)
        scores_b.append(sb)
        wins_a += 1.0 if sa > sb else (0.5 if sa == sb else 0.0)
        cat_rows[inst.triple.concept.category.value].append((sa, sb))

    n = len(scores_a)
    if n == 0:
        raise InvalidInputError("no aligned outputs to compare")

    def cat_stats(rows: list[tuple[float, float]]) -> dict:
        w = sum(1.0 if a > b else (0.5 if a == b else 0.0) for a, b in rows)
        return {
            "n": len(rows),
            "mean_a": float(np.mean([a for a, _ in rows])),
            "mean_b": float(np.mean([b for _, b in rows])),
            "win_pct_a": 100.0 * w / len(rows),
            "win_pct_b": 100.0 * (len(rows) - w) / len(rows),
        }

    return WinReport(
        n=n,
        mean_a=float(np.mean(scores_a)),
        mean_b=float(np.mean(scores_b)),
        win_pct_a=100.0 * wins_a / n,
        win_pct_b=100.0 * (n - wins_a) / n,
        by_category={cat: cat_stats(rows) for cat, rows in sorted(cat_rows.items())},
    )

"""Dataset manifests built from gender x concept lexicons with fixed caption templates.

Candidate captions come in pairs that differ only in the gender word; the
reference prepends "a photo of " to the good candidate. Three concept
categories exist, each with its own template:

    profession:  a {gender} who is a/an {profession}
    activity:    a {gender} who is {activity}
    object:      a {gender} with a/an {object}
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .errors import InvalidInputError, ManifestValidationError


class Category(str, Enum):
    PROFESSION = "profession"
    ACTIVITY = "activity"
    OBJECT = "object"


class Gender(str, Enum):
    MAN = "man"
    WOMAN = "woman"

    @property
    def opposite(self) -> "Gender":
        return Gender.WOMAN if self is Gender.MAN else Gender.MAN


@dataclass(frozen=True)
class Concept:
    word: str
    category: Category

    def __post_init__(self):
        if not self.word:
            raise InvalidInputError("concept word must be non-empty")
        if self.word != self.word.lower():
            raise InvalidInputError(f"concept word must be lowercase: {self.word!r}")


@dataclass(frozen=True)
class CaptionTriple:
    reference: str
    good: str
    bad: str
    gender: Gender
    concept: Concept


@dataclass(frozen=True)
class Instance:
    id: str
    image_ref: str
    triple: CaptionTriple

    def __post_init__(self):
        if not self.image_ref:
            raise InvalidInputError(f"instance {self.id!r} has empty image_ref")


VOWELS = frozenset("aeiou")


def article_for(word: str, overrides: dict[str, str] | None = None) -> str:
    """Indefinite article for `word`: "an" before a vowel-initial word, else "a".

    The vowel-initial heuristic is wrong for words like "hour" or "unicorn";
    `overrides` maps such words to their article explicitly.
    """
    if overrides and word in overrides:
        art = overrides[word]
        if art not in ("a", "an"):
            raise InvalidInputError(f"article override for {word!r} must be 'a' or 'an'")
        return art
    return "an" if word[0] in VOWELS else "a"


def render_captions(
    gender: Gender,
    concept: Concept,
    article_overrides: dict[str, str] | None = None,
) -> CaptionTriple:
    """Render the (reference, good, bad) caption triple for one gender/concept pair."""
    other = gender.opposite.value
    if concept.category is Category.PROFESSION:
        art = article_for(concept.word, article_overrides)
        good = f"a {gender.value} who is {art} {concept.word}"
        bad = f"a {other} who is {art} {concept.word}"
    elif concept.category is Category.ACTIVITY:
        good = f"a {gender.value} who is {concept.word}"
        bad = f"a {other} who is {concept.word}"
    else:
        art = article_for(concept.word, article_overrides)
        good = f"a {gender.value} with {art} {concept.word}"
        bad = f"a {other} with {art} {concept.word}"
    return CaptionTriple(
        reference="a photo of " + good,
        good=good,
        bad=bad,
        gender=gender,
        concept=concept,
    )


# --------------------------------------------------------------------------
# Lexicons
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Lexicon:
    professions: tuple[str, ...]
    activities: tuple[str, ...]
    objects: tuple[str, ...]
    article_overrides: dict[str, str] = field(default_factory=dict)

    def concepts(self) -> list[Concept]:
        out = [Concept(w, Category.PROFESSION) for w in self.professions]
        out += [Concept(w, Category.ACTIVITY) for w in self.activities]
        out += [Concept(w, Category.OBJECT) for w in self.objects]
        return out


#: Desk-scale lexicon bundled for tests and demos (18 concepts, 6 per category).
DEFAULT_LEXICON = Lexicon(
    professions=("doctor", "nurse", "chef", "engineer", "accountant", "teacher"),
    activities=("reading", "cooking", "washing", "running", "praying", "driving"),
    objects=("apron", "necklace", "basketball", "wine", "helmet", "purse"),
)


def load_lexicon(path: str | Path) -> Lexicon:
    """Load a lexicon JSON file: {"professions": [...], "activities": [...],
    "objects": [...], "article_overrides": {word: "a"|"an"}}."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    try:
        return Lexicon(
            professions=tuple(raw.get("professions", ())),
            activities=tuple(raw.get("activities", ())),
            objects=tuple(raw.get("objects", ())),
            article_overrides=dict(raw.get("article_overrides", {})),
        )
    except (TypeError, AttributeError) as exc:
        raise InvalidInputError(f"malformed lexicon file {path}: {exc}") from exc


def save_lexicon(lexicon: Lexicon, path: str | Path) -> None:
    payload = {
        "professions": list(lexicon.professions),
        "activities": list(lexicon.activities),
        "objects": list(lexicon.objects),
        "article_overrides": dict(lexicon.article_overrides),
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# Manifest construction
# --------------------------------------------------------------------------

ImageMap = dict[tuple[str, Gender], list[str]]


def build_manifest(
    concepts: list[Concept],
    genders: list[Gender],
    images: ImageMap,
    article_overrides: dict[str, str] | None = None,
) -> list[Instance]:
    """One Instance per (image_ref, gender, concept), in input order.

    Instance ids are `{category}/{concept}/{gender}/{ordinal}` so joins stay
    stable across modules. Duplicate image refs within one (concept, gender)
    pair are a hard error.
    """
    instances: list[Instance] = []
    for concept in concepts:
        for gender in genders:
            refs = images.get((concept.word, gender), [])
            dupes = [ref for ref, cnt in Counter(refs).items() if cnt > 1]
            if dupes:
                raise ManifestValidationError(
                    f"duplicate image refs for ({gender.value}, {concept.word}): "
                    + ", ".join(sorted(dupes)),
                    duplicates=sorted(dupes),
                )
            triple = render_captions(gender, concept, article_overrides)
            for ordinal, ref in enumerate(refs):
                instances.append(
                    Instance(
                        id=f"{concept.category.value}/{concept.word}/{gender.value}/{ordinal}",
                        image_ref=ref,
                        triple=triple,
                    )
                )
    return instances


def synthetic_image_map(
    concepts: list[Concept],
    genders: list[Gender],
    per_cell: int,
) -> ImageMap:
    """Deterministic placeholder image refs for desk-scale manifests."""
    return {
        (c.word, g): [
            f"img://{c.category.value}/{c.word}/{g.value}/{i}" for i in range(per_cell)
        ]
        for c in concepts
        for g in genders
    }


# --------------------------------------------------------------------------
# Validation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Finding:
    kind: str
    instance_id: str
    message: str


@dataclass
class ValidationReport:
    findings: list[Finding]
    counts: dict[tuple[str, str, str], int]  # (category, concept, gender) -> n

    @property
    def ok(self) -> bool:
        return not self.findings

    def count_table(self) -> list[dict]:
        rows = []
        for (category, concept, gender), n in sorted(self.counts.items()):
            rows.append(
                {"category": category, "concept": concept, "gender": gender, "n": n}
            )
        return rows


def _single_token_swap(good: str, bad: str, gender: Gender) -> bool:
    gtoks = good.split()
    btoks = bad.split()
    if len(gtoks) != len(btoks):
        return False
    diffs = [i for i, (a, b) in enumerate(zip(gtoks, btoks)) if a != b]
    if len(diffs) != 1:
        return False
    i = diffs[0]
    return gtoks[i] == gender.value and btoks[i] == gender.opposite.value


def validate_manifest(instances: list[Instance]) -> ValidationReport:
    """Report duplicate ids, template violations, and per-cell counts.

    Findings never raise; callers decide whether findings are fatal.
    """
    findings: list[Finding] = []
    seen_ids: set[str] = set()
    counts: Counter = Counter()

    for inst in instances:
        if inst.id in seen_ids:
            findings.append(Finding("duplicate_id", inst.id, f"id {inst.id!r} appears more than once"))
        seen_ids.add(inst.id)

        t = inst.triple
        if not _single_token_swap(t.good, t.bad, t.gender):
            findings.append(
                Finding(
                    "template_violation",
                    inst.id,
                    "bad caption is not a single-word gender swap of the good caption",
                )
            )
        if t.reference != "a photo of " + t.good:
            findings.append(
                Finding(
                    "template_violation",
                    inst.id,
                    "reference caption does not extend the good caption",
                )
            )
        counts[(t.concept.category.value, t.concept.word, t.gender.value)] += 1

    return ValidationReport(findings=findings, counts=dict(counts))


# --------------------------------------------------------------------------
# Manifest file IO (JSON Lines, one instance per line)
# --------------------------------------------------------------------------

def instance_to_row(inst: Instance) -> dict:
    t = inst.triple
    return {
        "id": inst.id,
        "category": t.concept.category.value,
        "concept": t.concept.word,
        "gender": t.gender.value,
        "image_ref": inst.image_ref,
        "reference": t.reference,
        "good": t.good,
        "bad": t.bad,
    }


def instance_from_row(row: dict) -> Instance:
    concept = Concept(row["concept"], Category(row["category"]))
    triple = CaptionTriple(
        reference=row["reference"],
        good=row["good"],
        bad=row["bad"],
        gender=Gender(row["gender"]),
        concept=concept,
    )
    return Instance(id=row["id"], image_ref=row["image_ref"], triple=triple)


def write_manifest(instances: list[Instance], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for inst in instances:
            fh.write(json.dumps(instance_to_row(inst), sort_keys=True) + "\n")


def read_manifest(path: str | Path) -> list[Instance]:
    instances = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                instances.append(instance_from_row(json.loads(line)))
            except (KeyError, ValueError) as exc:
                raise InvalidInputError(f"{path}:{lineno}: bad manifest row: {exc}") from exc
    return instances

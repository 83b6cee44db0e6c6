"""Seeded synthetic fixtures: desk-scale manifests paired with embedding
stores in which a chosen subset of concepts carries a controlled cosine
offset favoring one gender's captions.

Geometry per concept: an orthonormal frame (anchor, man axis, woman axis,
spare text axes). Images sit near the anchor plus their gender axis plus
noise; caption vectors are built with explicit coordinates in that frame and
a spare-axis component soaking up the remaining norm, so every alignment
coefficient translates linearly into an expected cosine. Planting a concept
adds an opposite-gender-axis component to the favored gender's caption
vector, which raises that caption's cosine against the other gender's images
by `delta` on average -- exactly the failure mode under audit. Audits over
these stores exercise the same code path as audits over real embedding files.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audit import substream
from .corpus import (
    Category,
    Concept,
    Gender,
    Instance,
    build_manifest,
    render_captions,
)
from .embed_score import EmbeddingStore

#: Words beyond the bundled lexicon so fixtures can reach 20+ concepts.
EXTRA_WORDS = {
    Category.PROFESSION: ("farmer", "painter", "lawyer", "sailor"),
    Category.ACTIVITY: ("fishing", "shopping", "climbing", "sewing"),
    Category.OBJECT: ("scarf", "candle", "guitar", "camera"),
}

ANCHOR_COEF = 0.6        # caption alignment with the concept anchor
GENDER_COEF = 0.25       # caption alignment with its own gender axis
IMAGE_GENDER_AXIS = 0.4  # gender-axis weight inside image vectors
IMAGE_NOISE_NORM = 2.25  # expected total norm of per-image noise


@dataclass(frozen=True)
class PlantedFixture:
    manifest: list[Instance]
    store: EmbeddingStore
    planted: dict[str, Gender]  # concept word -> favored gender


def fixture_concepts(n_concepts: int) -> list[Concept]:
    """Deterministic list mixing the three categories."""
    from .corpus import DEFAULT_LEXICON

    base = DEFAULT_LEXICON.concepts()
    extras = [
        Concept(w, cat) for cat, words in EXTRA_WORDS.items() for w in words
    ]
    pool = base + extras
    if n_concepts > len(pool):
        raise ValueError(f"fixture supports at most {len(pool)} concepts")
    return pool[:n_concepts]


def _orthonormal_frame(rng: np.random.Generator, dim: int, k: int) -> list[np.ndarray]:
    basis: list[np.ndarray] = []
    while len(basis) < k:
        v = rng.normal(size=dim)
        for b in basis:
            v -= np.dot(v, b) * b
        norm = np.linalg.norm(v)
        if norm > 1e-9:
            basis.append(v / norm)
    return basis


def make_planted_fixture(
    n_concepts: int = 20,
    n_planted: int = 5,
    per_cell: int = 200,
    dim: int = 64,
    delta: float = 0.05,
    seed: int = 0,
) -> PlantedFixture:
    """Manifest plus embedding store where `n_planted` concepts carry a
    +delta expected-cosine offset toward one gender's captions."""
    rng = substream(seed, "planted_fixture")
    concepts = fixture_concepts(n_concepts)
    genders = [Gender.MAN, Gender.WOMAN]

    chosen = rng.choice(len(concepts), size=n_planted, replace=False)
    planted = {
        concepts[int(idx)].word: (Gender.WOMAN if i % 2 == 0 else Gender.MAN)
        for i, idx in enumerate(sorted(chosen))
    }

    images = {
        (c.word, g): [f"img://{c.category.value}/{c.word}/{g.value}/{i}" for i in range(per_cell)]
        for c in concepts
        for g in genders
    }
    manifest = build_manifest(concepts, genders, images)

    noise_scale = IMAGE_NOISE_NORM / np.sqrt(dim)
    # expected image norm, used to convert the cosine offset into an axis weight
    image_norm = float(np.sqrt(1.0 + IMAGE_GENDER_AXIS**2 + IMAGE_NOISE_NORM**2))

    vectors: dict[str, np.ndarray] = {}
    for concept in concepts:
        # one shared spare axis so both captions' filler components cancel
        # out of the good-bad margin instead of adding noise to it
        anchor, axis_man, axis_woman, spare = _orthonormal_frame(rng, dim, 4)
        axis = {Gender.MAN: axis_man, Gender.WOMAN: axis_woman}

        favored = planted.get(concept.word)
        for g in genders:
            # opposite-gender alignment that lifts this caption's cosine by
            # ~delta against images of the other gender
            cross = delta * image_norm / IMAGE_GENDER_AXIS if favored is g else 0.0
            rest = 1.0 - ANCHOR_COEF**2 - GENDER_COEF**2 - cross**2
            if rest <= 0:
                raise ValueError(f"delta {delta} too large for the fixture geometry")
            caption = render_captions(g, concept).good
            vectors[caption] = (
                ANCHOR_COEF * anchor
                + GENDER_COEF * axis[g]
                + cross * axis[g.opposite]
                + np.sqrt(rest) * spare
            )
        for g in genders:
            for ref in images[(concept.word, g)]:
                vectors[ref] = (
                    anchor
                    + IMAGE_GENDER_AXIS * axis[g]
                    + noise_scale * rng.normal(size=dim)
                )

    return PlantedFixture(
        manifest=manifest,
        store=EmbeddingStore.from_vectors(vectors),
        planted=planted,
    )

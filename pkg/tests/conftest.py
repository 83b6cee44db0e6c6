import pytest

from capbias.corpus import (
    Category,
    Concept,
    DEFAULT_LEXICON,
    Gender,
    build_manifest,
    synthetic_image_map,
)

GENDERS = [Gender.MAN, Gender.WOMAN]


@pytest.fixture(scope="session")
def bundled_concepts():
    return DEFAULT_LEXICON.concepts()


@pytest.fixture(scope="session")
def bundled_manifest(bundled_concepts):
    images = synthetic_image_map(bundled_concepts, GENDERS, 3)
    return build_manifest(bundled_concepts, GENDERS, images)


@pytest.fixture()
def tiny_concepts():
    return [
        Concept("doctor", Category.PROFESSION),
        Concept("chef", Category.PROFESSION),
    ]


@pytest.fixture()
def tiny_manifest(tiny_concepts):
    images = synthetic_image_map(tiny_concepts, GENDERS, 3)
    return build_manifest(tiny_concepts, GENDERS, images)

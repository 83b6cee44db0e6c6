import math

import pytest
from hypothesis import given, settings, strategies as st

from capbias.caption_analysis import (
    DEFAULT_GENDER_LEXICON,
    GenderCall,
    GenderLexicon,
    SystemOutput,
    compare_systems,
    correct_caption,
    detect_gender,
    gender_error_rate,
    label_image_gender,
    read_outputs,
    write_outputs,
)
from capbias.corpus import Gender
from capbias.errors import InvalidInputError
from capbias.ngram_metrics import Metric
from capbias.textnorm import tokenize


# --------------------------------------------------------------------------
# detect_gender / label_image_gender
# --------------------------------------------------------------------------

def test_detect_man():
    assert detect_gender("a man riding a bike") is GenderCall.MAN


def test_detect_neutral():
    assert detect_gender("a person riding a bike") is GenderCall.NEUTRAL


def test_detect_mixed():
    assert detect_gender("a man and a woman cooking") is GenderCall.MIXED


def test_detect_is_token_level_not_substring():
    # "woman" inside "workman" must not fire
    assert detect_gender("a workman fixing pipes") is GenderCall.NEUTRAL


MINI_VOCAB = ["man", "woman", "his", "her", "person", "bike", "dog", "park", "a", "the"]


@settings(max_examples=150, deadline=None)
@given(st.lists(st.sampled_from(MINI_VOCAB), min_size=0, max_size=8))
def test_detect_gender_enum_invariant(tokens):
    caption = " ".join(tokens)
    call = detect_gender(caption)
    has_male = bool(set(tokens) & DEFAULT_GENDER_LEXICON.male_words)
    has_female = bool(set(tokens) & DEFAULT_GENDER_LEXICON.female_words)
    expected = {
        (True, True): GenderCall.MIXED,
        (True, False): GenderCall.MAN,
        (False, True): GenderCall.WOMAN,
        (False, False): GenderCall.NEUTRAL,
    }[(has_male, has_female)]
    assert call is expected


def test_label_image_woman():
    refs = ["a woman cooking", "someone in a kitchen"]
    assert label_image_gender(refs) is GenderCall.WOMAN


def test_label_image_mixed_excluded():
    refs = ["a man at a table", "a woman nearby"]
    assert label_image_gender(refs) is GenderCall.MIXED


def test_label_image_neutral():
    assert label_image_gender(["a kitchen", "a table"]) is GenderCall.NEUTRAL


def test_label_image_requires_references():
    with pytest.raises(InvalidInputError):
        label_image_gender([])


def test_gender_lexicon_validation():
    with pytest.raises(InvalidInputError):
        GenderLexicon(frozenset({"man"}), frozenset({"man"}))
    with pytest.raises(InvalidInputError):
        GenderLexicon(frozenset(), frozenset({"woman"}))


# --------------------------------------------------------------------------
# correct_caption
# --------------------------------------------------------------------------

def test_correction_applies_simple_swap():
    fix = correct_caption("a man washing dishes", Gender.WOMAN)
    assert fix.applicable
    assert fix.caption == "a woman washing dishes"


def test_correction_leaves_correct_caption_alone():
    fix = correct_caption("a woman washing dishes", Gender.WOMAN)
    assert not fix.applicable
    assert fix.caption == "a woman washing dishes"


def test_correction_blocked_by_true_gender_word():
    fix = correct_caption("a man and his wife", Gender.WOMAN)
    assert not fix.applicable
    assert fix.caption == "a man and his wife"


def test_correction_blocked_by_other_wrong_gender_words():
    # wrong-gender evidence beyond the single word "man" is out of the rule's scope
    fix = correct_caption("a man and his dog", Gender.WOMAN)
    assert not fix.applicable


def test_correction_symmetric_for_man_images():
    fix = correct_caption("a woman driving a truck", Gender.MAN)
    assert fix.applicable
    assert fix.caption == "a man driving a truck"


def test_correction_replaces_every_occurrence():
    fix = correct_caption("a man next to a man", Gender.WOMAN)
    assert fix.applicable
    assert fix.caption == "a woman next to a woman"


CORRECTION_VOCAB = ["man", "woman", "his", "her", "wife", "boy", "person", "dog", "park", "a"]


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.sampled_from(CORRECTION_VOCAB), min_size=1, max_size=7),
    st.sampled_from([Gender.MAN, Gender.WOMAN]),
)
def test_correction_idempotent_and_flips_detection(tokens, true_gender):
    caption = " ".join(tokens)
    fix = correct_caption(caption, true_gender)
    fix2 = correct_caption(fix.caption, true_gender)
    assert fix2.caption == fix.caption  # idempotent
    if fix.applicable:
        assert detect_gender(fix.caption) is GenderCall(true_gender.value)
    else:
        assert fix.caption == caption


# --------------------------------------------------------------------------
# gender_error_rate
# --------------------------------------------------------------------------

def synthetic_outputs(manifest, n_errors, n_neutral=0):
    outputs = []
    errors_left, neutral_left = n_errors, n_neutral
    for inst in manifest:
        true = inst.triple.gender
        if errors_left > 0:
            outputs.append(SystemOutput(inst.id, f"a {true.opposite.value} here"))
            errors_left -= 1
        elif neutral_left > 0:
            outputs.append(SystemOutput(inst.id, "a person here"))
            neutral_left -= 1
        else:
            outputs.append(SystemOutput(inst.id, f"a {true.value} here"))
    return outputs


def test_error_rate_counting(bundled_manifest):
    outputs = synthetic_outputs(bundled_manifest[:100], n_errors=6)
    report = gender_error_rate(outputs, bundled_manifest, n_samples=500, seed=0)
    assert report.n_evaluated == 100
    assert report.n_errors == 6
    assert report.error_rate == pytest.approx(0.06)
    assert report.n_neutral == 0
    assert len(report.flagged_ids) == 6


def test_error_rate_neutral_excluded_but_counted(bundled_manifest):
    outputs = synthetic_outputs(bundled_manifest[:10], n_errors=2, n_neutral=3)
    report = gender_error_rate(outputs, bundled_manifest, n_samples=500, seed=0)
    assert report.n_evaluated == 7
    assert report.n_neutral == 3
    assert report.error_rate == pytest.approx(2 / 7)


def test_error_rate_all_neutral_flags_empty_denominator(bundled_manifest):
    outputs = synthetic_outputs(bundled_manifest[:5], n_errors=0, n_neutral=5)
    report = gender_error_rate(outputs, bundled_manifest, n_samples=500, seed=0)
    assert report.n_evaluated == 0
    assert report.error_rate is None
    assert report.ci_low is None


def test_error_rate_unknown_id_error(bundled_manifest):
    with pytest.raises(InvalidInputError, match="ghost"):
        gender_error_rate([SystemOutput("ghost", "a man")], bundled_manifest)


def big_error_manifest_and_outputs(n, rate, seed=0):
    """n outputs over a 2-instance manifest namespace is not allowed (ids must
    resolve), so build a dedicated wide manifest."""
    import numpy as np

    from capbias.corpus import Category, Concept, build_manifest

    concept = Concept("doctor", Category.PROFESSION)
    per_gender = n // 2
    images = {
        ("doctor", Gender.MAN): [f"m{i}" for i in range(per_gender)],
        ("doctor", Gender.WOMAN): [f"w{i}" for i in range(per_gender)],
    }
    manifest = build_manifest([concept], [Gender.MAN, Gender.WOMAN], images)
    rng = np.random.default_rng(seed)
    wrong = rng.random(len(manifest)) < rate
    outputs = [
        SystemOutput(
            inst.id,
            f"a {(inst.triple.gender.opposite if w else inst.triple.gender).value} here",
        )
        for inst, w in zip(manifest, wrong)
    ]
    return manifest, outputs


def test_error_rate_ci_width_binomial_envelope_n10k():
    manifest, outputs = big_error_manifest_and_outputs(10_000, 0.063, seed=3)
    report = gender_error_rate(outputs, manifest, n_samples=4000, seed=1)
    expected_width = 2 * 1.96 * math.sqrt(report.error_rate * (1 - report.error_rate) / 10_000)
    width = report.ci_high - report.ci_low
    assert width == pytest.approx(expected_width, rel=0.15)
    # a ~6.3% rate at this n gives a roughly one-point-wide interval
    assert 0.007 < width < 0.012


def test_error_rate_ci_width_paper_magnitude_at_45k():
    # the published +-0.22pp interval around 6.3% corresponds to n ~= 45k
    manifest, outputs = big_error_manifest_and_outputs(45_000, 0.063, seed=3)
    report = gender_error_rate(outputs, manifest, n_samples=4000, seed=1)
    width_pp = 100 * (report.ci_high - report.ci_low)
    assert width_pp == pytest.approx(0.45, abs=0.12)


def test_error_rate_concept_gap_significance(bundled_manifest):
    # all man-image captions wrong for one concept, woman-image captions right
    outputs = []
    for inst in bundled_manifest:
        wrong = (
            inst.triple.concept.word == "doctor"
            and inst.triple.gender is Gender.MAN
        )
        g = inst.triple.gender.opposite if wrong else inst.triple.gender
        outputs.append(SystemOutput(inst.id, f"a {g.value} here"))
    report = gender_error_rate(outputs, bundled_manifest, n_samples=4000, seed=0)
    gaps = {g["concept"]: g for g in report.concept_gaps}
    assert gaps["doctor"]["rate_man"] == 1.0
    assert gaps["doctor"]["rate_woman"] == 0.0
    # n=3 per cell cannot reach significance; the gap is still reported
    assert report.pct_concepts_significant is not None


# --------------------------------------------------------------------------
# compare_systems
# --------------------------------------------------------------------------

def length_scorer(inst, caption):
    return float(len(tokenize(caption)))


def test_compare_systems_win_counting(bundled_manifest):
    manifest = bundled_manifest[:100]
    a_wins = 54
    outputs_a, outputs_b = [], []
    for i, inst in enumerate(manifest):
        if i < a_wins:
            outputs_a.append(SystemOutput(inst.id, "one two three"))
            outputs_b.append(SystemOutput(inst.id, "one two"))
        else:
            outputs_a.append(SystemOutput(inst.id, "one"))
            outputs_b.append(SystemOutput(inst.id, "one two"))
    report = compare_systems(outputs_a, outputs_b, bundled_manifest, length_scorer)
    assert report.win_pct_a == pytest.approx(54.0)
    assert report.win_pct_b == pytest.approx(46.0)
    assert report.win_pct_a + report.win_pct_b == 100.0


def test_compare_identical_systems(bundled_manifest):
    manifest = bundled_manifest[:20]
    outputs = [SystemOutput(inst.id, "same caption here") for inst in manifest]
    report = compare_systems(outputs, list(outputs), bundled_manifest, length_scorer)
    assert report.win_pct_a == 50.0
    assert report.win_pct_b == 50.0
    assert report.mean_a == report.mean_b


def test_compare_misaligned_ids_error(bundled_manifest):
    a = [SystemOutput(bundled_manifest[0].id, "x")]
    b = [SystemOutput(bundled_manifest[1].id, "x")]
    with pytest.raises(InvalidInputError, match="not aligned"):
        compare_systems(a, b, bundled_manifest, length_scorer)


def test_compare_reports_categories(bundled_manifest):
    outputs_a = [SystemOutput(i.id, "a b c") for i in bundled_manifest]
    outputs_b = [SystemOutput(i.id, "a b") for i in bundled_manifest]
    report = compare_systems(outputs_a, outputs_b, bundled_manifest, length_scorer)
    assert set(report.by_category) == {"profession", "activity", "object"}
    for stats in report.by_category.values():
        assert stats["win_pct_a"] == 100.0
        assert stats["win_pct_a"] + stats["win_pct_b"] == 100.0


# --------------------------------------------------------------------------
# IO
# --------------------------------------------------------------------------

def test_outputs_roundtrip(tmp_path):
    outputs = [SystemOutput("a/0", "a man"), SystemOutput("a/1", "a woman")]
    path = tmp_path / "outputs.jsonl"
    write_outputs(outputs, path)
    assert read_outputs(path) == outputs


def test_read_outputs_rejects_bad_rows(tmp_path):
    path = tmp_path / "outputs.jsonl"
    path.write_text('{"caption": "no id"}\n')
    with pytest.raises(InvalidInputError):
        read_outputs(path)

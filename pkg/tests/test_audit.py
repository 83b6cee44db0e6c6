import math

import numpy as np
import pytest

from capbias.audit import (
    BiasLabel,
    ScoreRecord,
    audit_metric,
    bootstrap_bias_test,
    bootstrap_rate_ci,
    bootstrap_two_sample,
    cell_accuracy,
    cohen_kappa,
    read_records,
    substream,
    summarize,
    write_records,
)
from capbias.corpus import Category, Concept, Gender
from capbias.errors import InsufficientDataError, InvalidInputError
from capbias.ngram_metrics import Metric

DOCTOR = Concept("doctor", Category.PROFESSION)


def records(wins, metric=Metric.BLEU4, prefix="r"):
    """Build records with given win pattern; loss encoded as good < bad."""
    out = []
    for i, win in enumerate(wins):
        good, bad = (0.9, 0.1) if win else (0.1, 0.9)
        out.append(ScoreRecord(f"{prefix}{i}", metric, good, bad))
    return out


def tied_records(n, metric=Metric.BLEU4):
    return [ScoreRecord(f"t{i}", metric, 0.5, 0.5) for i in range(n)]


# --------------------------------------------------------------------------
# accuracy
# --------------------------------------------------------------------------

def test_accuracy_all_wins():
    cell = cell_accuracy(records([True] * 5), Gender.MAN, DOCTOR)
    assert cell.accuracy == 1.0
    assert cell.n == 5


def test_accuracy_ties_count_as_losses():
    cell = cell_accuracy(tied_records(4), Gender.MAN, DOCTOR)
    assert cell.accuracy == 0.0


def test_accuracy_three_of_four():
    cell = cell_accuracy(records([True, True, True, False]), Gender.WOMAN, DOCTOR)
    assert cell.accuracy == 0.75


def test_accuracy_empty_cell_error():
    with pytest.raises(InsufficientDataError) as exc:
        cell_accuracy([], Gender.MAN, DOCTOR)
    assert exc.value.cell == ("man", "doctor")


def test_score_record_rejects_non_finite():
    with pytest.raises(InvalidInputError):
        ScoreRecord("x", Metric.BLEU4, float("nan"), 0.1)


# --------------------------------------------------------------------------
# bootstrap bias test
# --------------------------------------------------------------------------

def test_identical_distributions_are_neutral():
    man = records([True] * 40 + [False] * 10, prefix="m")
    woman = records([True] * 40 + [False] * 10, prefix="w")
    verdict = bootstrap_bias_test(man, woman, DOCTOR, n_samples=10_000, seed=5)
    assert verdict.label is BiasLabel.NEUTRAL
    assert verdict.p_value > 0.5
    assert verdict.acc_man == verdict.acc_woman == 0.8


def test_extreme_separation_is_flagged():
    man = records([True] * 50, prefix="m")
    woman = records([False] * 50, prefix="w")
    verdict = bootstrap_bias_test(man, woman, DOCTOR, n_samples=10_000, seed=5)
    # every resample preserves delta = -1
    assert verdict.label is BiasLabel.MAN_BIASED
    assert verdict.p_value < 0.001
    assert verdict.acc_man == 1.0 and verdict.acc_woman == 0.0


def test_label_direction_consistency():
    man = records([True] * 10 + [False] * 40, prefix="m")
    woman = records([True] * 45 + [False] * 5, prefix="w")
    verdict = bootstrap_bias_test(man, woman, DOCTOR, n_samples=10_000, seed=5)
    assert verdict.label is BiasLabel.WOMAN_BIASED
    assert verdict.acc_woman > verdict.acc_man
    assert verdict.p_value < 0.05


def test_bootstrap_determinism_independent_of_call_order():
    man = records([True] * 30 + [False] * 20, prefix="m")
    woman = records([True] * 20 + [False] * 30, prefix="w")
    v1 = bootstrap_bias_test(man, woman, DOCTOR, n_samples=5000, seed=9, metric_name="bleu4")
    # interleave an unrelated draw; substreams must not be affected
    substream(9, "other").random(1000)
    v2 = bootstrap_bias_test(man, woman, DOCTOR, n_samples=5000, seed=9, metric_name="bleu4")
    assert v1.p_value == v2.p_value


def test_monotone_transform_leaves_verdicts_unchanged():
    rng = np.random.default_rng(4)
    man = [
        ScoreRecord(f"m{i}", Metric.CIDER_D, float(g), float(b))
        for i, (g, b) in enumerate(rng.uniform(0, 5, size=(40, 2)))
    ]
    woman = [
        ScoreRecord(f"w{i}", Metric.CIDER_D, float(g), float(b))
        for i, (g, b) in enumerate(rng.uniform(0, 5, size=(40, 2)))
    ]
    base = bootstrap_bias_test(man, woman, DOCTOR, n_samples=4000, seed=2)

    def transform(recs, fn):
        return [
            ScoreRecord(r.instance_id, r.metric, fn(r.score_good), fn(r.score_bad))
            for r in recs
        ]

    for fn in (lambda x: 3 * x + 1, math.exp, lambda x: x**3 + 0.5 * x, math.atan):
        v = bootstrap_bias_test(
            transform(man, fn), transform(woman, fn), DOCTOR, n_samples=4000, seed=2
        )
        assert v.p_value == base.p_value
        assert v.label == base.label
        assert v.acc_man == base.acc_man


def test_bootstrap_two_sample_requires_data():
    with pytest.raises(InsufficientDataError):
        bootstrap_two_sample([], [True], 100, substream(0, "x"))


# --------------------------------------------------------------------------
# summarize
# --------------------------------------------------------------------------

def _verdict(word, category, label):
    man = records([True] * 10, prefix=f"{word}m")
    woman = records([True] * 10, prefix=f"{word}w")
    v = bootstrap_bias_test(man, woman, Concept(word, category), n_samples=200, seed=0)
    object.__setattr__(v, "label", label)
    return v


def test_summarize_all_neutral_is_zero_percent():
    verdicts = [
        _verdict("doctor", Category.PROFESSION, BiasLabel.NEUTRAL),
        _verdict("reading", Category.ACTIVITY, BiasLabel.NEUTRAL),
    ]
    summary = summarize(verdicts)
    assert summary.overall["pct_biased"] == 0.0
    for stats in summary.per_category.values():
        assert stats["pct_biased"] == 0.0


def test_summarize_half_biased_category():
    verdicts = [
        _verdict("doctor", Category.PROFESSION, BiasLabel.MAN_BIASED),
        _verdict("nurse", Category.PROFESSION, BiasLabel.NEUTRAL),
    ]
    summary = summarize(verdicts)
    assert summary.per_category["profession"]["pct_biased"] == 50.0
    assert summary.overall["n_biased"] == 1


def test_summarize_exclusion_list():
    verdicts = [
        _verdict("doctor", Category.PROFESSION, BiasLabel.MAN_BIASED),
        _verdict("nurse", Category.PROFESSION, BiasLabel.NEUTRAL),
    ]
    summary = summarize(verdicts, exclude={"doctor"})
    assert summary.overall["n_concepts"] == 1
    assert summary.overall["pct_biased"] == 0.0
    assert summary.excluded == ["doctor"]


def test_audit_metric_end_to_end(tiny_manifest):
    recs = []
    for inst in tiny_manifest:
        recs.append(ScoreRecord(inst.id, Metric.BLEU4, 0.8, 0.2))
    summary = audit_metric(recs, tiny_manifest, Metric.BLEU4, n_samples=500, seed=1)
    assert summary.overall["pct_biased"] == 0.0
    assert summary.overall["n_concepts"] == 2
    payload = summary.to_json()
    assert {c["concept"] for c in payload["concepts"]} == {"doctor", "chef"}
    for c in payload["concepts"]:
        assert c["acc_man"] == 1.0 and c["acc_woman"] == 1.0


def test_audit_metric_missing_cell_error(tiny_manifest):
    man_only = [
        ScoreRecord(inst.id, Metric.BLEU4, 0.8, 0.2)
        for inst in tiny_manifest
        if inst.triple.gender is Gender.MAN
    ]
    with pytest.raises(InsufficientDataError):
        audit_metric(man_only, tiny_manifest, Metric.BLEU4, n_samples=200, seed=0)


def test_audit_metric_unknown_instance_error(tiny_manifest):
    recs = [ScoreRecord("ghost/0", Metric.BLEU4, 0.8, 0.2)]
    with pytest.raises(InvalidInputError, match="ghost"):
        audit_metric(recs, tiny_manifest, Metric.BLEU4)


# --------------------------------------------------------------------------
# rate CI
# --------------------------------------------------------------------------

def test_bootstrap_rate_ci_matches_binomial_width():
    rng = substream(0, "ci_test")
    indicators = [True] * 63 + [False] * 937
    rate, lo, hi = bootstrap_rate_ci(indicators, 20_000, rng)
    assert rate == 0.063
    binom_half_width = 1.96 * math.sqrt(0.063 * 0.937 / 1000)
    assert (hi - lo) == pytest.approx(2 * binom_half_width, rel=0.15)
    assert lo < rate < hi


# --------------------------------------------------------------------------
# Cohen kappa
# --------------------------------------------------------------------------

def test_kappa_perfect_agreement():
    assert cohen_kappa([1, 0, 1, 0], [1, 0, 1, 0]) == 1.0


def test_kappa_perfect_disagreement_balanced():
    assert cohen_kappa([1, 1, 0, 0], [0, 0, 1, 1]) == -1.0


def test_kappa_hand_contingency_case():
    a = [1, 1, 0, 0, 1]
    b = [1, 0, 0, 0, 1]
    # oracle: direct contingency computation
    n = len(a)
    p_o = sum(x == y for x, y in zip(a, b)) / n
    p_e = sum((a.count(c) / n) * (b.count(c) / n) for c in {0, 1})
    expected = (p_o - p_e) / (1 - p_e)
    assert p_o == 0.8 and p_e == pytest.approx(0.48)
    assert cohen_kappa(a, b) == pytest.approx(expected, abs=1e-12)
    assert cohen_kappa(a, b) == pytest.approx(8 / 13, abs=1e-12)


def test_kappa_against_sklearn():
    sklearn_metrics = pytest.importorskip("sklearn.metrics")
    rng = np.random.default_rng(0)
    for _ in range(10):
        a = rng.integers(0, 2, size=30).tolist()
        b = rng.integers(0, 2, size=30).tolist()
        if len(set(a)) < 2 and len(set(b)) < 2:
            continue
        assert cohen_kappa(a, b) == pytest.approx(
            sklearn_metrics.cohen_kappa_score(a, b), abs=1e-12
        )


def test_kappa_constant_identical_raters():
    assert cohen_kappa([1, 1, 1], [1, 1, 1]) == 1.0


def test_kappa_length_mismatch():
    with pytest.raises(InvalidInputError):
        cohen_kappa([1, 0], [1])
    with pytest.raises(InvalidInputError):
        cohen_kappa([], [])


# --------------------------------------------------------------------------
# score file IO
# --------------------------------------------------------------------------

def test_score_records_roundtrip(tmp_path):
    recs = records([True, False, True], metric=Metric.METEOR)
    path = tmp_path / "scores.jsonl"
    write_records(recs, path)
    assert read_records(path) == recs


def test_read_records_rejects_bad_metric(tmp_path):
    path = tmp_path / "scores.jsonl"
    path.write_text('{"instance_id": "x", "metric": "spice", "score_good": 1, "score_bad": 0}\n')
    with pytest.raises(InvalidInputError):
        read_records(path)

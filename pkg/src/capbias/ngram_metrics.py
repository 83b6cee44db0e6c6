"""Statistical caption metrics: BLEU-4, ROUGE-L, CIDEr-D and METEOR (exact+stem).

All functions take pre-tokenized input (see `textnorm.tokenize`) and return a
plain float. Because template captions are only 5-7 tokens long, BLEU-4 uses
epsilon substitution for zero n-gram precisions and METEOR runs without a
synonym stage.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass
from enum import Enum

from .errors import InvalidInputError
from .textnorm import stem

TokenSeq = list[str]

MAX_N = 4
BLEU_EPSILON = 1e-9
ROUGE_BETA = 1.2
CIDER_SIGMA = 6.0
METEOR_ALPHA = 0.9
METEOR_BETA = 3.0
METEOR_GAMMA = 0.5

# alignments to enumerate before METEOR falls back to in-order pairing
_CHUNK_SEARCH_CAP = 200_000


class Metric(str, Enum):
    BLEU4 = "bleu4"
    ROUGE_L = "rougeL"
    CIDER_D = "ciderD"
    METEOR = "meteor"
    CLIPSCORE = "clipscore"
    HYBRID = "hybrid"


#: Inclusive value range per metric.
SCORE_RANGES: dict[Metric, tuple[float, float]] = {
    Metric.BLEU4: (0.0, 1.0),
    Metric.ROUGE_L: (0.0, 1.0),
    Metric.CIDER_D: (0.0, 10.0),
    Metric.METEOR: (0.0, 1.0),
    Metric.CLIPSCORE: (0.0, 2.5),
    Metric.HYBRID: (0.0, 12.5),
}

NGRAM_METRICS = (Metric.BLEU4, Metric.ROUGE_L, Metric.CIDER_D, Metric.METEOR)


@dataclass(frozen=True)
class MetricScore:
    metric: Metric
    value: float

    def __post_init__(self):
        lo, hi = SCORE_RANGES[self.metric]
        if not (lo <= self.value <= hi) or math.isnan(self.value):
            raise InvalidInputError(
                f"{self.metric.value} score {self.value} outside [{lo}, {hi}]"
            )


def ngram_counts(tokens: TokenSeq, max_n: int = MAX_N) -> Counter:
    """Counts of all n-grams (token tuples) for n = 1..max_n."""
    counts: Counter = Counter()
    for n in range(1, max_n + 1):
        for i in range(len(tokens) - n + 1):
            counts[tuple(tokens[i : i + n])] += 1
    return counts


def _check_pair(candidate: TokenSeq, references: list[TokenSeq]) -> list[TokenSeq]:
    if not candidate:
        raise InvalidInputError("candidate must be non-empty")
    refs = [r for r in references if r]
    if not refs:
        raise InvalidInputError("need at least one non-empty reference")
    return refs


# --------------------------------------------------------------------------
# BLEU-4
# --------------------------------------------------------------------------

def bleu4(candidate: TokenSeq, references: list[TokenSeq]) -> float:
    """Geometric mean of clipped modified precisions (n=1..4) times the
    brevity penalty e^(1-r/c) for c < r; zero precisions become 1e-9."""
    refs = _check_pair(candidate, references)

    log_sum = 0.0
    for n in range(1, MAX_N + 1):
        cand_grams = Counter(
            tuple(candidate[i : i + n]) for i in range(len(candidate) - n + 1)
        )
        total = sum(cand_grams.values())
        if total == 0:
            log_sum += math.log(BLEU_EPSILON)
            continue
        max_ref: Counter = Counter()
        for ref in refs:
            ref_grams = Counter(tuple(ref[i : i + n]) for i in range(len(ref) - n + 1))
            for g, c in ref_grams.items():
                if c > max_ref[g]:
                    max_ref[g] = c
        clipped = sum(min(c, max_ref[g]) for g, c in cand_grams.items())
        precision = clipped / total
        log_sum += math.log(precision if precision > 0 else BLEU_EPSILON)

    c = len(candidate)
    # closest reference length; ties resolved toward the shorter reference
    r = min((abs(len(ref) - c), len(ref)) for ref in refs)[1]
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * math.exp(log_sum / MAX_N)


# --------------------------------------------------------------------------
# ROUGE-L
# --------------------------------------------------------------------------

def _lcs_length(a: TokenSeq, b: TokenSeq) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for tok_a in a:
        curr = [0] * (len(b) + 1)
        for j, tok_b in enumerate(b, start=1):
            if tok_a == tok_b:
                curr[j] = prev[j - 1] + 1
            else:
                curr[j] = max(prev[j], curr[j - 1])
        prev = curr
    return prev[-1]


def rouge_l(candidate: TokenSeq, references: list[TokenSeq]) -> float:
    """Max over references of the LCS-based F-score with beta = 1.2."""
    refs = _check_pair(candidate, references)
    beta_sq = ROUGE_BETA**2
    best = 0.0
    for ref in refs:
        lcs = _lcs_length(candidate, ref)
        if lcs == 0:
            continue
        p = lcs / len(candidate)
        r = lcs / len(ref)
        f = (1 + beta_sq) * p * r / (r + beta_sq * p)
        best = max(best, f)
    return best


# --------------------------------------------------------------------------
# CIDEr-D
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class IdfTable:
    """Document frequencies over the reference sets of an evaluation corpus."""

    doc_count: int
    df: dict[tuple, int]

    def idf(self, gram: tuple) -> float:
        # grams never seen in the corpus carry zero weight
        d = self.df.get(gram, 0)
        if d <= 0:
            return 0.0
        return math.log(self.doc_count / d)


def build_idf(reference_corpus: list[list[TokenSeq]]) -> IdfTable:
    """df[g] = number of reference sets in which gram g appears at least once."""
    if not reference_corpus:
        raise InvalidInputError("reference corpus must contain at least one set")
    df: Counter = Counter()
    for ref_set in reference_corpus:
        grams: set = set()
        for ref in ref_set:
            grams.update(ngram_counts(ref).keys())
        for g in grams:
            df[g] += 1
    return IdfTable(doc_count=len(reference_corpus), df=dict(df))


def _tfidf_vectors(counts: Counter, idf: IdfTable) -> tuple[list[dict], list[float]]:
    vecs: list[dict] = [dict() for _ in range(MAX_N)]
    norms = [0.0] * MAX_N
    for gram, tf in counts.items():
        w = tf * idf.idf(gram)
        if w != 0.0:
            n = len(gram) - 1
            vecs[n][gram] = w
            norms[n] += w * w
    return vecs, [math.sqrt(x) for x in norms]


def cider_d(candidate: TokenSeq, references: list[TokenSeq], idf: IdfTable) -> float:
    """Consensus metric: per-n clipped tf-idf cosine with a Gaussian length
    penalty (sigma = 6), averaged over references and over n, scaled by 10."""
    refs = _check_pair(candidate, references)
    if idf.doc_count <= 0:
        raise InvalidInputError("idf table is empty (doc_count = 0)")

    cand_vecs, cand_norms = _tfidf_vectors(ngram_counts(candidate), idf)
    totals = [0.0] * MAX_N
    for ref in refs:
        ref_vecs, ref_norms = _tfidf_vectors(ngram_counts(ref), idf)
        delta = len(candidate) - len(ref)
        penalty = math.exp(-(delta**2) / (2 * CIDER_SIGMA**2))
        for n in range(MAX_N):
            if cand_norms[n] == 0.0 or ref_norms[n] == 0.0:
                continue
            num = 0.0
            rv = ref_vecs[n]
            for gram, w in cand_vecs[n].items():
                rw = rv.get(gram)
                if rw is not None:
                    num += min(w, rw) * rw
            totals[n] += penalty * num / (cand_norms[n] * ref_norms[n])

    return 10.0 * sum(t / len(refs) for t in totals) / MAX_N


# --------------------------------------------------------------------------
# METEOR (exact + stem matchers, no synonym stage)
# --------------------------------------------------------------------------

def _stage_quotas(cand: TokenSeq, ref: TokenSeq) -> tuple[Counter, Counter]:
    """Match counts per surface word (exact stage) and per stem (stem stage).

    Counts are fixed by multiset intersection; only the position assignment
    is a degree of freedom, handled separately for the chunk count.
    """
    cand_words = Counter(cand)
    ref_words = Counter(ref)
    exact = Counter(
        {w: min(c, ref_words[w]) for w, c in cand_words.items() if ref_words[w]}
    )
    left_cand: Counter = Counter()
    for w, c in cand_words.items():
        if c - exact[w]:
            left_cand[stem(w)] += c - exact[w]
    left_ref: Counter = Counter()
    for w, c in ref_words.items():
        if c - exact[w]:
            left_ref[stem(w)] += c - exact[w]
    stems = Counter(
        {s: min(c, left_ref[s]) for s, c in left_cand.items() if left_ref[s]}
    )
    return exact, stems


def _count_chunks(pairs: list[tuple[int, int]]) -> int:
    if not pairs:
        return 0
    pairs = sorted(pairs)
    chunks = 1
    for (c0, r0), (c1, r1) in zip(pairs, pairs[1:]):
        if c1 != c0 + 1 or r1 != r0 + 1:
            chunks += 1
    return chunks


def _group_assignments(cand_pos: list[int], ref_pos: list[int], k: int):
    """All ways to match k candidate positions to k reference positions."""
    for cs in itertools.combinations(cand_pos, k):
        for rs in itertools.permutations(ref_pos, k):
            yield list(zip(cs, rs))


def _exact_groups(cand: TokenSeq, ref: TokenSeq, exact: Counter):
    return [
        (
            [i for i, t in enumerate(cand) if t == w],
            [j for j, t in enumerate(ref) if t == w],
            k,
        )
        for w, k in sorted(exact.items())
    ]


def _stem_groups(cand, ref, stems: Counter, used_c: set[int], used_r: set[int]):
    return [
        (
            [i for i, t in enumerate(cand) if i not in used_c and stem(t) == s],
            [j for j, t in enumerate(ref) if j not in used_r and stem(t) == s],
            k,
        )
        for s, k in sorted(stems.items())
    ]


def _inorder_pairs(groups) -> list[tuple[int, int]]:
    pairs: list[tuple[int, int]] = []
    for cpos, rpos, k in groups:
        pairs.extend(zip(cpos[:k], rpos[:k]))
    return pairs


def _min_chunks(cand: TokenSeq, ref: TokenSeq, exact: Counter, stems: Counter) -> int:
    """Fewest chunks over all position assignments realizing the match quotas.

    Which candidate occurrences the exact stage consumes changes what the
    stem stage can use, so the two stages are searched nested rather than as
    independent groups. Past the enumeration cap, in-order occurrence
    pairing is used instead (never reached by template-scale captions).
    """
    exact_groups = _exact_groups(cand, ref, exact)
    size = 1
    for cpos, rpos, k in exact_groups:
        size *= math.comb(len(cpos), k) * math.perm(len(rpos), k)
    if size > _CHUNK_SEARCH_CAP:
        chosen = _inorder_pairs(exact_groups)
        used_c = {c for c, _ in chosen}
        used_r = {r for _, r in chosen}
        return _count_chunks(
            chosen + _inorder_pairs(_stem_groups(cand, ref, stems, used_c, used_r))
        )

    best: int | None = None
    for exact_combo in itertools.product(
        *(list(_group_assignments(cpos, rpos, k)) for cpos, rpos, k in exact_groups)
    ):
        exact_pairs = [p for part in exact_combo for p in part]
        used_c = {c for c, _ in exact_pairs}
        used_r = {r for _, r in exact_pairs}
        stem_groups = _stem_groups(cand, ref, stems, used_c, used_r)
        inner = 1
        for cpos, rpos, k in stem_groups:
            inner *= math.comb(len(cpos), k) * math.perm(len(rpos), k)
        if inner > _CHUNK_SEARCH_CAP:
            stem_choices = [_inorder_pairs(stem_groups)]
        else:
            stem_choices = (
                [p for part in combo for p in part]
                for combo in itertools.product(
                    *(list(_group_assignments(cpos, rpos, k)) for cpos, rpos, k in stem_groups)
                )
            )
        for stem_pairs in stem_choices:
            chunks = _count_chunks(exact_pairs + stem_pairs)
            if best is None or chunks < best:
                best = chunks
                if best <= 1:
                    return best
    return best if best is not None else 0


def _meteor_single(candidate: TokenSeq, ref: TokenSeq) -> float:
    exact, stems = _stage_quotas(candidate, ref)
    matches = sum(exact.values()) + sum(stems.values())
    if matches == 0:
        return 0.0
    p = matches / len(candidate)
    r = matches / len(ref)
    f_mean = p * r / (METEOR_ALPHA * p + (1 - METEOR_ALPHA) * r)
    chunks = _min_chunks(candidate, ref, exact, stems)
    penalty = METEOR_GAMMA * (chunks / matches) ** METEOR_BETA
    return f_mean * (1.0 - penalty)


def meteor(candidate: TokenSeq, references: list[TokenSeq]) -> float:
    """Max over references of F_mean * (1 - chunk penalty); alpha = 0.9,
    beta = 3, gamma = 0.5 (METEOR 1.0 defaults)."""
    refs = _check_pair(candidate, references)
    return max(_meteor_single(candidate, ref) for ref in refs)


#: Scorers sharing the (candidate, references) signature.
def score_ngram_metric(
    metric: Metric,
    candidate: TokenSeq,
    references: list[TokenSeq],
    idf: IdfTable | None = None,
) -> float:
    if metric is Metric.BLEU4:
        return bleu4(candidate, references)
    if metric is Metric.ROUGE_L:
        return rouge_l(candidate, references)
    if metric is Metric.METEOR:
        return meteor(candidate, references)
    if metric is Metric.CIDER_D:
        if idf is None:
            raise InvalidInputError("ciderD needs an idf table")
        return cider_d(candidate, references, idf)
    raise InvalidInputError(f"{metric.value} is not an n-gram metric")

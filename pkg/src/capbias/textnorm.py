"""Text normalization shared by the n-gram metrics and the gender word matcher.

One tokenizer for every metric keeps cross-metric comparisons internally
consistent; parity with any particular toolkit's tokenization is not a goal.
"""

from __future__ import annotations

STRIP_CHARS = ".,!?;:'\"()[]"
_STRIP_TABLE = str.maketrans("", "", STRIP_CHARS)

_VOWELS = frozenset("aeiou")


def tokenize(text: str) -> list[str]:
    """Lowercase, strip punctuation (.,!?;:'"()[]), split on whitespace.

    Empty tokens (e.g. a standalone ``"--"`` reduced to nothing) are dropped,
    so the result never contains the empty string.
    """
    lowered = text.lower().translate(_STRIP_TABLE)
    return [tok for tok in lowered.split() if tok]


# --------------------------------------------------------------------------
# Porter (1980) stemmer, used by the stem-matching stage of the METEOR metric.
# Plain-English rule tables; no behavioural extensions (the "original" rather
# than the later "Porter2" variant).
# --------------------------------------------------------------------------


def _is_consonant(word: str, i: int) -> bool:
    ch = word[i]
    if ch in _VOWELS:
        return False
    if ch == "y":
        # y is a consonant at the start or after a vowel, else acts as a vowel
        return i == 0 or not _is_consonant(word, i - 1)
    return True


def _measure(stem: str) -> int:
    """Number of vowel-consonant sequences [VC] in the stem."""
    m = 0
    prev_consonant = True
    for i in range(len(stem)):
        cons = _is_consonant(stem, i)
        if cons and not prev_consonant:
            m += 1
        prev_consonant = cons
    return m


def _contains_vowel(stem: str) -> bool:
    return any(not _is_consonant(stem, i) for i in range(len(stem)))


def _ends_double_consonant(word: str) -> bool:
    return (
        len(word) >= 2
        and word[-1] == word[-2]
        and _is_consonant(word, len(word) - 1)
    )


def _ends_cvc(word: str) -> bool:
    # consonant-vowel-consonant where the final consonant is not w, x or y
    if len(word) < 3:
        return False
    return (
        _is_consonant(word, len(word) - 3)
        and not _is_consonant(word, len(word) - 2)
        and _is_consonant(word, len(word) - 1)
        and word[-1] not in "wxy"
    )


_STEP2_RULES = (
    ("ational", "ate"), ("tional", "tion"), ("enci", "ence"), ("anci", "ance"),
    ("izer", "ize"), ("abli", "able"), ("alli", "al"), ("entli", "ent"),
    ("eli", "e"), ("ousli", "ous"), ("ization", "ize"), ("ation", "ate"),
    ("ator", "ate"), ("alism", "al"), ("iveness", "ive"), ("fulness", "ful"),
    ("ousness", "ous"), ("aliti", "al"), ("iviti", "ive"), ("biliti", "ble"),
)

_STEP3_RULES = (
    ("icate", "ic"), ("ative", ""), ("alize", "al"), ("iciti", "ic"),
    ("ical", "ic"), ("ful", ""), ("ness", ""),
)

_STEP4_SUFFIXES = (
    "al", "ance", "ence", "er", "ic", "able", "ible", "ant", "ement",
    "ment", "ent", "ion", "ou", "ism", "ate", "iti", "ous", "ive", "ize",
)


def _apply_rule_list(word: str, rules, min_measure: int) -> str:
    """Apply the longest matching suffix rule whose stem passes the measure test."""
    match = None
    for suffix, replacement in rules:
        if word.endswith(suffix) and (match is None or len(suffix) > len(match[0])):
            match = (suffix, replacement)
    if match is None:
        return word
    suffix, replacement = match
    stem = word[: -len(suffix)]
    if _measure(stem) > min_measure - 1:
        return stem + replacement
    return word


def stem(token: str) -> str:
    """Porter-stem a single lowercase token.

    Tokens shorter than three characters are returned unchanged, matching the
    reference algorithm.
    """
    word = token
    if len(word) < 3:
        return word

    # Step 1a: plurals
    if word.endswith("sses"):
        word = word[:-2]
    elif word.endswith("ies"):
        word = word[:-2]
    elif not word.endswith("ss") and word.endswith("s"):
        word = word[:-1]

    # Step 1b: -eed / -ed / -ing
    if word.endswith("eed"):
        if _measure(word[:-3]) > 0:
            word = word[:-1]
    else:
        fired = False
        if word.endswith("ed") and _contains_vowel(word[:-2]):
            word = word[:-2]
            fired = True
        elif word.endswith("ing") and _contains_vowel(word[:-3]):
            word = word[:-3]
            fired = True
        if fired:
            if word.endswith(("at", "bl", "iz")):
                word += "e"
            elif _ends_double_consonant(word) and word[-1] not in "lsz":
                word = word[:-1]
            elif _measure(word) == 1 and _ends_cvc(word):
                word += "e"

    # Step 1c: y -> i after a vowel
    if word.endswith("y") and _contains_vowel(word[:-1]):
        word = word[:-1] + "i"

    word = _apply_rule_list(word, _STEP2_RULES, min_measure=1)
    word = _apply_rule_list(word, _STEP3_RULES, min_measure=1)

    # Step 4: drop the suffix entirely when the remaining measure exceeds 1
    match = None
    for suffix in _STEP4_SUFFIXES:
        if word.endswith(suffix) and (match is None or len(suffix) > len(match)):
            match = suffix
    if match is not None:
        stem_part = word[: -len(match)]
        if _measure(stem_part) > 1:
            if match == "ion":
                if stem_part and stem_part[-1] in "st":
                    word = stem_part
            else:
                word = stem_part

    # Step 5a: final -e
    if word.endswith("e"):
        m = _measure(word[:-1])
        if m > 1 or (m == 1 and not _ends_cvc(word[:-1])):
            word = word[:-1]

    # Step 5b: -ll -> -l for long words
    if _measure(word) > 1 and _ends_double_consonant(word) and word.endswith("l"):
        word = word[:-1]

    return word


def stem_all(tokens: list[str]) -> list[str]:
    return [stem(tok) for tok in tokens]

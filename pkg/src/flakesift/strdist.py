"""Static distance measures between two test cases.

Character-level edit distances come from rapidfuzz; everything here returns
a distance (0 = identical), including Jaro and Jaro-Winkler.
"""

from __future__ import annotations

import re
from typing import Iterable, NamedTuple

from rapidfuzz.distance import OSA, DamerauLevenshtein, Jaro, JaroWinkler, Levenshtein

from .ingest import ProjectDataset, TestId

FEATURE_LAYOUT_VERSION = 1
FEATURE_NAMES = (
    "name_levenshtein",
    "name_damerau",
    "name_levenshtein_norm",
    "name_damerau_norm",
    "name_jaro",
    "name_jaro_winkler",
    "code_levenshtein",
    "code_damerau",
    "code_levenshtein_norm",
    "code_damerau_norm",
    "code_jaro",
    "code_jaro_winkler",
    "name_token_jaccard",
    "name_token_dice",
    "name_token_overlap",
    "code_token_jaccard",
    "code_token_dice",
    "code_token_overlap",
    "hierarchy_distance",
)

JW_PREFIX_WEIGHT = 0.1
JW_BOOST_THRESHOLD = 0.7  # rapidfuzz's fixed boost threshold; caps prefix at 4


def levenshtein(a: str, b: str) -> int:
    return Levenshtein.distance(a, b)


def damerau_levenshtein(a: str, b: str, variant: str = "osa") -> int:
    """Edit distance with adjacent transpositions.

    ``variant="osa"`` (default) is optimal string alignment, where no substring
    is edited twice; ``"full"`` is the unrestricted Damerau distance.
    """
    if variant == "osa":
        return OSA.distance(a, b)
    if variant == "full":
        return DamerauLevenshtein.distance(a, b)
    raise ValueError(f"unknown Damerau variant {variant!r}")


def normalized(d: float, a: str, b: str) -> float:
    longest = max(len(a), len(b))
    return d / longest if longest else 0.0


def jaro(a: str, b: str) -> float:
    return Jaro.distance(a, b)


def jaro_winkler(a: str, b: str) -> float:
    return JaroWinkler.distance(a, b, prefix_weight=JW_PREFIX_WEIGHT)


_CAMEL = re.compile(r"[A-Z]+(?=[A-Z][a-z])|[A-Z]?[a-z]+|[A-Z]+|[0-9]+")


def split_identifier(word: str) -> list[str]:
    """``getURLPath`` -> ``["get", "URL", "Path"]``; non-alphanumerics separate words."""
    return _CAMEL.findall(word)


def tokenize_name(test: TestId) -> frozenset[str]:
    """Lower-cased unique tokens of the package, class and method names."""
    words = list(test.package_path) + [test.class_name, test.method_name]
    return frozenset(tok.lower() for w in words for tok in split_identifier(w))


def normalize_tokens(tokens: Iterable[str]) -> frozenset[str]:
    return frozenset(t.lower() for t in tokens if t)


class SetDistances(NamedTuple):
    jaccard: float
    dice: float
    overlap: float


def set_distances(a: frozenset[str], b: frozenset[str]) -> SetDistances:
    if not a or not b:
        raise ValueError("set distances need two non-empty token sets")
    common = len(a & b)
    return SetDistances(
        1 - common / len(a | b),
        1 - 2 * common / (len(a) + len(b)),
        1 - common / min(len(a), len(b)),
    )


def hierarchy_distance(t1: TestId, t2: TestId) -> float:
    """``1 - i/n`` over the package+class paths of two tests.

    ``n`` is the longer path's length and ``i`` the first index where the paths
    differ (``n`` when identical, the shorter length when one is a prefix).
    """
    p, q = t1.path, t2.path
    n = max(len(p), len(q))
    i = 0
    while i < min(len(p), len(q)) and p[i] == q[i]:
        i += 1
    return 1.0 - i / n


def _char_features(a: str, b: str, damerau_variant: str) -> list[float]:
    lev = levenshtein(a, b)
    dam = damerau_levenshtein(a, b, damerau_variant)
    return [lev, dam, normalized(lev, a, b), normalized(dam, a, b), jaro(a, b), jaro_winkler(a, b)]


def feature_vector(
    t1: TestId,
    t2: TestId,
    ds: ProjectDataset,
    damerau_variant: str = "osa",
    code_text: str = "raw",
) -> tuple[float, ...]:
    """All measures for one pair, in ``FEATURE_NAMES`` order.

    The pair is put in canonical order first so the result is symmetric.
    ``code_text="tokens"`` runs the character measures on the space-joined
    token list instead of the raw source.
    """
    t1, t2 = sorted((t1, t2))
    missing = [str(t) for t in (t1, t2) if t not in ds.source_code]
    if missing:
        raise KeyError(f"no source code for {', '.join(missing)}")
    s1, s2 = ds.source_code[t1], ds.source_code[t2]
    if code_text == "raw":
        c1, c2 = s1.text, s2.text
    elif code_text == "tokens":
        c1, c2 = " ".join(s1.tokens), " ".join(s2.tokens)
    else:
        raise ValueError(f"unknown code_text {code_text!r}")
    return tuple(
        float(v)
        for v in (
            *_char_features(str(t1), str(t2), damerau_variant),
            *_char_features(c1, c2, damerau_variant),
            *set_distances(tokenize_name(t1), tokenize_name(t2)),
            *set_distances(normalize_tokens(s1.tokens), normalize_tokens(s2.tokens)),
            hierarchy_distance(t1, t2),
        )
    )

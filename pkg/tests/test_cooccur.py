import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flakesift.cooccur import DistanceMatrix, build_distance_matrix, jaccard_distance
from flakesift.ingest import TestId


def tid(i):
    return TestId(("p",), "C", f"m{i:03d}")


def test_jaccard_worked_example():
    assert jaccard_distance({52, 901, 5810}, {52, 901, 1119, 5810, 9402}) == 0.4


def test_jaccard_trivial_cases():
    assert jaccard_distance({1, 2}, {1, 2}) == 0.0
    assert jaccard_distance({1}, {2}) == 1.0
    with pytest.raises(ValueError):
        jaccard_distance(set(), set())


@given(st.frozensets(st.integers(0, 40), min_size=1), st.frozensets(st.integers(0, 40), min_size=1))
def test_jaccard_range_and_symmetry(a, b):
    d = jaccard_distance(a, b)
    assert 0.0 <= d <= 1.0
    assert d == jaccard_distance(b, a)
    assert (d == 0.0) == (a == b)


def test_identical_signatures_all_zero():
    dm = build_distance_matrix({tid(i): frozenset({1, 5, 9}) for i in range(3)})
    assert np.all(dm.condensed == 0.0)


def test_two_disjoint():
    dm = build_distance_matrix({tid(0): frozenset({1}), tid(1): frozenset({2})})
    assert list(dm.condensed) == [1.0]


def test_matrix_matches_nested_loop():
    rng = random.Random(2)
    sigs = {tid(i): frozenset(rng.sample(range(100), rng.randint(1, 30))) for i in range(10)}
    dm = build_distance_matrix(sigs)
    labels = sorted(sigs)
    assert list(dm.labels) == labels
    sq = dm.square()
    for i, a in enumerate(labels):
        assert sq[i, i] == 0.0
        for j, b in enumerate(labels):
            assert sq[i, j] == jaccard_distance(sigs[a], sigs[b])
            if i != j:
                assert dm[i, j] == sq[i, j]


def test_needs_two_tests():
    with pytest.raises(ValueError):
        build_distance_matrix({tid(0): frozenset({1})})


def test_from_square_roundtrip():
    rng = np.random.default_rng(0)
    A = rng.random((5, 5))
    A = (A + A.T) / 2
    np.fill_diagonal(A, 0)
    dm = DistanceMatrix.from_square([tid(i) for i in range(5)], A)
    assert np.array_equal(dm.square(), A)
    csv_text = dm.to_csv()
    assert csv_text.startswith("# schema=flakesift.distances schema_version=1\n")
    assert len(csv_text.splitlines()) == 7

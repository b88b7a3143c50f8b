import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flakesift.cluster import (
    LINKAGES,
    REASON_LOW_SILHOUETTE,
    REASON_TOO_FEW,
    ClusterReport,
    ConcreteClustering,
    agglomerate,
    candidate_thresholds,
    cut,
    make_report,
    select_threshold,
    silhouette_scores,
    sweep,
)
from flakesift.cooccur import DistanceMatrix
from flakesift.ingest import TestId
from flakesift.svg import render_dendrogram_svg
from oracles import naive_agglomerate, partition_at, silhouette_direct


def tid(i, cls="C"):
    return TestId(("p",), cls, f"m{i:03d}")


def matrix(A, labels=None):
    A = np.asarray(A, dtype=float)
    return DistanceMatrix.from_square(labels or [tid(i) for i in range(len(A))], A)


def random_square(rng, n, quantize=None):
    A = rng.random((n, n))
    if quantize:
        A = np.round(A * quantize) / quantize
    A = np.triu(A, 1)
    return A + A.T


def as_partition(cc):
    groups = {}
    for i, c in enumerate(cc.assignment):
        groups.setdefault(c, set()).add(i)
    return {frozenset(g) for g in groups.values()}


def test_two_tests_single_merge():
    dg = agglomerate(matrix([[0, 0.4], [0.4, 0]]))
    assert dg.merges == ((0, 1, 0.4, 2),)


def test_three_tests_forced_order():
    for linkage in LINKAGES:
        dg = agglomerate(matrix([[0, 0, 1], [0, 0, 1], [1, 1, 0]]), linkage)
        assert [m[:3] for m in dg.merges] == [(0, 1, 0.0), (2, 3, 1.0)]


@pytest.mark.parametrize("linkage", LINKAGES)
def test_agglomerate_matches_naive_reference(linkage):
    rng = np.random.default_rng(17)
    for _ in range(40):
        n = int(rng.integers(2, 13))
        A = random_square(rng, n)
        dg = agglomerate(matrix(A), linkage)
        ref = naive_agglomerate(A.tolist(), linkage)
        assert [m[:2] for m in dg.merges] == [r[:2] for r in ref]
        np.testing.assert_allclose(dg.heights, [r[2] for r in ref], rtol=0, atol=1e-12)


@pytest.mark.parametrize("linkage", ["single", "complete"])
def test_tie_breaking_matches_reference(linkage):
    # min/max updates are exact, so quantised distances give genuine ties
    rng = np.random.default_rng(3)
    for _ in range(50):
        n = int(rng.integers(3, 10))
        A = random_square(rng, n, quantize=4)
        dg = agglomerate(matrix(A), linkage)
        ref = naive_agglomerate(A.tolist(), linkage)
        assert [m[:3] for m in dg.merges] == [tuple(r) for r in ref]


def test_cut_matches_reference_at_every_threshold():
    rng = np.random.default_rng(5)
    for _ in range(30):
        n = int(rng.integers(2, 13))
        A = random_square(rng, n)
        dg = agglomerate(matrix(A))
        ref = naive_agglomerate(A.tolist())
        for t in candidate_thresholds(dg) + [1.0]:
            assert as_partition(cut(dg, t)) == partition_at(n, ref, t)


def test_cut_extremes_and_numbering():
    rng = np.random.default_rng(1)
    A = random_square(rng, 7) * 0.5 + 0.1
    dg = agglomerate(matrix(A))
    assert cut(dg, 0.0).n_clusters == 7
    assert cut(dg, float(dg.heights.max())).n_clusters == 1
    assert cut(dg, 1.0).assignment == (0,) * 7
    # ids are numbered by first appearance
    a = cut(dg, float(np.median(dg.heights))).assignment
    seen = []
    for c in a:
        if c not in seen:
            seen.append(c)
    assert seen == list(range(len(seen)))
    with pytest.raises(ValueError):
        cut(dg, 1.5)


def test_identical_signature_group_at_zero():
    n = 8
    A = np.full((n, n), 0.9)
    A[:5, :5] = 0.0
    np.fill_diagonal(A, 0.0)
    cc = cut(agglomerate(matrix(A)), 0.0)
    assert frozenset(range(5)) in as_partition(cc)


def test_silhouette_trivial():
    dm = matrix([[0, 0, 1], [0, 0, 1], [1, 1, 0]])
    s = silhouette_scores(dm, ConcreteClustering(0.0, dm.labels, (0, 0, 1)))
    assert s[tid(0)] == 1.0 and s[tid(1)] == 1.0
    assert s[tid(2)] == 0.0
    dm2 = matrix([[0, 0.5], [0.5, 0]])
    assert list(silhouette_scores(dm2, ConcreteClustering(0.0, dm2.labels, (0, 1))).values()) == [0.0, 0.0]


def test_silhouette_matches_direct_evaluation():
    rng = np.random.default_rng(8)
    for _ in range(50):
        n = 8
        A = random_square(rng, n)
        labels = rng.integers(0, 3, n)
        if len(set(labels.tolist())) < 2:
            continue
        _, labels = np.unique(labels, return_inverse=True)
        dm = matrix(A)
        got = list(silhouette_scores(dm, ConcreteClustering(0.0, dm.labels, tuple(labels.tolist()))).values())
        np.testing.assert_allclose(got, silhouette_direct(A.tolist(), labels.tolist()), rtol=0, atol=1e-12)


def test_sweep_means_match_direct():
    rng = np.random.default_rng(9)
    for _ in range(20):
        n = int(rng.integers(3, 13))
        A = random_square(rng, n)
        dm = matrix(A)
        dg = agglomerate(dm)
        for t, k, mean in sweep(dm, dg):
            cc = cut(dg, t)
            assert cc.n_clusters == k and 2 <= k <= n - 1
            direct = silhouette_direct(A.tolist(), list(cc.assignment))
            assert abs(mean - sum(direct) / n) <= 1e-12


def planted_blocks(sizes, within=0.05, between=0.95):
    n = sum(sizes)
    A = np.full((n, n), between)
    start = 0
    for s in sizes:
        A[start:start + s, start:start + s] = within
        start += s
    np.fill_diagonal(A, 0.0)
    return A


def test_select_two_planted_blocks():
    A = planted_blocks([5, 5])
    cc = select_threshold(matrix(A))
    assert cc is not None
    assert cc.n_clusters == 2
    assert cc.mean_silhouette > 0.9
    direct = silhouette_direct(A.tolist(), list(cc.assignment))
    assert abs(cc.mean_silhouette - sum(direct) / len(direct)) < 1e-12
    assert make_report(cc).systemic


def test_select_uniform_noise_is_none():
    rng = np.random.default_rng(4)
    for _ in range(5):
        A = 0.9 + 0.1 * random_square(rng, 20)
        np.fill_diagonal(A, 0.0)
        dm = matrix(A)
        assert select_threshold(dm) is None
        best = max(m for _, _, m in sweep(dm, agglomerate(dm)))
        assert best < 0.6


def test_select_too_few():
    assert select_threshold(matrix([[0, 0.1], [0.1, 0]])) is None
    report = make_report(None, [tid(0)], "p")
    assert report.reason == REASON_TOO_FEW and not report.systemic
    assert make_report(None, [tid(i) for i in range(5)]).reason == REASON_LOW_SILHOUETTE


def test_select_prefers_best_mean_and_respects_minimum():
    A = planted_blocks([4, 4, 4], within=0.2, between=0.9)
    dm = matrix(A)
    cc = select_threshold(dm)
    assert cc.n_clusters == 3
    assert select_threshold(dm, min_silhouette=0.99) is None


def test_make_report_drops_singletons():
    labels = (TestId(("a",), "X", "t"), TestId(("a",), "Y", "t"), TestId(("b",), "Z", "t"))
    report = make_report(ConcreteClustering(0.3, labels, (0, 0, 1), 0.7), labels, "p")
    assert [c.members for c in report.clusters] == [labels[:2]]
    assert report.clustered_test_count == 2
    assert report.clusters[0].distinct_test_classes == 2
    three = make_report(ConcreteClustering(0.3, labels + (tid(9),), (0, 0, 0, 1), 0.7))
    assert three.clusters[0].distinct_test_classes == 3


def test_report_json_roundtrip():
    labels = tuple(tid(i) for i in range(4))
    report = make_report(ConcreteClustering(0.3, labels, (0, 0, 1, 1), 0.7), labels, "p")
    obj = report.to_json()
    assert obj["schema_version"] == 1
    assert ClusterReport.from_json(obj) == report
    assert report.mean_cluster_size == 2.0


def test_svg_two_leaves_one_bracket():
    svg = render_dendrogram_svg(agglomerate(matrix([[0, 0.4], [0.4, 0]])), 0.5)
    root = ET.fromstring(svg)
    ns = "{http://www.w3.org/2000/svg}"
    assert len([p for p in root.iter(ns + "path") if p.get("class") == "bracket"]) == 1
    assert len([ln for ln in root.iter(ns + "line") if ln.get("class") == "threshold"]) == 1


def test_svg_deterministic_and_labels():
    rng = np.random.default_rng(12)
    dm = matrix(random_square(rng, 20))
    dg = agglomerate(dm)
    svg = render_dendrogram_svg(dg, 0.4, "demo")
    assert svg == render_dendrogram_svg(dg, 0.4, "demo")
    root = ET.fromstring(svg)
    texts = {t.text for t in root.iter("{http://www.w3.org/2000/svg}text") if t.get("class") == "leaf"}
    assert texts == {str(t) for t in dm.labels}


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 12), st.integers(0, 2**31))
def test_dendrogram_invariants(n, seed):
    rng = np.random.default_rng(seed)
    dg = agglomerate(matrix(random_square(rng, n)))
    assert len(dg.merges) == n - 1
    assert np.all(np.diff(dg.heights) >= 0)
    assert dg.merges[-1][3] == n
    assert sorted(dg.leaf_order()) == list(range(n))
    for t in candidate_thresholds(dg):
        assert 0.0 <= t <= 1.0

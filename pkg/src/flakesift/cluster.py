"""Agglomerative clustering of flaky tests by failure co-occurrence."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cooccur import DistanceMatrix
from .ingest import TestId

LINKAGES = ("average", "single", "complete", "weighted")
MIN_SILHOUETTE = 0.6

REASON_TOO_FEW = "too-few-flaky-tests"
REASON_LOW_SILHOUETTE = "below-min-silhouette"

# two sweep means closer than this are treated as tied
_TIE_EPS = 1e-12


@dataclass(frozen=True)
class Dendrogram:
    """Binary merge tree.

    Leaves are nodes ``0..n-1``; merge ``k`` creates node ``n + k``. Each merge
    is ``(left, right, height, member_count)`` with ``left < right``.
    """

    leaves: tuple[TestId, ...]
    merges: tuple[tuple[int, int, float, int], ...]
    linkage: str = "average"

    @property
    def n(self) -> int:
        return len(self.leaves)

    @property
    def heights(self) -> np.ndarray:
        return np.array([m[2] for m in self.merges])

    def leaf_order(self) -> list[int]:
        """Leaf indices in drawing order (left subtree first)."""
        n = self.n
        if n == 1:
            return [0]
        order, stack = [], [n + len(self.merges) - 1]
        while stack:
            node = stack.pop()
            if node < n:
                order.append(node)
            else:
                left, right = self.merges[node - n][:2]
                stack.append(right)
                stack.append(left)
        return order


@dataclass(frozen=True)
class ConcreteClustering:
    threshold: float
    labels: tuple[TestId, ...]
    assignment: tuple[int, ...]
    mean_silhouette: float | None = None

    @property
    def n_clusters(self) -> int:
        return max(self.assignment) + 1 if self.assignment else 0

    def clusters(self) -> list[list[TestId]]:
        out: list[list[TestId]] = [[] for _ in range(self.n_clusters)]
        for t, c in zip(self.labels, self.assignment):
            out[c].append(t)
        return out

    def as_dict(self) -> dict[TestId, int]:
        return dict(zip(self.labels, self.assignment))


def agglomerate(dm: DistanceMatrix, linkage: str = "average") -> Dendrogram:
    """Merge the two closest clusters until one remains.

    Inter-cluster distances follow the Lance-Williams update for ``linkage``.
    Exact ties go to the pair with the lowest (smaller id, larger id) node ids.
    """
    if linkage not in LINKAGES:
        raise ValueError(f"unknown linkage {linkage!r}; expected one of {LINKAGES}")
    n = dm.n
    if n < 2:
        raise ValueError("agglomeration needs at least two items")
    D = dm.square()
    np.fill_diagonal(D, np.inf)
    node = np.arange(n)
    size = np.ones(n)
    merges = []
    last = 0.0
    for k in range(n - 1):
        height = D.min()
        ii, jj = np.nonzero(D == height)
        lo = np.minimum(node[ii], node[jj])
        hi = np.maximum(node[ii], node[jj])
        best = np.lexsort((hi, lo))[0]
        i, j = sorted((ii[best], jj[best]))
        di, dj = D[i], D[j]
        if linkage == "average":
            new = (size[i] * di + size[j] * dj) / (size[i] + size[j])
        elif linkage == "single":
            new = np.minimum(di, dj)
        elif linkage == "complete":
            new = np.maximum(di, dj)
        else:
            new = (di + dj) / 2
        # rounding in the update can dip below the previous height by an ulp
        height = max(float(height), last)
        last = height
        merges.append((int(lo[best]), int(hi[best]), height, int(size[i] + size[j])))
        D[i, :] = new
        D[:, i] = new
        D[i, i] = np.inf
        D[j, :] = np.inf
        D[:, j] = np.inf
        node[i] = n + k
        size[i] += size[j]
    return Dendrogram(dm.labels, tuple(merges), linkage)


def _relabel_by_first_leaf(roots: Sequence[int]) -> tuple[int, ...]:
    ids: dict[int, int] = {}
    return tuple(ids.setdefault(r, len(ids)) for r in roots)


def cut(dg: Dendrogram, threshold: float) -> ConcreteClustering:
    """Flat clustering: connected components of merges with height <= threshold.

    Cluster ids are contiguous from 0, numbered by first appearance in leaf order.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    n = dg.n
    parent = list(range(n + len(dg.merges)))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for k, (left, right, height, _) in enumerate(dg.merges):
        if height <= threshold:
            parent[find(left)] = n + k
            parent[find(right)] = n + k
    return ConcreteClustering(threshold, dg.leaves, _relabel_by_first_leaf([find(i) for i in range(n)]))


def _silhouette(D: np.ndarray, assignment: np.ndarray) -> np.ndarray:
    n = len(assignment)
    k = assignment.max() + 1
    onehot = np.zeros((n, k))
    onehot[np.arange(n), assignment] = 1.0
    return _silhouette_from_sums(D @ onehot, onehot.sum(axis=0), assignment)


def _silhouette_from_sums(sums: np.ndarray, sizes: np.ndarray, own: np.ndarray) -> np.ndarray:
    # sums[i, c]: total distance from item i to the members of cluster c
    rows = np.arange(len(own))
    own_size = sizes[own]
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(own_size > 1, sums[rows, own] / (own_size - 1), 0.0)
        means = sums / sizes
    means[rows, own] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(denom > 0, (b - a) / denom, 0.0)
    return np.where(own_size > 1, s, 0.0)


def silhouette_scores(dm: DistanceMatrix, cc: ConcreteClustering) -> dict[TestId, float]:
    """Per-test silhouette ``(b - a) / max(a, b)``.

    ``a`` is the mean distance to the test's own cluster mates, ``b`` the
    smallest mean distance to another cluster. Tests alone in their cluster
    score 0, as do tests with ``a == b == 0``.
    """
    if tuple(cc.labels) != tuple(dm.labels):
        raise ValueError("clustering and distance matrix have different labels")
    if cc.n_clusters < 2:
        raise ValueError("silhouette is undefined for fewer than two clusters")
    s = _silhouette(dm.square(), np.asarray(cc.assignment))
    return dict(zip(dm.labels, s.tolist()))


def candidate_thresholds(dg: Dendrogram) -> list[float]:
    """0 plus the midpoints between consecutive distinct merge heights."""
    hs = np.unique(dg.heights)
    mids = (hs[:-1] + hs[1:]) / 2
    return [0.0] + [float(m) for m in mids if m > 0.0]


def sweep(dm: DistanceMatrix, dg: Dendrogram) -> list[tuple[float, int, float]]:
    """Mean silhouette at every candidate threshold yielding 2..n-1 clusters.

    Returns ``(threshold, n_clusters, mean_silhouette)`` in ascending threshold
    order. Per-cluster distance sums are merged column-wise as the threshold
    rises, so the whole sweep costs about one pass over the square matrix per
    candidate rather than a matrix product.
    """
    n = dm.n
    sums = dm.square()
    sizes = np.ones(n)
    active = np.ones(n, dtype=bool)
    slot = np.arange(n)  # leaf -> column holding its cluster
    slot_of_node = list(range(n))
    out = []
    k = 0
    n_clusters = n
    for t in candidate_thresholds(dg):
        while k < len(dg.merges) and dg.merges[k][2] <= t:
            left, right = dg.merges[k][:2]
            a, b = slot_of_node[left], slot_of_node[right]
            sums[:, a] += sums[:, b]
            sizes[a] += sizes[b]
            active[b] = False
            slot[slot == b] = a
            slot_of_node.append(a)
            n_clusters -= 1
            k += 1
        if not 2 <= n_clusters <= n - 1:
            continue
        cols = np.flatnonzero(active)
        position = np.empty(n, dtype=int)
        position[cols] = np.arange(len(cols))
        s = _silhouette_from_sums(sums[:, cols], sizes[cols], position[slot])
        out.append((t, n_clusters, float(s.mean())))
    return out


def select_threshold(
    dm: DistanceMatrix,
    min_silhouette: float = MIN_SILHOUETTE,
    linkage: str = "average",
    dendrogram: Dendrogram | None = None,
) -> ConcreteClustering | None:
    """Cut with the greatest mean silhouette over all tests, or None.

    None means no systemic flakiness: fewer than three tests, or no candidate
    cut reaches ``min_silhouette``. Ties go to the smaller threshold.
    """
    if dm.n < 3:
        return None
    dg = dendrogram if dendrogram is not None else agglomerate(dm, linkage)
    best = None
    for t, _, mean in sweep(dm, dg):
        if best is None or mean > best[1] + _TIE_EPS:
            best = (t, mean)
    if best is None:
        return None
    cc = cut(dg, best[0])
    mean = float(np.mean(list(silhouette_scores(dm, cc).values())))
    if mean < min_silhouette:
        return None
    return ConcreteClustering(cc.threshold, cc.labels, cc.assignment, mean)


@dataclass(frozen=True)
class ClusterEntry:
    id: int
    members: tuple[TestId, ...]
    distinct_test_classes: int


@dataclass(frozen=True)
class ClusterReport:
    project: str
    flaky_test_count: int
    clusters: tuple[ClusterEntry, ...] = ()
    threshold: float | None = None
    mean_silhouette: float | None = None
    reason: str | None = None
    linkage: str = "average"
    min_silhouette: float = MIN_SILHOUETTE

    @property
    def systemic(self) -> bool:
        return bool(self.clusters)

    @property
    def clustered_test_count(self) -> int:
        return sum(len(c.members) for c in self.clusters)

    @property
    def mean_cluster_size(self) -> float | None:
        return self.clustered_test_count / len(self.clusters) if self.clusters else None

    @property
    def mean_distinct_classes(self) -> float | None:
        if not self.clusters:
            return None
        return sum(c.distinct_test_classes for c in self.clusters) / len(self.clusters)

    def cluster_of(self) -> dict[TestId, int]:
        return {t: c.id for c in self.clusters for t in c.members}

    def to_json(self) -> dict:
        return {
            "schema": "flakesift.cluster-report",
            "schema_version": 1,
            "project": self.project,
            "flaky_test_count": self.flaky_test_count,
            "clusters": [
                {"id": c.id, "members": [str(t) for t in c.members], "distinct_test_classes": c.distinct_test_classes}
                for c in self.clusters
            ],
            "clustered_test_count": self.clustered_test_count,
            "mean_cluster_size": self.mean_cluster_size,
            "mean_distinct_classes": self.mean_distinct_classes,
            "mean_silhouette": self.mean_silhouette,
            "threshold": self.threshold,
            "systemic": self.systemic,
            "reason": self.reason,
            "linkage": self.linkage,
            "min_silhouette": self.min_silhouette,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ClusterReport":
        clusters = tuple(
            ClusterEntry(c["id"], tuple(TestId.parse(m) for m in c["members"]), c["distinct_test_classes"])
            for c in obj["clusters"]
        )
        return cls(
            obj["project"],
            obj["flaky_test_count"],
            clusters,
            obj["threshold"],
            obj["mean_silhouette"],
            obj.get("reason"),
            obj.get("linkage", "average"),
            obj.get("min_silhouette", MIN_SILHOUETTE),
        )


def make_report(
    cc: ConcreteClustering | None,
    labels: Sequence[TestId] = (),
    project: str = "",
    linkage: str = "average",
    min_silhouette: float = MIN_SILHOUETTE,
) -> ClusterReport:
    """Summarise a clustering, dropping singleton clusters.

    ``labels`` is only consulted when ``cc`` is None, to count the flaky tests
    and pick the reason code.
    """
    if cc is None:
        n = len(labels)
        reason = REASON_TOO_FEW if n < 3 else REASON_LOW_SILHOUETTE
        return ClusterReport(project, n, reason=reason, linkage=linkage, min_silhouette=min_silhouette)
    entries = []
    for members in cc.clusters():
        if len(members) < 2:
            continue
        classes = {t.qualified_class for t in members}
        entries.append(ClusterEntry(len(entries), tuple(members), len(classes)))
    return ClusterReport(
        project,
        len(cc.labels),
        tuple(entries),
        cc.threshold,
        cc.mean_silhouette,
        None if entries else REASON_LOW_SILHOUETTE,
        linkage,
        min_silhouette,
    )

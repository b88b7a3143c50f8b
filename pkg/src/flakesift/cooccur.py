"""Pairwise Jaccard distances between failure signatures."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .ingest import TestId


def jaccard_distance(a, b) -> float:
    """1 - |a & b| / |a | b| for two sets of run ids."""
    a, b = set(a), set(b)
    union = len(a | b)
    if union == 0:
        raise ValueError("Jaccard distance is undefined for two empty sets")
    return 1.0 - len(a & b) / union


@dataclass(frozen=True)
class DistanceMatrix:
    """Condensed (row-major upper triangle) pairwise distance matrix."""

    labels: tuple[TestId, ...]
    condensed: np.ndarray

    def __post_init__(self):
        n = len(self.labels)
        if self.condensed.shape != (n * (n - 1) // 2,):
            raise ValueError("condensed array length does not match label count")

    @property
    def n(self) -> int:
        return len(self.labels)

    def square(self) -> np.ndarray:
        n = self.n
        out = np.zeros((n, n))
        iu = np.triu_indices(n, 1)
        out[iu] = self.condensed
        out[(iu[1], iu[0])] = self.condensed
        return out

    def __getitem__(self, ij) -> float:
        i, j = ij
        if i == j:
            return 0.0
        if i > j:
            i, j = j, i
        n = self.n
        return float(self.condensed[n * i - i * (i + 1) // 2 + (j - i - 1)])

    @classmethod
    def from_square(cls, labels: Sequence[TestId], square: np.ndarray) -> "DistanceMatrix":
        square = np.asarray(square, dtype=float)
        return cls(tuple(labels), square[np.triu_indices(len(labels), 1)].copy())

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("# schema=flakesift.distances schema_version=1\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([""] + [str(t) for t in self.labels])
        for t, row in zip(self.labels, self.square()):
            w.writerow([str(t)] + [repr(float(v)) for v in row])
        return buf.getvalue()


def build_distance_matrix(signatures: Mapping[TestId, frozenset[int]]) -> DistanceMatrix:
    """Jaccard distance between every pair of failure signatures.

    Labels are sorted canonically. Intersections and unions are integer
    counts; only the final ratio is floating point.
    """
    labels = sorted(signatures)
    if len(labels) < 2:
        raise ValueError("need at least two flaky tests to build a distance matrix; skip clustering")
    runs = sorted(set().union(*signatures.values()))
    col = {r: k for k, r in enumerate(runs)}
    member = np.zeros((len(labels), len(runs)))
    for i, t in enumerate(labels):
        sig = signatures[t]
        if not sig:
            raise ValueError(f"empty failure signature for {t}")
        member[i, [col[r] for r in sig]] = 1
    # float matmul is exact for these counts and uses BLAS
    inter = np.rint(member @ member.T).astype(np.int64)
    sizes = np.diag(inter)
    iu = np.triu_indices(len(labels), 1)
    common = inter[iu]
    union = sizes[iu[0]] + sizes[iu[1]] - common
    return DistanceMatrix(tuple(labels), 1.0 - common / union)

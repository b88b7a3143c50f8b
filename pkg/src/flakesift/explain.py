"""Interventional Shapley attributions and mean-|phi| feature rankings."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .strdist import FEATURE_NAMES

MAX_EXACT_FEATURES = 12
_CHUNK_ROWS = 200_000


@dataclass(frozen=True)
class Attribution:
    base_value: float
    phi: np.ndarray
    prediction: float

    @property
    def residual(self) -> float:
        return self.prediction - self.base_value - float(self.phi.sum())


def _as_predict(model) -> Callable[[np.ndarray], np.ndarray]:
    return model.predict if hasattr(model, "predict") else model


def _evaluate(f, rows: np.ndarray) -> np.ndarray:
    if len(rows) <= _CHUNK_ROWS:
        return np.asarray(f(rows), dtype=float)
    return np.concatenate([np.asarray(f(rows[i:i + _CHUNK_ROWS]), dtype=float)
                           for i in range(0, len(rows), _CHUNK_ROWS)])


def shapley_exact(model, x, background) -> Attribution:
    """Shapley values of the game ``v(S) = mean_z f(x_S, z_rest)`` by enumerating all subsets.

    ``model`` is a callable or anything with ``predict``. Limited to
    ``MAX_EXACT_FEATURES`` features; use :func:`shapley_sampled` beyond that.
    """
    f = _as_predict(model)
    x = np.asarray(x, dtype=float)
    Z = np.atleast_2d(np.asarray(background, dtype=float))
    F = x.shape[0]
    if F > MAX_EXACT_FEATURES:
        raise ValueError(f"{F} features is too many for exact enumeration; use shapley_sampled")
    if len(Z) == 0:
        raise ValueError("background set is empty")
    masks = np.arange(2 ** F)
    take_x = ((masks[:, None] >> np.arange(F)) & 1).astype(bool)  # (2^F, F)
    rows = np.where(take_x[:, None, :], x, Z[None, :, :]).reshape(-1, F)
    v = _evaluate(f, rows).reshape(2 ** F, len(Z)).mean(axis=1)
    sizes = take_x.sum(axis=1)
    weight = np.array([math.factorial(s) * math.factorial(F - s - 1) / math.factorial(F) for s in range(F)])
    phi = np.zeros(F)
    for i in range(F):
        without = masks[~take_x[:, i]]
        phi[i] = np.sum(weight[sizes[without]] * (v[without | (1 << i)] - v[without]))
    return Attribution(float(v[0]), phi, float(v[-1]))


def shapley_sampled(model, x, background, permutations: int = 200, seed: int = 0) -> Attribution:
    """Monte Carlo Shapley values over random feature orderings.

    Orderings are drawn in antithetic pairs (an ordering and its reverse).
    Each ordering walks from the background to ``x`` one feature at a time and
    credits each feature with the change in the background-averaged output.
    Any floating-point residual is spread over the features in proportion to
    ``|phi|`` so that ``base + sum(phi) == prediction``.
    """
    if permutations < 1:
        raise ValueError("need at least one permutation")
    f = _as_predict(model)
    x = np.asarray(x, dtype=float)
    Z = np.atleast_2d(np.asarray(background, dtype=float))
    F, B = x.shape[0], len(Z)
    rng = np.random.default_rng(seed)
    perms = []
    while len(perms) < permutations:
        p = rng.permutation(F)
        perms.append(p)
        if len(perms) < permutations:
            perms.append(p[::-1])
    perms = np.array(perms)
    P = len(perms)
    # state k of ordering p takes features p[:k] from x
    rank = np.empty_like(perms)
    rank[np.arange(P)[:, None], perms] = np.arange(F)
    take_x = rank[:, None, :] < np.arange(F + 1)[None, :, None]  # (P, F+1, F)
    rows = np.where(take_x[:, :, None, :], x, Z[None, None, :, :]).reshape(-1, F)
    v = _evaluate(f, rows).reshape(P, F + 1, B).mean(axis=2)
    gains = np.diff(v, axis=1)  # gains[p, k] belongs to feature perms[p, k]
    phi = np.zeros(F)
    np.add.at(phi, perms.ravel(), gains.ravel())
    phi /= P
    base = float(np.mean(_evaluate(f, Z)))
    prediction = float(_evaluate(f, x[None, :])[0])
    residual = prediction - base - phi.sum()
    weight = np.abs(phi)
    if weight.sum() > 0:
        phi = phi + residual * weight / weight.sum()
    return Attribution(base, phi, prediction)


@dataclass(frozen=True)
class ImportanceRanking:
    feature_names: tuple[str, ...]
    mean_abs: np.ndarray
    ranks: np.ndarray  # 1 = largest mean |phi|

    def rank_of(self, name: str) -> int:
        return int(self.ranks[self.feature_names.index(name)])


def rank_features(attributions: Sequence[Attribution], feature_names: Sequence[str] = FEATURE_NAMES) -> ImportanceRanking:
    """Rank features by mean absolute attribution; ties keep the canonical order."""
    if not attributions:
        raise ValueError("no attributions to rank")
    mean_abs = np.mean([np.abs(a.phi) for a in attributions], axis=0)
    order = sorted(range(len(mean_abs)), key=lambda i: (-mean_abs[i], i))
    ranks = np.empty(len(mean_abs), dtype=int)
    ranks[order] = np.arange(1, len(mean_abs) + 1)
    return ImportanceRanking(tuple(feature_names), mean_abs, ranks)


def importance_csv(rankings: Mapping[str, ImportanceRanking]) -> str:
    """Rows are features; one rank column per project plus the mean rank."""
    projects = sorted(rankings)
    names = rankings[projects[0]].feature_names if projects else FEATURE_NAMES
    buf = io.StringIO()
    buf.write("# schema=flakesift.importance schema_version=1\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["feature", *projects, "mean_rank"])
    for i, name in enumerate(names):
        ranks = [int(rankings[p].ranks[i]) for p in projects]
        mean = sum(ranks) / len(ranks) if ranks else ""
        w.writerow([name, *ranks, repr(mean) if ranks else ""])
    return buf.getvalue()

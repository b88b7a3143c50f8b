"""Diverse stack-trace samples and per-cluster dossiers for manual inspection."""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import combinations
from typing import Mapping, Sequence

import numpy as np

from .cooccur import jaccard_distance
from .ingest import FailureRecord, ProjectDataset, TestId
from .strdist import levenshtein

TRUNCATE_AT = 10_000


@dataclass(frozen=True)
class TraceSample:
    cluster_id: int
    entries: tuple[FailureRecord, ...]


def _text(rec: FailureRecord, truncate: int) -> str:
    return (rec.stack_trace or rec.error_message)[:truncate]


def farthest_first(texts: Sequence[str], k: int, first: int) -> list[int]:
    """Greedy max-min selection by Levenshtein distance, starting from ``first``.

    Ties go to the lowest index. Identical texts are compared once.
    """
    uniq: dict[str, int] = {}
    group = [uniq.setdefault(t, len(uniq)) for t in texts]
    reps = list(uniq)
    nearest = np.full(len(texts), np.inf)
    chosen = [first]
    available = np.ones(len(texts), dtype=bool)
    available[first] = False
    while len(chosen) < min(k, len(texts)):
        last = reps[group[chosen[-1]]]
        dist_to_last = np.array([levenshtein(last, r) for r in reps], dtype=float)
        nearest = np.minimum(nearest, dist_to_last[group])
        scores = np.where(available, nearest, -1.0)
        pick = int(np.argmax(scores))  # first maximum = lowest index
        chosen.append(pick)
        available[pick] = False
    return chosen


def sample_diverse_traces(
    ds: ProjectDataset,
    members: Sequence[TestId],
    k: int = 5,
    seed: int = 0,
    cluster_id: int = 0,
    truncate: int = TRUNCATE_AT,
) -> TraceSample:
    """Pick up to ``k`` failures of the cluster members with mutually distant traces.

    The first pick is seeded-random; each further pick maximises the minimum
    Levenshtein distance to the traces already picked.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    wanted = set(members)
    pool = [r for r in ds.failures if r.test in wanted]
    if not pool:
        raise ValueError(f"cluster {cluster_id} has no failure records")
    first = int(np.random.default_rng(seed).integers(len(pool)))
    picks = farthest_first([_text(r, truncate) for r in pool], k, first)
    return TraceSample(cluster_id, tuple(pool[i] for i in picks))


def cofailure_stats(signatures: Mapping[TestId, frozenset[int]], members: Sequence[TestId]) -> dict:
    counts: dict[int, int] = {}
    for t in members:
        for run in signatures[t]:
            counts[run] = counts.get(run, 0) + 1
    pairs = [jaccard_distance(signatures[a], signatures[b]) for a, b in combinations(sorted(members), 2)]
    return {
        "member_failures": {str(t): len(signatures[t]) for t in sorted(members)},
        "runs_with_any_failure": len(counts),
        "runs_with_two_or_more_failures": sum(1 for c in counts.values() if c >= 2),
        "runs_with_all_failing": sum(1 for c in counts.values() if c == len(members)),
        "mean_pairwise_jaccard_distance": sum(pairs) / len(pairs) if pairs else None,
    }


def dossier(
    ds: ProjectDataset,
    signatures: Mapping[TestId, frozenset[int]],
    cluster_id: int,
    members: Sequence[TestId],
    k: int = 5,
    seed: int = 0,
    truncate: int = TRUNCATE_AT,
) -> dict:
    sample = sample_diverse_traces(ds, members, k, seed + cluster_id, cluster_id, truncate)
    return {
        "schema": "flakesift.dossier",
        "schema_version": 1,
        "project": ds.project_name,
        "cluster_id": cluster_id,
        "members": [str(t) for t in sorted(members)],
        "cofailure": cofailure_stats(signatures, members),
        "sampled_traces": [
            {"test": str(r.test), "run": r.run, "error_message": r.error_message, "stack_trace": r.stack_trace}
            for r in sample.entries
        ],
    }


def dossier_markdown(d: dict) -> str:
    co = d["cofailure"]
    lines = [
        "<!-- schema=flakesift.dossier schema_version=1 -->",
        f"# Cluster {d['cluster_id']} ({d['project']})",
        "",
        f"{len(d['members'])} flaky tests; failures in {co['runs_with_any_failure']} runs, "
        f"{co['runs_with_two_or_more_failures']} with two or more members failing together.",
        "",
        "## Members",
        "",
    ]
    for m in d["members"]:
        lines.append(f"- `{m}` ({co['member_failures'][m]} failures)")
    lines += ["", "## Sampled failures", ""]
    for i, s in enumerate(d["sampled_traces"], 1):
        lines += [f"### {i}. `{s['test']}`, run {s['run']}", "", f"Message: {s['error_message'] or '(none)'}", "", "```"]
        lines += [s["stack_trace"] or "(no stack trace)", "```", ""]
    return "\n".join(lines)


def dossier_json(d: dict) -> str:
    return json.dumps(d, indent=2, ensure_ascii=False) + "\n"

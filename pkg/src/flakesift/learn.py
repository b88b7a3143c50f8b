"""Tree-ensemble models that predict co-occurrence from static pair features.

Trees are grown with scikit-learn and then flattened into plain node arrays;
prediction, serialisation and attribution all work from those arrays, so a
model loaded from JSON behaves exactly like the one that was trained.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Mapping, Sequence

import numba
import numpy as np

from .cluster import ClusterReport
from .cooccur import jaccard_distance
from .ingest import ProjectDataset, TestId
from .strdist import FEATURE_LAYOUT_VERSION, FEATURE_NAMES, feature_vector

log = logging.getLogger(__name__)

KINDS = ("extra_trees", "gradient_boosting", "random_forest")
TASKS = ("regression", "classification")
MODEL_SCHEMA = "flakesift.model"

MIN_FLAKY_FOR_ML = 10
REASON_TOO_FEW_FOR_ML = "too-few-flaky-for-ml"
REASON_NO_CLUSTER = "no-cluster"
REASON_DEGENERATE = "degenerate-target"
REASON_ALL_FOLDS_SKIPPED = "all-folds-skipped"


class GateError(ValueError):
    """A project does not qualify for the learning step."""

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


@dataclass(frozen=True)
class PairExample:
    tests: tuple[TestId, TestId]
    features: tuple[float, ...]
    target_distance: float
    same_cluster: bool


def build_pair_dataset(
    ds: ProjectDataset,
    signatures: Mapping[TestId, frozenset[int]],
    report: ClusterReport,
    min_flaky: int = MIN_FLAKY_FOR_ML,
    **feature_options,
) -> list[PairExample]:
    """One example per unordered pair of flaky tests, in canonical order."""
    tests = sorted(signatures)
    if len(tests) < min_flaky:
        raise GateError(REASON_TOO_FEW_FOR_ML, f"{len(tests)} flaky tests, need {min_flaky}")
    if not report.clusters:
        raise GateError(REASON_NO_CLUSTER, f"project {report.project!r} has no cluster")
    cluster_of = report.cluster_of()
    out = []
    for a, b in combinations(tests, 2):
        ca, cb = cluster_of.get(a), cluster_of.get(b)
        out.append(
            PairExample(
                (a, b),
                feature_vector(a, b, ds, **feature_options),
                jaccard_distance(signatures[a], signatures[b]),
                ca is not None and ca == cb,
            )
        )
    return out


def write_feature_csv(examples: Sequence[PairExample]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    buf.write(f"# schema=flakesift.features schema_version=1 layout={FEATURE_LAYOUT_VERSION}\n")
    w.writerow(["test_a", "test_b", *FEATURE_NAMES, "target_distance", "same_cluster"])
    for ex in sorted(examples, key=lambda e: (str(e.tests[0]), str(e.tests[1]))):
        w.writerow([str(ex.tests[0]), str(ex.tests[1]), *map(repr, ex.features), repr(ex.target_distance), int(ex.same_cluster)])
    return buf.getvalue()


def read_feature_csv(text: str) -> list[PairExample]:
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    rows = csv.reader(lines)
    header = next(rows)
    if tuple(header[2:-2]) != FEATURE_NAMES:
        raise ValueError("feature CSV columns do not match this feature layout")
    out = []
    for row in rows:
        out.append(
            PairExample(
                (TestId.parse(row[0]), TestId.parse(row[1])),
                tuple(float(v) for v in row[2:-2]),
                float(row[-2]),
                row[-1] == "1",
            )
        )
    return out


# -- folds -------------------------------------------------------------------


def kfold_split(
    tests: Sequence[TestId],
    k: int = 5,
    seed: int = 0,
    strata: Mapping[TestId, int] | None = None,
) -> list[list[TestId]]:
    """Partition tests (not pairs) into ``k`` folds whose sizes differ by at most one.

    With ``strata`` (e.g. cluster ids; tests missing from the map form one
    extra stratum) every stratum is spread evenly over the folds.
    """
    tests = sorted(tests)
    if len(tests) < k:
        raise ValueError(f"cannot split {len(tests)} tests into {k} folds")
    rng = np.random.default_rng(seed)
    if strata is None:
        order = [tests[i] for i in rng.permutation(len(tests))]
    else:
        groups: dict[int, list[TestId]] = {}
        for t in tests:
            groups.setdefault(strata.get(t, -1), []).append(t)
        order = []
        for key in sorted(groups):
            members = groups[key]
            order.extend(members[i] for i in rng.permutation(len(members)))
    folds: list[list[TestId]] = [[] for _ in range(k)]
    for i, t in enumerate(order):
        folds[i % k].append(t)
    return [sorted(f) for f in folds]


# -- metrics -----------------------------------------------------------------


def r_squared(y_true, y_pred) -> float:
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if y_true.shape != y_pred.shape or y_true.size == 0:
        raise ValueError("r_squared needs two equal, non-empty arrays")
    resid = y_true - np.mean(y_true)
    ss_tot = float(np.dot(resid, resid))
    if ss_tot == 0.0:
        raise ValueError("R^2 is undefined for a constant target")
    err = y_true - y_pred
    return 1.0 - float(np.dot(err, err)) / ss_tot


def mcc(y_true, y_pred) -> float:
    """Matthews correlation; 0 when any confusion-matrix marginal is empty."""
    t = np.asarray(y_true, dtype=bool)
    p = np.asarray(y_pred, dtype=bool)
    if t.shape != p.shape or t.size == 0:
        raise ValueError("mcc needs two equal, non-empty arrays")
    tp = int(np.sum(t & p))
    tn = int(np.sum(~t & ~p))
    fp = int(np.sum(~t & p))
    fn = int(np.sum(t & ~p))
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        return 0.0
    return (tp * tn - fp * fn) / math.sqrt(denom)


# -- models ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DecisionTree:
    """Flattened binary tree. ``feature[i] < 0`` marks a leaf.

    Internal nodes send a row left when ``x[feature] <= threshold``. Leaf
    values are means (regression), P(positive) (forest classification) or raw
    boosting scores (gradient boosting).
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def to_json(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_json(cls, obj) -> "DecisionTree":
        return cls(
            np.asarray(obj["feature"], dtype=np.int64),
            np.asarray(obj["threshold"], dtype=np.float64),
            np.asarray(obj["left"], dtype=np.int64),
            np.asarray(obj["right"], dtype=np.int64),
            np.asarray(obj["value"], dtype=np.float64),
        )

    @classmethod
    def from_sklearn(cls, tree, positive_class: bool) -> "DecisionTree":
        t = tree.tree_
        if positive_class:
            counts = t.value[:, 0, :]
            value = counts[:, 1] / counts.sum(axis=1)
        else:
            value = t.value[:, 0, 0]
        feature = np.where(t.children_left < 0, -1, t.feature).astype(np.int64)
        return cls(
            feature,
            t.threshold.astype(np.float64),
            t.children_left.astype(np.int64),
            t.children_right.astype(np.int64),
            np.ascontiguousarray(value, dtype=np.float64),
        )


@numba.njit(cache=True)
def _sum_trees(X, roots, feature, threshold, left, right, value):
    # tree-outer order keeps one tree hot in cache
    out = np.zeros(X.shape[0])
    for t in range(roots.shape[0]):
        for r in range(X.shape[0]):
            node = roots[t]
            while feature[node] >= 0:
                if X[r, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            out[r] += value[node]
    return out


@dataclass(eq=False)
class TreeEnsembleModel:
    kind: str
    task: str
    trees: list[DecisionTree]
    base_value: float = 0.0
    learning_rate: float = 0.0
    seed: int = 0
    params: dict = field(default_factory=dict)
    n_features: int = len(FEATURE_NAMES)

    def __post_init__(self):
        self._packed = None

    def _pack(self):
        if self._packed is None:
            offsets = np.cumsum([0] + [len(t.feature) for t in self.trees])
            cat = lambda name: (  # noqa: E731
                np.concatenate([getattr(t, name) for t in self.trees]) if self.trees else np.zeros(0)
            )
            shift = lambda name: (  # noqa: E731
                np.concatenate([np.where(getattr(t, name) >= 0, getattr(t, name) + o, -1)
                                for t, o in zip(self.trees, offsets)])
                if self.trees else np.zeros(0, dtype=np.int64)
            )
            self._packed = (
                offsets[:-1].astype(np.int64),
                cat("feature").astype(np.int64),
                cat("threshold").astype(np.float64),
                shift("left").astype(np.int64),
                shift("right").astype(np.int64),
                cat("value").astype(np.float64),
            )
        return self._packed

    def predict(self, X) -> np.ndarray:
        """Regression output, or P(same cluster) for classification."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if not self.trees:
            return np.full(X.shape[0], self.base_value)
        # trees were grown on float32 inputs; compare in the same precision
        X = np.ascontiguousarray(X.astype(np.float32).astype(np.float64))
        total = _sum_trees(X, *self._pack())
        if self.kind == "gradient_boosting":
            raw = self.base_value + self.learning_rate * total
            return raw if self.task == "regression" else 1.0 / (1.0 + np.exp(-raw))
        return total / len(self.trees)

    def predict_label(self, X) -> np.ndarray:
        return self.predict(X) > 0.5

    def staged_loss(self, X, y) -> list[float]:
        """Training loss after each boosting stage (squared error or log-loss)."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        X32 = np.ascontiguousarray(X.astype(np.float32).astype(np.float64))
        y = np.asarray(y, dtype=float)
        raw = np.full(len(y), self.base_value)
        losses = []
        for tree in self.trees:
            single = TreeEnsembleModel(self.kind, self.task, [tree])
            raw = raw + self.learning_rate * _sum_trees(X32, *single._pack())
            if self.task == "regression":
                losses.append(float(np.mean((y - raw) ** 2)))
            else:
                losses.append(float(np.mean(np.logaddexp(0, raw) - y * raw)))
        return losses

    def to_json(self) -> dict:
        return {
            "schema": MODEL_SCHEMA,
            "schema_version": 1,
            "feature_layout": FEATURE_LAYOUT_VERSION,
            "kind": self.kind,
            "task": self.task,
            "seed": self.seed,
            "base_value": self.base_value,
            "learning_rate": self.learning_rate,
            "n_features": self.n_features,
            "params": self.params,
            "trees": [t.to_json() for t in self.trees],
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "TreeEnsembleModel":
        if obj.get("schema") != MODEL_SCHEMA:
            raise ValueError("not a serialised model")
        return cls(
            obj["kind"],
            obj["task"],
            [DecisionTree.from_json(t) for t in obj["trees"]],
            obj["base_value"],
            obj["learning_rate"],
            obj["seed"],
            obj.get("params", {}),
            obj.get("n_features", len(FEATURE_NAMES)),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True) + "\n"


def default_params(kind: str, task: str, n_features: int) -> dict:
    if kind == "random_forest":
        mf = math.ceil(math.sqrt(n_features)) if task == "classification" else max(1, n_features // 3)
        return {"n_estimators": 100, "max_features": mf, "bootstrap": True}
    if kind == "extra_trees":
        return {"n_estimators": 100, "max_features": "sqrt" if task == "classification" else 1.0, "bootstrap": False}
    if kind == "gradient_boosting":
        return {"n_estimators": 100, "learning_rate": 0.1, "max_depth": 3}
    raise ValueError(f"unknown model kind {kind!r}; expected one of {KINDS}")


def _sklearn_estimator(kind: str, task: str, params: dict, seed: int, n_jobs: int):
    from sklearn import ensemble

    names = {
        ("random_forest", "regression"): ensemble.RandomForestRegressor,
        ("random_forest", "classification"): ensemble.RandomForestClassifier,
        ("extra_trees", "regression"): ensemble.ExtraTreesRegressor,
        ("extra_trees", "classification"): ensemble.ExtraTreesClassifier,
        ("gradient_boosting", "regression"): ensemble.GradientBoostingRegressor,
        ("gradient_boosting", "classification"): ensemble.GradientBoostingClassifier,
    }
    cls = names[(kind, task)]
    extra = {} if kind == "gradient_boosting" else {"n_jobs": n_jobs}
    return cls(random_state=seed, **params, **extra)


def fit_ensemble(
    kind: str,
    task: str,
    X,
    y,
    seed: int = 0,
    n_jobs: int = 1,
    **overrides,
) -> TreeEnsembleModel:
    """Fit one of the three ensembles; constant data gives a constant model."""
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise ValueError("empty training set")
    params = default_params(kind, task, X.shape[1])
    params.update(overrides)
    if np.all(y == y[0]) or not np.any(X.max(axis=0) > X.min(axis=0)):
        return TreeEnsembleModel(kind, task, [], float(np.mean(y)), 0.0, seed, params, X.shape[1])
    est = _sklearn_estimator(kind, task, params, seed, n_jobs)
    est.fit(X, y.astype(int) if task == "classification" else y)
    if kind == "gradient_boosting":
        if task == "regression":
            base = float(np.mean(y))
        else:
            p = float(np.mean(y))
            base = math.log(p / (1 - p))
        trees = [DecisionTree.from_sklearn(t, False) for t in est.estimators_[:, 0]]
        return TreeEnsembleModel(kind, task, trees, base, params["learning_rate"], seed, params, X.shape[1])
    trees = [DecisionTree.from_sklearn(t, task == "classification") for t in est.estimators_]
    return TreeEnsembleModel(kind, task, trees, 0.0, 0.0, seed, params, X.shape[1])


def fit_random_forest(examples, task, seed=0, **kw):
    X, y = to_arrays(examples, task, kw.pop("columns", None))
    return fit_ensemble("random_forest", task, X, y, seed, **kw)


def fit_extra_trees(examples, task, seed=0, **kw):
    X, y = to_arrays(examples, task, kw.pop("columns", None))
    return fit_ensemble("extra_trees", task, X, y, seed, **kw)


def fit_gradient_boosting(examples, task, seed=0, **kw):
    X, y = to_arrays(examples, task, kw.pop("columns", None))
    return fit_ensemble("gradient_boosting", task, X, y, seed, **kw)


def to_arrays(examples: Sequence[PairExample], task: str, columns: Sequence[int] | None = None):
    """Feature matrix (optionally a column subset) and the task's target vector."""
    X = np.array([e.features for e in examples], dtype=np.float64).reshape(len(examples), -1)
    if columns is not None:
        X = X[:, list(columns)]
    if task == "regression":
        y = np.array([e.target_distance for e in examples], dtype=float)
    else:
        y = np.array([e.same_cluster for e in examples], dtype=float)
    return X, y


# -- cross validation ----------------------------------------------------------


@dataclass
class EvalReport:
    project: str
    kind: str
    task: str
    fold_scores: list[float | None]
    reason: str | None = None

    @property
    def metric(self) -> str:
        return "r2" if self.task == "regression" else "mcc"

    @property
    def mean(self) -> float | None:
        scores = [s for s in self.fold_scores if s is not None]
        return sum(scores) / len(scores) if scores else None

    def to_json(self) -> dict:
        return {
            "project": self.project,
            "kind": self.kind,
            "task": self.task,
            "metric": self.metric,
            "fold_scores": self.fold_scores,
            "mean": self.mean,
            "reason": self.reason,
        }


def fold_pairs(examples: Sequence[PairExample], fold: Sequence[TestId]) -> tuple[list[int], list[int]]:
    """Indices of (train, eval) pairs for one held-out fold.

    Training pairs have both endpoints outside the fold, evaluation pairs both
    inside; straddling pairs are dropped.
    """
    held = set(fold)
    train, test = [], []
    for i, e in enumerate(examples):
        inside = (e.tests[0] in held) + (e.tests[1] in held)
        if inside == 0:
            train.append(i)
        elif inside == 2:
            test.append(i)
    return train, test


def cv_evaluate(
    kind: str,
    task: str,
    examples: Sequence[PairExample],
    folds: Sequence[Sequence[TestId]],
    seed: int = 0,
    project: str = "",
    n_jobs: int = 1,
    columns: Sequence[int] | None = None,
    **overrides,
) -> EvalReport:
    """Mean R^2 (regression) or MCC (classification) over held-out test folds.

    Folds with fewer than two tests, or whose evaluation pairs have a constant
    target, are skipped with a warning and recorded as None.
    """
    X, y = to_arrays(examples, task, columns)
    if np.all(y == y[0]):
        return EvalReport(project, kind, task, [], REASON_DEGENERATE)
    scores: list[float | None] = []
    for fi, fold in enumerate(folds):
        train, test = fold_pairs(examples, fold)
        if len(fold) < 2 or not test or not train:
            log.warning("%s/%s/%s: fold %d has no evaluation pairs; skipped", project, kind, task, fi)
            scores.append(None)
            continue
        if np.all(y[test] == y[test][0]):
            log.warning("%s/%s/%s: fold %d has a constant target; skipped", project, kind, task, fi)
            scores.append(None)
            continue
        model = fit_ensemble(kind, task, X[train], y[train], seed, n_jobs, **overrides)
        if task == "regression":
            scores.append(r_squared(y[test], model.predict(X[test])))
        else:
            scores.append(mcc(y[test].astype(bool), model.predict_label(X[test])))
    if all(s is None for s in scores):
        raise GateError(REASON_ALL_FOLDS_SKIPPED, f"{project}/{kind}/{task}: nothing to evaluate")
    return EvalReport(project, kind, task, scores)


def evaluation_table(reports: Sequence[EvalReport]) -> dict:
    """Per-project rows with each model's mean R^2 and MCC, plus column means."""
    rows: dict[str, dict] = {}
    for r in reports:
        row = rows.setdefault(r.project, {"project": r.project})
        row.setdefault(r.kind, {})[r.metric] = r.mean
    means = {}
    for kind in KINDS:
        for metric in ("r2", "mcc"):
            vals = [row[kind][metric] for row in rows.values() if row.get(kind, {}).get(metric) is not None]
            means.setdefault(kind, {})[metric] = sum(vals) / len(vals) if vals else None
    return {
        "schema": "flakesift.evaluation",
        "schema_version": 1,
        "rows": [rows[p] for p in sorted(rows)],
        "mean": means,
        "folds": [r.to_json() for r in reports],
    }


def clusters_from_pairs(examples: Sequence[PairExample]) -> dict[TestId, int]:
    """Recover cluster ids from ``same_cluster`` labels (connected components).

    Tests with no positive pair are left out, i.e. treated as unclustered.
    """
    parent: dict[TestId, TestId] = {}

    def find(t):
        while parent[t] != t:
            parent[t] = parent[parent[t]]
            t = parent[t]
        return t

    for e in examples:
        if e.same_cluster:
            a, b = e.tests
            parent.setdefault(a, a)
            parent.setdefault(b, b)
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    roots = sorted({find(t) for t in parent})
    ids = {r: i for i, r in enumerate(roots)}
    return {t: ids[find(t)] for t in sorted(parent)}

"""End-to-end analysis of one or more projects.

Every stage returns file contents keyed by relative path instead of writing
them, so the CLI can write the whole tree atomically and tests can compare
runs byte for byte.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import re
import tempfile
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import cluster as clu
from .config import Config
from .cooccur import DistanceMatrix, build_distance_matrix
from .explain import ImportanceRanking, importance_csv, rank_features, shapley_sampled
from .ingest import ProjectDataset, TestId, failure_signatures, write_run_matrix
from .learn import (
    KINDS,
    EvalReport,
    GateError,
    PairExample,
    TreeEnsembleModel,
    build_pair_dataset,
    clusters_from_pairs,
    cv_evaluate,
    evaluation_table,
    fit_ensemble,
    kfold_split,
    to_arrays,
    write_feature_csv,
)
from .strdist import FEATURE_NAMES
from .svg import render_dendrogram_svg
from .triage import dossier, dossier_json, dossier_markdown

log = logging.getLogger(__name__)

REASON_NO_SOURCE = "no-source-code"


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def write_atomic(path: str, text: str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_tree(root: str, files: Mapping[str, str]) -> None:
    for rel in sorted(files):
        write_atomic(os.path.join(root, rel), files[rel])


def safe_name(project: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", project) or "project"


@dataclass
class ClusterStage:
    report: clu.ClusterReport
    signatures: dict[TestId, frozenset[int]]
    matrix: DistanceMatrix | None = None
    dendrogram: clu.Dendrogram | None = None


def cluster_project(ds: ProjectDataset, cfg: Config) -> ClusterStage:
    sigs = failure_signatures(ds)
    labels = sorted(sigs)
    if len(labels) < 2:
        report = clu.make_report(None, labels, ds.project_name, cfg.linkage, cfg.min_silhouette)
        return ClusterStage(report, sigs)
    dm = build_distance_matrix(sigs)
    dg = clu.agglomerate(dm, cfg.linkage)
    cc = clu.select_threshold(dm, cfg.min_silhouette, cfg.linkage, dg)
    report = clu.make_report(cc, labels, ds.project_name, cfg.linkage, cfg.min_silhouette)
    return ClusterStage(report, sigs, dm, dg)


def cluster_report_csv(report: clu.ClusterReport) -> str:
    buf = io.StringIO()
    buf.write("# schema=flakesift.cluster-report schema_version=1\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["project", "cluster_id", "test", "test_class"])
    for c in report.clusters:
        for t in c.members:
            w.writerow([report.project, c.id, str(t), t.qualified_class])
    return buf.getvalue()


def cluster_artifacts(stage: ClusterStage, fmt: str = "json") -> dict[str, str]:
    files = {}
    if fmt == "csv":
        files["cluster_report.csv"] = cluster_report_csv(stage.report)
    else:
        files["cluster_report.json"] = dumps(stage.report.to_json())
    if stage.matrix is not None:
        files["distances.csv"] = stage.matrix.to_csv()
        threshold = stage.report.threshold if stage.report.threshold is not None else 0.0
        files["dendrogram.svg"] = render_dendrogram_svg(stage.dendrogram, threshold, stage.report.project)
    return files


@dataclass
class LearnStage:
    reports: list[EvalReport] = field(default_factory=list)
    models: dict[str, TreeEnsembleModel] = field(default_factory=dict)
    best_kind: str | None = None


def train_project(examples: list[PairExample], cfg: Config, project: str) -> LearnStage:
    """Cross-validate every model on both tasks, then refit the best regressor on all pairs."""
    tests = sorted({t for e in examples for t in e.tests})
    strata = clusters_from_pairs(examples)
    cols = cfg.enabled_features
    stage = LearnStage()
    for task in ("regression", "classification"):
        folds = kfold_split(tests, cfg.k_folds, cfg.seed, strata if task == "classification" else None)
        for kind in KINDS:
            try:
                report = cv_evaluate(kind, task, examples, folds, cfg.seed, project, cfg.n_jobs, cols,
                                     n_estimators=cfg.n_estimators)
            except GateError as exc:
                report = EvalReport(project, kind, task, [None] * len(folds), exc.reason)
            stage.reports.append(report)
    scored = [(r.mean, -KINDS.index(r.kind), r.kind) for r in stage.reports
              if r.task == "regression" and r.mean is not None]
    if not scored:
        return stage
    stage.best_kind = max(scored)[2]
    X, y = to_arrays(examples, "regression", cols)
    stage.models[f"{stage.best_kind}_regression"] = fit_ensemble(
        stage.best_kind, "regression", X, y, cfg.seed, cfg.n_jobs, n_estimators=cfg.n_estimators
    )
    return stage


def explain_model(model: TreeEnsembleModel, examples: list[PairExample], cfg: Config) -> ImportanceRanking:
    """Rank features by mean |SHAP| over (a seeded sample of) the pairs."""
    cols = cfg.enabled_features
    X, _ = to_arrays(examples, "regression", cols)
    rng = np.random.default_rng(cfg.seed)
    background = X[np.sort(rng.choice(len(X), min(cfg.shap_background, len(X)), replace=False))]
    idx = np.arange(len(X))
    if cfg.shap_max_pairs and len(X) > cfg.shap_max_pairs:
        idx = np.sort(rng.choice(len(X), cfg.shap_max_pairs, replace=False))
    atts = [shapley_sampled(model, X[i], background, cfg.shap_permutations, cfg.seed + int(i)) for i in idx]
    return rank_features(atts, [FEATURE_NAMES[c] for c in cols])


def triage_artifacts(ds: ProjectDataset, stage: ClusterStage, cfg: Config) -> dict[str, str]:
    files = {}
    for c in stage.report.clusters:
        d = dossier(ds, stage.signatures, c.id, c.members, cfg.trace_sample_k, cfg.seed, cfg.trace_truncate)
        files[f"dossiers/cluster_{c.id:03d}.json"] = dossier_json(d)
        files[f"dossiers/cluster_{c.id:03d}.md"] = dossier_markdown(d)
    return files


def evaluation_csv(table: dict) -> str:
    buf = io.StringIO()
    buf.write("# schema=flakesift.evaluation schema_version=1\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["project", *[f"{k}_{m}" for k in KINDS for m in ("r2", "mcc")]])
    fmt = lambda v: "" if v is None else repr(v)  # noqa: E731
    for row in table["rows"]:
        w.writerow([row["project"], *[fmt(row.get(k, {}).get(m)) for k in KINDS for m in ("r2", "mcc")]])
    w.writerow(["mean", *[fmt(table["mean"][k][m]) for k in KINDS for m in ("r2", "mcc")]])
    return buf.getvalue()


def summary_row(report: clu.ClusterReport, ml_status: str | None) -> dict:
    return {
        "project": report.project,
        "flaky_tests": report.flaky_test_count,
        "clusters": len(report.clusters),
        "clustered_tests": report.clustered_test_count,
        "mean_cluster_size": report.mean_cluster_size,
        "mean_distinct_classes": report.mean_distinct_classes,
        "mean_silhouette": report.mean_silhouette,
        "threshold": report.threshold,
        "reason": report.reason,
        "ml": ml_status,
    }


def run_pipeline(datasets: list[ProjectDataset], cfg: Config, fmt: str = "json") -> dict[str, str]:
    """Run every stage for every project and return the output tree."""
    files: dict[str, str] = {}
    all_reports: list[EvalReport] = []
    rankings: dict[str, ImportanceRanking] = {}
    summary = []
    all_clusters: list[clu.ClusterEntry] = []
    for ds in sorted(datasets, key=lambda d: d.project_name):
        base = safe_name(ds.project_name) + "/"
        files[base + "run_matrix.jsonl"] = write_run_matrix(ds)
        stage = cluster_project(ds, cfg)
        all_clusters.extend(stage.report.clusters)
        files.update({base + k: v for k, v in cluster_artifacts(stage, fmt).items()})
        files.update({base + k: v for k, v in triage_artifacts(ds, stage, cfg).items()})
        ml_status = "ok"
        try:
            if len(stage.signatures) >= cfg.min_flaky_for_ml and stage.report.clusters and not ds.source_code:
                raise GateError(REASON_NO_SOURCE)
            examples = build_pair_dataset(
                ds, stage.signatures, stage.report, cfg.min_flaky_for_ml,
                damerau_variant=cfg.damerau_variant, code_text=cfg.code_text,
            )
        except GateError as exc:
            ml_status = exc.reason
            log.info("%s: skipping learning (%s)", ds.project_name, exc)
            examples = None
        if examples is not None:
            files[base + "features.csv"] = write_feature_csv(examples)
            learned = train_project(examples, cfg, ds.project_name)
            all_reports.extend(learned.reports)
            for name, model in learned.models.items():
                files[base + f"models/{name}.json"] = model.dumps()
                ranking = explain_model(model, examples, cfg)
                rankings[ds.project_name] = ranking
                files[base + "importance.csv"] = importance_csv({ds.project_name: ranking})
            table = evaluation_table(learned.reports)
            files[base + ("evaluation.csv" if fmt == "csv" else "evaluation.json")] = (
                evaluation_csv(table) if fmt == "csv" else dumps(table)
            )
        summary.append(summary_row(stage.report, ml_status))

    totals = {
        "projects": len(summary),
        "flaky_tests": sum(r["flaky_tests"] for r in summary),
        "clusters": sum(r["clusters"] for r in summary),
        "clustered_tests": sum(r["clustered_tests"] for r in summary),
    }
    if all_clusters:
        totals["mean_cluster_size"] = sum(len(c.members) for c in all_clusters) / len(all_clusters)
        totals["mean_distinct_classes"] = sum(c.distinct_test_classes for c in all_clusters) / len(all_clusters)
    files["summary.json"] = dumps({
        "schema": "flakesift.summary",
        "schema_version": 1,
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in cfg.__dict__.items()},
        "projects": summary,
        "totals": totals,
    })
    if all_reports:
        table = evaluation_table(all_reports)
        files["evaluation.csv" if fmt == "csv" else "evaluation.json"] = (
            evaluation_csv(table) if fmt == "csv" else dumps(table)
        )
    if rankings:
        files["importance.csv"] = importance_csv(rankings)
    return files

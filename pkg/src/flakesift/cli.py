"""Command-line entry point: ``flakesift <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import pipeline as pl
from .cluster import ClusterReport
from .config import Config, ConfigError, load_config
from .explain import importance_csv
from .ingest import (
    IngestError,
    ProjectDataset,
    load_junit_reports,
    merge_datasets,
    parse_junit_xml,
    parse_run_matrix,
    parse_source_file,
    write_run_matrix,
    write_source_file,
)
from .learn import (
    GateError,
    TreeEnsembleModel,
    build_pair_dataset,
    read_feature_csv,
    write_feature_csv,
)
from .synth import SynthError, SynthSpec, generate, truth_to_json

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_NO_SYSTEMIC = 4
EXIT_GATE = 5

log = logging.getLogger("flakesift")


class CliError(Exception):
    def __init__(self, code: int, reason: str, message: str = ""):
        super().__init__(message or reason)
        self.code = code
        self.reason = reason


def _read(path: str) -> str:
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def source_sidecar(path: str) -> str:
    if os.path.isdir(path):
        return os.path.join(path, "source.jsonl")
    root, _ = os.path.splitext(path)
    return root + ".source.jsonl"


def load_dataset(path: str, source: str | None = None, project: str | None = None) -> ProjectDataset:
    """A run-matrix JSONL file or a directory of JUnit reports, plus test source if present."""
    if os.path.isdir(path):
        ds = load_junit_reports(path, project)
    elif path.endswith(".xml"):
        ds = merge_datasets([_xml_file(path, project or "")], project)
    else:
        ds = parse_run_matrix(_read(path), project or "")
        if not ds.project_name:
            ds = ProjectDataset(os.path.splitext(os.path.basename(path))[0], ds.runs, ds.outcomes, ds.failures)
    source = source or source_sidecar(path)
    if os.path.exists(source):
        ds = ds.with_source(parse_source_file(_read(source)))
    return ds


def _xml_file(path: str, project: str) -> ProjectDataset:
    from .ingest import _RUN_IN_NAME

    stem = os.path.splitext(os.path.basename(path))[0]
    m = _RUN_IN_NAME.search(stem)
    if m is None:
        raise IngestError(f"cannot infer run id from report name {path!r}")
    with open(path, "rb") as fh:
        return parse_junit_xml(fh.read(), int(m.group(1)), project)


def _config(args) -> Config:
    return load_config(
        args.config,
        seed=args.seed,
        min_silhouette=args.min_silhouette,
        linkage=args.linkage,
    )


def cmd_ingest(args, cfg: Config) -> int:
    parts = []
    for path in args.inputs:
        if os.path.isdir(path):
            parts.append(load_junit_reports(path, args.project))
        else:
            parts.append(_xml_file(path, args.project or ""))
    ds = merge_datasets(parts, args.project)
    out = args.out or f"{pl.safe_name(ds.project_name)}.jsonl"
    pl.write_atomic(out, write_run_matrix(ds))
    print(out)
    return EXIT_OK


def cmd_cluster(args, cfg: Config) -> int:
    ds = load_dataset(args.matrix)
    stage = pl.cluster_project(ds, cfg)
    pl.write_tree(args.out or ".", pl.cluster_artifacts(stage, args.format))
    if not stage.report.systemic:
        raise CliError(EXIT_NO_SYSTEMIC, "no-systemic-flakiness", stage.report.reason or "")
    print(f"{len(stage.report.clusters)} clusters, {stage.report.clustered_test_count} clustered tests")
    return EXIT_OK


def cmd_features(args, cfg: Config) -> int:
    ds = load_dataset(args.matrix, args.source)
    report = ClusterReport.from_json(json.loads(_read(args.report)))
    sigs = pl.failure_signatures(ds)
    examples = build_pair_dataset(ds, sigs, report, cfg.min_flaky_for_ml,
                                  damerau_variant=cfg.damerau_variant, code_text=cfg.code_text)
    pl.write_atomic(args.out or "features.csv", write_feature_csv(examples))
    return EXIT_OK


def cmd_train(args, cfg: Config) -> int:
    examples = read_feature_csv(_read(args.features))
    project = args.project or os.path.basename(os.path.dirname(os.path.abspath(args.features)))
    learned = pl.train_project(examples, cfg, project)
    files = {f"models/{name}.json": m.dumps() for name, m in learned.models.items()}
    table = pl.evaluation_table(learned.reports)
    if args.format == "csv":
        files["evaluation.csv"] = pl.evaluation_csv(table)
    else:
        files["evaluation.json"] = pl.dumps(table)
    pl.write_tree(args.out or ".", files)
    return EXIT_OK


def cmd_explain(args, cfg: Config) -> int:
    model = TreeEnsembleModel.from_json(json.loads(_read(args.model)))
    examples = read_feature_csv(_read(args.features))
    if model.n_features != len(cfg.enabled_features):
        raise CliError(EXIT_INPUT, "feature-mismatch", "model and enabled feature set disagree")
    ranking = pl.explain_model(model, examples, cfg)
    project = args.project or "project"
    pl.write_atomic(args.out or "importance.csv", importance_csv({project: ranking}))
    return EXIT_OK


def cmd_triage(args, cfg: Config) -> int:
    ds = load_dataset(args.matrix)
    report = ClusterReport.from_json(json.loads(_read(args.report)))
    stage = pl.ClusterStage(report, pl.failure_signatures(ds))
    pl.write_tree(args.out or ".", pl.triage_artifacts(ds, stage, cfg))
    return EXIT_OK


def cmd_synth(args, cfg: Config) -> int:
    spec = SynthSpec.from_json(json.loads(_read(args.spec)))
    if args.seed is not None or os.environ.get("FLAKESIFT_SEED"):
        spec = SynthSpec.from_json({**spec.to_json(), "seed": cfg.seed})
    ds, truth = generate(spec)
    out = args.out or "."
    name = pl.safe_name(ds.project_name)
    pl.write_tree(out, {
        f"{name}.jsonl": write_run_matrix(ds),
        f"{name}.source.jsonl": write_source_file(ds.source_code),
        f"{name}.truth.json": truth_to_json(truth),
    })
    print(os.path.join(out, f"{name}.jsonl"))
    return EXIT_OK


def cmd_pipeline(args, cfg: Config) -> int:
    datasets = [load_dataset(p) for p in args.inputs]
    names = [d.project_name for d in datasets]
    if len(set(names)) != len(names):
        raise CliError(EXIT_INPUT, "duplicate-project", "two inputs have the same project name")
    pl.write_tree(args.out or "flakesift-out", pl.run_pipeline(datasets, cfg, args.format))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--min-silhouette", type=float)
    common.add_argument("--linkage", choices=("average", "single", "complete", "weighted"))
    common.add_argument("--out", help="output file or directory")
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="flakesift", description="Find and predict systemic flakiness.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="JUnit XML reports -> run-matrix JSONL")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--project")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("cluster", parents=[common], help="cluster flaky tests by failure co-occurrence")
    p.add_argument("matrix")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("features", parents=[common], help="pairwise static distance features")
    p.add_argument("matrix")
    p.add_argument("report")
    p.add_argument("--source")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", parents=[common], help="cross-validate ensembles on a feature CSV")
    p.add_argument("features")
    p.add_argument("--project")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("explain", parents=[common], help="SHAP feature ranking for a trained model")
    p.add_argument("model")
    p.add_argument("features")
    p.add_argument("--project")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("triage", parents=[common], help="per-cluster dossiers with diverse stack traces")
    p.add_argument("matrix")
    p.add_argument("report")
    p.set_defaults(func=cmd_triage)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic project from a JSON spec")
    p.add_argument("spec")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pipeline", parents=[common], help="run every stage on one or more projects")
    p.add_argument("inputs", nargs="+")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _config(args)
        return args.func(args, cfg)
    except CliError as exc:
        print(f"flakesift: reason={exc.reason} {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"flakesift: reason=invalid-config {exc}", file=sys.stderr)
        return EXIT_USAGE
    except GateError as exc:
        print(f"flakesift: reason={exc.reason} {exc}", file=sys.stderr)
        return EXIT_GATE
    except (IngestError, SynthError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"flakesift: reason=invalid-input {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

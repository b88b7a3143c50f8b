"""Test-run data model, report parsers and the run-matrix interchange format."""

from __future__ import annotations

import enum
import functools
import io
import json
import os
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Iterable, Mapping

RUN_MATRIX_SCHEMA = "flakesift.run-matrix"
SCHEMA_VERSION = 1


class IngestError(ValueError):
    """Raised for malformed or inconsistent test-run input."""


class Outcome(enum.Enum):
    PASS = "pass"
    FAIL = "fail"
    NOT_EXECUTED = "skip"


@functools.total_ordering
@dataclass(frozen=True)
class TestId:
    """Fully qualified test case name, ``pkg.one.ClassName#methodName``."""

    __test__ = False  # keep pytest from collecting this class

    package_path: tuple[str, ...]
    class_name: str
    method_name: str

    def __post_init__(self):
        if not self.class_name or not self.method_name:
            raise IngestError(f"empty class or method name in {self!r}")
        if any(not p for p in self.package_path):
            raise IngestError(f"empty package component in {self!r}")

    @classmethod
    def parse(cls, name: str) -> "TestId":
        qualified, sep, method = name.partition("#")
        if not sep:
            raise IngestError(f"test name {name!r} has no '#method' part")
        return cls.from_junit(qualified, method)

    @classmethod
    def from_junit(cls, classname: str, name: str) -> "TestId":
        *package, klass = classname.split(".")
        return cls(tuple(package), klass, name)

    @property
    def qualified_class(self) -> str:
        return ".".join(self.package_path + (self.class_name,))

    @property
    def path(self) -> tuple[str, ...]:
        """Package components followed by the class name (method dropped)."""
        return self.package_path + (self.class_name,)

    def __str__(self) -> str:
        return f"{self.qualified_class}#{self.method_name}"

    def __lt__(self, other: "TestId") -> bool:
        if not isinstance(other, TestId):
            return NotImplemented
        return str(self) < str(other)


@dataclass(frozen=True)
class FailureRecord:
    run: int
    test: TestId
    stack_trace: str = ""
    error_message: str = ""


@dataclass(frozen=True)
class SourceCode:
    text: str
    tokens: tuple[str, ...]


@dataclass(frozen=True)
class ProjectDataset:
    """Sparse run x test outcome table for one project.

    Cells absent from ``outcomes`` are treated as not executed. ``failures``
    is kept sorted by (test name, run) so equal datasets compare equal.
    """

    project_name: str
    runs: frozenset[int]
    outcomes: Mapping[tuple[int, TestId], Outcome]
    failures: tuple[FailureRecord, ...] = ()
    source_code: Mapping[TestId, SourceCode] = field(default_factory=dict)

    def __post_init__(self):
        for rec in self.failures:
            if self.outcomes.get((rec.run, rec.test)) is not Outcome.FAIL:
                raise IngestError(f"failure record for {rec.test} in run {rec.run} without a fail outcome")
        object.__setattr__(
            self, "failures", tuple(sorted(self.failures, key=lambda r: (str(r.test), r.run)))
        )

    @functools.cached_property
    def tests(self) -> list[TestId]:
        return sorted({t for _, t in self.outcomes})

    def outcome(self, run: int, test: TestId) -> Outcome:
        return self.outcomes.get((run, test), Outcome.NOT_EXECUTED)

    def failures_of(self, test: TestId) -> list[FailureRecord]:
        return [r for r in self.failures if r.test == test]

    def with_source(self, source: Mapping[TestId, SourceCode]) -> "ProjectDataset":
        return ProjectDataset(self.project_name, self.runs, self.outcomes, self.failures, dict(source))


def _build(project: str, cells: Iterable[tuple[int, TestId, Outcome, str, str]]) -> ProjectDataset:
    outcomes: dict[tuple[int, TestId], Outcome] = {}
    failures: dict[tuple[int, TestId], FailureRecord] = {}
    for run, test, outcome, trace, message in cells:
        key = (run, test)
        prev = outcomes.get(key)
        if prev is not None:
            same = prev is outcome
            if same and outcome is Outcome.FAIL:
                same = failures[key] == FailureRecord(run, test, trace, message)
            if not same:
                raise IngestError(f"conflicting records for {test} in run {run}")
            continue
        outcomes[key] = outcome
        if outcome is Outcome.FAIL:
            failures[key] = FailureRecord(run, test, trace, message)
    runs = frozenset(r for r, _ in outcomes)
    return ProjectDataset(project, runs, outcomes, tuple(failures.values()))


def _position_to_offset(data: bytes, line: int, column: int) -> int:
    lines = data.split(b"\n")
    return sum(len(chunk) + 1 for chunk in lines[: line - 1]) + column


def parse_junit_xml(report: bytes, run: int, project: str = "") -> ProjectDataset:
    """Parse one JUnit/Surefire XML report belonging to test-suite run ``run``.

    ``<failure>`` and ``<error>`` children mark a failing test; their text is
    kept as the stack trace and their ``message`` attribute as the error
    message. ``<skipped>`` marks the test as not executed.
    """
    if isinstance(report, str):
        report = report.encode()
    try:
        root = ET.fromstring(report)
    except ET.ParseError as exc:
        line, col = exc.position
        offset = _position_to_offset(report, line, col)
        raise IngestError(f"malformed JUnit XML at byte offset {offset}: {exc}") from exc

    cells = []
    seen = set()
    for case in root.iter("testcase"):
        classname = case.get("classname") or ""
        name = case.get("name") or ""
        if (classname, name) in seen:
            raise IngestError(f"duplicate testcase {classname}#{name} in report for run {run}")
        seen.add((classname, name))
        test = TestId.from_junit(classname, name)
        bad = case.find("failure")
        if bad is None:
            bad = case.find("error")
        if bad is not None:
            cells.append((run, test, Outcome.FAIL, (bad.text or "").strip(), bad.get("message") or ""))
        elif case.find("skipped") is not None:
            cells.append((run, test, Outcome.NOT_EXECUTED, "", ""))
        else:
            cells.append((run, test, Outcome.PASS, "", ""))
    return _build(project, cells)


def merge_datasets(parts: Iterable[ProjectDataset], project: str | None = None) -> ProjectDataset:
    """Union of partial datasets; the result does not depend on input order."""
    parts = list(parts)
    if project is None:
        names = {p.project_name for p in parts if p.project_name}
        project = names.pop() if len(names) == 1 else ""
    cells = []
    for part in parts:
        fails = {(r.run, r.test): r for r in part.failures}
        for (run, test), outcome in part.outcomes.items():
            rec = fails.get((run, test))
            cells.append((run, test, outcome, rec.stack_trace if rec else "", rec.error_message if rec else ""))
    source = {}
    for part in parts:
        source.update(part.source_code)
    return _build(project, cells).with_source(source)


_RUN_DIR = re.compile(r"^\d+$")
_RUN_IN_NAME = re.compile(r"(\d+)(?!.*\d)")


def load_junit_reports(path: str, project: str | None = None) -> ProjectDataset:
    """Load a project's reports from disk.

    Two layouts are accepted: ``<path>/<run id>/*.xml`` (one directory per
    run, as Surefire writes one file per test class), or flat ``*.xml`` files
    whose stem ends in the run id.
    """
    project = project or os.path.basename(os.path.normpath(path))
    parts = []
    entries = sorted(os.listdir(path))
    run_dirs = [e for e in entries if _RUN_DIR.match(e) and os.path.isdir(os.path.join(path, e))]
    if run_dirs:
        for d in run_dirs:
            for fname in sorted(os.listdir(os.path.join(path, d))):
                if fname.endswith(".xml"):
                    with open(os.path.join(path, d, fname), "rb") as fh:
                        parts.append(parse_junit_xml(fh.read(), int(d), project))
    else:
        for fname in entries:
            if not fname.endswith(".xml"):
                continue
            m = _RUN_IN_NAME.search(fname[:-4])
            if m is None:
                raise IngestError(f"cannot infer run id from report name {fname!r}")
            with open(os.path.join(path, fname), "rb") as fh:
                parts.append(parse_junit_xml(fh.read(), int(m.group(1)), project))
    return merge_datasets(parts, project)


def parse_run_matrix(stream: Iterable[str] | io.TextIOBase | str, project: str = "") -> ProjectDataset:
    """Read the line-delimited JSON run matrix.

    An optional header line ``{"schema": ..., "schema_version": ..., "project": ...}``
    carries the project name.
    """
    if isinstance(stream, str):
        stream = stream.splitlines()
    cells = []
    for lineno, line in enumerate(stream, 1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise IngestError(f"line {lineno}: invalid JSON ({exc})") from exc
        if "schema" in obj:
            if obj["schema"] != RUN_MATRIX_SCHEMA:
                raise IngestError(f"line {lineno}: unexpected schema {obj['schema']!r}")
            project = obj.get("project", project)
            continue
        try:
            outcome = Outcome(obj["outcome"])
            run = obj["run"]
            test = TestId.parse(obj["test"])
        except KeyError as exc:
            raise IngestError(f"line {lineno}: missing key {exc}") from exc
        except ValueError as exc:
            raise IngestError(f"line {lineno}: {exc}") from exc
        if not isinstance(run, int) or isinstance(run, bool) or run < 0:
            raise IngestError(f"line {lineno}: run id must be a non-negative integer")
        cells.append((run, test, outcome, obj.get("stack_trace", ""), obj.get("error_message", "")))
    return _build(project, cells)


def write_run_matrix(ds: ProjectDataset) -> str:
    """Canonical serialisation: header, then records ordered by (test name, run)."""
    fails = {(r.run, r.test): r for r in ds.failures}
    out = [json.dumps({"schema": RUN_MATRIX_SCHEMA, "schema_version": SCHEMA_VERSION, "project": ds.project_name})]
    for (run, test), outcome in sorted(ds.outcomes.items(), key=lambda kv: (str(kv[0][1]), kv[0][0])):
        rec = {"run": run, "test": str(test), "outcome": outcome.value}
        if outcome is Outcome.FAIL:
            f = fails[(run, test)]
            rec["stack_trace"] = f.stack_trace
            rec["error_message"] = f.error_message
        out.append(json.dumps(rec, ensure_ascii=False))
    return "\n".join(out) + "\n"


def parse_source_file(stream: Iterable[str] | str) -> dict[TestId, SourceCode]:
    """Read test source code, one ``{"test", "source", "tokens"}`` object per line."""
    if isinstance(stream, str):
        stream = stream.splitlines()
    source = {}
    for lineno, line in enumerate(stream, 1):
        if not line.strip():
            continue
        obj = json.loads(line)
        if "schema" in obj:
            continue
        try:
            source[TestId.parse(obj["test"])] = SourceCode(obj["source"], tuple(obj["tokens"]))
        except KeyError as exc:
            raise IngestError(f"source line {lineno}: missing key {exc}") from exc
    return source


def write_source_file(source: Mapping[TestId, SourceCode]) -> str:
    out = [json.dumps({"schema": "flakesift.source", "schema_version": SCHEMA_VERSION})]
    for test in sorted(source):
        sc = source[test]
        out.append(json.dumps({"test": str(test), "source": sc.text, "tokens": list(sc.tokens)}, ensure_ascii=False))
    return "\n".join(out) + "\n"


def identify_flaky_tests(ds: ProjectDataset) -> list[TestId]:
    """Tests with at least one pass and one fail; skipped cells carry no signal."""
    seen: dict[TestId, set[Outcome]] = {}
    for (_, test), outcome in ds.outcomes.items():
        if outcome is not Outcome.NOT_EXECUTED:
            seen.setdefault(test, set()).add(outcome)
    return sorted(t for t, kinds in seen.items() if len(kinds) == 2)


def failure_signature(ds: ProjectDataset, test: TestId) -> frozenset[int]:
    """Set of run ids in which ``test`` failed. ``test`` must be flaky."""
    fails = set()
    passed = False
    for (run, t), outcome in ds.outcomes.items():
        if t != test:
            continue
        if outcome is Outcome.FAIL:
            fails.add(run)
        elif outcome is Outcome.PASS:
            passed = True
    if not fails or not passed:
        raise IngestError(f"{test} is not flaky in project {ds.project_name!r}")
    return frozenset(fails)


def failure_signatures(ds: ProjectDataset) -> dict[TestId, frozenset[int]]:
    """Signatures of every flaky test, in one pass over the outcome table."""
    flaky = set(identify_flaky_tests(ds))
    sigs: dict[TestId, set[int]] = {t: set() for t in flaky}
    for (run, test), outcome in ds.outcomes.items():
        if outcome is Outcome.FAIL and test in flaky:
            sigs[test].add(run)
    return {t: frozenset(sigs[t]) for t in sorted(sigs)}

"""Seeded synthetic projects with planted systemic flakiness."""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Hashable, Mapping

import numpy as np

from .ingest import FailureRecord, Outcome, ProjectDataset, SourceCode, TestId

DOMAINS = (
    "network", "storage", "scheduler", "auth", "cache", "parser", "metrics", "session",
    "router", "queue", "config", "billing", "search", "upload", "gateway", "registry",
    "stream", "plugin", "index", "mailer",
)
VERBS = ("connect", "read", "write", "retry", "resolve", "flush", "load", "parse", "send", "close")
NOUNS = ("Timeout", "Request", "Response", "Handler", "Buffer", "Record", "Client", "Lock", "Token", "Batch")
EXCEPTIONS = (
    ("java.net.SocketTimeoutException", "Read timed out"),
    ("java.net.ConnectException", "Connection refused"),
    ("java.util.concurrent.TimeoutException", "Timed out waiting for condition"),
    ("java.io.IOException", "Broken pipe"),
    ("java.lang.IllegalStateException", "Port already in use"),
    ("org.junit.ComparisonFailure", "expected:<[ready]> but was:<[starting]>"),
)

_TOKEN = re.compile(r"\w+|[^\s\w]")


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class ClusterSpec:
    size: int
    trigger_probability: float
    cofail_probability: float


@dataclass(frozen=True)
class SynthSpec:
    runs: int = 500
    clusters: tuple[ClusterSpec, ...] = ()
    independent_flaky: int = 0
    independent_fail_probability: float = 0.02
    noise: float = 0.0
    stable_tests: int = 0
    project: str = "synthetic"
    seed: int = 0
    max_attempts: int = 1000

    def __post_init__(self):
        probs = [self.independent_fail_probability, self.noise]
        for c in self.clusters:
            if c.size < 1:
                raise SynthError("cluster sizes must be at least 1")
            probs += [c.trigger_probability, c.cofail_probability]
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise SynthError("probabilities must lie in [0, 1]")
        if self.runs < 2:
            raise SynthError("need at least two runs for a test to be flaky")

    @classmethod
    def from_json(cls, obj: Mapping) -> "SynthSpec":
        obj = dict(obj)
        obj.pop("schema", None)
        obj.pop("schema_version", None)
        obj["clusters"] = tuple(ClusterSpec(**c) for c in obj.get("clusters", ()))
        return cls(**obj)

    def to_json(self) -> dict:
        out = {"schema": "flakesift.synth-spec", "schema_version": 1}
        out.update(asdict(self))
        out["clusters"] = [asdict(c) for c in self.clusters]
        return out


@dataclass
class _Namer:
    rng: np.random.Generator
    used: set = field(default_factory=set)

    def method(self) -> str:
        while True:
            name = f"test{self.rng.choice(VERBS).capitalize()}{self.rng.choice(NOUNS)}{int(self.rng.integers(1, 100))}"
            if name not in self.used:
                self.used.add(name)
                return name


def _java_source(test: TestId, domain: str, call: str) -> str:
    helper = f"{domain.capitalize()}Client"
    return (
        "@Test\n"
        f"public void {test.method_name}() throws Exception {{\n"
        f"    {helper} client = fixture.{domain}Client();\n"
        f"    client.{call}(\"{test.method_name.lower()}\");\n"
        f"    assertTrue(client.isReady());\n"
        "}\n"
    )


def _trace(test: TestId, exc: tuple[str, str], frame: str, line: int) -> tuple[str, str]:
    name, message = exc
    trace = (
        f"{name}: {message}\n"
        f"\tat {frame}({frame.split('.')[-2]}.java:{line})\n"
        f"\tat {test.qualified_class}.{test.method_name}({test.class_name}.java:{line + 17})"
    )
    return trace, message


def _draw_until_flaky(draw, attempts: int, what: str) -> np.ndarray:
    for _ in range(attempts):
        fails = draw()
        if fails.any() and not fails.all():
            return fails
    raise SynthError(f"could not make {what} flaky in {attempts} attempts")


def generate(spec: SynthSpec) -> tuple[ProjectDataset, dict[TestId, int]]:
    """Simulate ``spec.runs`` suite runs.

    Each cluster has a per-run trigger event; when it fires, every member fails
    with the co-fail probability. Every test (cluster member or not) also fails
    independently with probability ``noise``. Members of cluster ``c`` live in
    the package ``org.synth.<domain>`` and share helper code, so the static
    features carry signal. Returns the dataset and the planted partition over
    flaky tests (independent tests get a singleton label each).
    """
    rng = np.random.default_rng(spec.seed)
    R = spec.runs
    namer = _Namer(rng)

    def fail_prob(p):
        return 1 - (1 - p) * (1 - spec.noise)

    for c in spec.clusters:
        p = fail_prob(c.trigger_probability * c.cofail_probability)
        if p <= 0.0 or p >= 1.0:
            raise SynthError(f"cluster {c} can never produce a flaky member")
    if spec.independent_flaky:
        p = fail_prob(spec.independent_fail_probability)
        if p <= 0.0 or p >= 1.0:
            raise SynthError("independent tests can never be flaky with these probabilities")

    tests: list[tuple[TestId, np.ndarray, int | None, str, tuple[str, str], str]] = []
    truth: dict[TestId, int] = {}
    for ci, c in enumerate(spec.clusters):
        domain = DOMAINS[ci % len(DOMAINS)] + ("" if ci < len(DOMAINS) else str(ci // len(DOMAINS)))
        package = ("org", "synth", domain)
        classes = [f"{domain.capitalize()}{suffix}" for suffix in ("Test", "IT")]
        exc = EXCEPTIONS[ci % len(EXCEPTIONS)]
        frame = f"org.synth.{domain}.{domain.capitalize()}Client.{VERBS[ci % len(VERBS)]}"
        members = [TestId(package, classes[m % 2], namer.method()) for m in range(c.size)]
        trigger = None
        for _ in range(spec.max_attempts):
            trigger = rng.random(R) < c.trigger_probability
            if trigger.any() or spec.noise > 0:
                break
        for test in members:
            fails = _draw_until_flaky(
                lambda: (trigger & (rng.random(R) < c.cofail_probability)) | (rng.random(R) < spec.noise),
                spec.max_attempts,
                str(test),
            )
            tests.append((test, fails, ci, domain, exc, frame))
            truth[test] = ci

    label = len(spec.clusters)
    for k in range(spec.independent_flaky):
        domain = str(rng.choice(DOMAINS))
        test = TestId(("org", "synth", "misc", f"{domain}{k}"), f"{domain.capitalize()}{k}Test", namer.method())
        p = fail_prob(spec.independent_fail_probability)
        fails = _draw_until_flaky(lambda: rng.random(R) < p, spec.max_attempts, str(test))
        exc = EXCEPTIONS[int(rng.integers(len(EXCEPTIONS)))]
        tests.append((test, fails, None, domain, exc, f"org.synth.misc.{domain.capitalize()}Helper.run"))
        truth[test] = label
        label += 1

    for k in range(spec.stable_tests):
        domain = str(rng.choice(DOMAINS))
        test = TestId(("org", "synth", "stable"), f"Stable{k}Test", namer.method())
        tests.append((test, np.zeros(R, dtype=bool), None, domain, EXCEPTIONS[0], ""))

    outcomes = {}
    failures = []
    source = {}
    for test, fails, ci, domain, exc, frame in tests:
        call = VERBS[ci % len(VERBS)] if ci is not None else str(rng.choice(VERBS))
        text = _java_source(test, domain, call)
        source[test] = SourceCode(text, tuple(_TOKEN.findall(text)))
        lines = rng.integers(20, 400, size=R)
        for run in range(R):
            if fails[run]:
                outcomes[(run, test)] = Outcome.FAIL
                trace, message = _trace(test, exc, frame, int(lines[run]))
                failures.append(FailureRecord(run, test, trace, message))
            else:
                outcomes[(run, test)] = Outcome.PASS
    ds = ProjectDataset(spec.project, frozenset(range(R)), outcomes, tuple(failures), source)
    return ds, truth


def truth_to_json(truth: Mapping[TestId, int]) -> str:
    obj = {
        "schema": "flakesift.ground-truth",
        "schema_version": 1,
        "partition": {str(t): c for t, c in sorted(truth.items())},
    }
    return json.dumps(obj, indent=2) + "\n"


def adjusted_rand_index(p1: Mapping[Hashable, Hashable], p2: Mapping[Hashable, Hashable]) -> float:
    """Pair-counting ARI between two labelings of the same elements."""
    if set(p1) != set(p2):
        raise ValueError("partitions cover different element sets")
    n = len(p1)
    if n < 2:
        return 1.0
    joint = Counter((p1[e], p2[e]) for e in p1)
    index = sum(math.comb(v, 2) for v in joint.values())
    a = sum(math.comb(v, 2) for v in Counter(p1.values()).values())
    b = sum(math.comb(v, 2) for v in Counter(p2.values()).values())
    expected = a * b / math.comb(n, 2)
    maximum = (a + b) / 2
    if maximum == expected:
        return 1.0
    return (index - expected) / (maximum - expected)


def synthetic_pair_project(n_classes: int = 6, per_class: int = 10, seed: int = 0) -> ProjectDataset:
    """Tests spread over a package tree (with source), without any run data.

    Used to produce realistic feature vectors for pair-level learning demos.
    """
    rng = np.random.default_rng(seed)
    namer = _Namer(rng)
    tops = ("core", "io", "web")
    source = {}
    outcomes = {}
    for c in range(n_classes):
        top = tops[c % len(tops)]
        mid = DOMAINS[(c // len(tops)) % len(DOMAINS)]
        package = ("org", "synth", top, mid)
        cls = f"{mid.capitalize()}{c}Test"
        for _ in range(per_class):
            t = TestId(package, cls, namer.method())
            text = _java_source(t, mid, VERBS[c % len(VERBS)])
            source[t] = SourceCode(text, tuple(_TOKEN.findall(text)))
            outcomes[(0, t)] = Outcome.PASS
    return ProjectDataset("synthetic-pairs", frozenset({0}), outcomes, (), source)


def synthetic_pair_examples(
    n_classes: int = 6,
    per_class: int = 10,
    sigma: float = 0.05,
    seed: int = 0,
    **feature_options,
):
    """Pair examples whose target distance is a noisy monotone function of hierarchy distance.

    ``target = clip(0.05 + 0.9 * h + N(0, sigma), 0, 1)``; pairs in the same
    test class are the positive class. Features are the real static features.
    """
    from .learn import PairExample
    from .strdist import FEATURE_NAMES, feature_vector

    ds = synthetic_pair_project(n_classes, per_class, seed)
    rng = np.random.default_rng(seed + 1)
    h_col = FEATURE_NAMES.index("hierarchy_distance")
    out = []
    tests = sorted(ds.tests)
    for i, a in enumerate(tests):
        for b in tests[i + 1:]:
            fv = feature_vector(a, b, ds, **feature_options)
            target = float(np.clip(0.05 + 0.9 * fv[h_col] + rng.normal(0.0, sigma), 0.0, 1.0))
            out.append(PairExample((a, b), fv, target, a.qualified_class == b.qualified_class))
    return out

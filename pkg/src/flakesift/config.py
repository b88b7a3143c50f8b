"""Pipeline configuration.

Config files are flat ``key = value`` text. Blank lines and lines starting
with ``#`` are ignored; list values are comma separated. Unknown keys are an
error. Precedence, lowest first: defaults, config file, ``FLAKESIFT_SEED``,
command-line flags.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field

from .cluster import LINKAGES
from .strdist import FEATURE_NAMES

SEED_ENV = "FLAKESIFT_SEED"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Config:
    min_silhouette: float = 0.6
    linkage: str = "average"
    k_folds: int = 5
    n_estimators: int = 100
    seed: int = 42
    min_flaky_for_ml: int = 10
    trace_sample_k: int = 5
    trace_truncate: int = 10_000
    damerau_variant: str = "osa"
    code_text: str = "raw"
    shap_permutations: int = 20
    shap_background: int = 10
    shap_max_pairs: int = 100
    n_jobs: int = 1
    disabled_features: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not 0.0 <= self.min_silhouette <= 1.0:
            raise ConfigError("min_silhouette must lie in [0, 1]")
        if self.linkage not in LINKAGES:
            raise ConfigError(f"linkage must be one of {', '.join(LINKAGES)}")
        if self.damerau_variant not in ("osa", "full"):
            raise ConfigError("damerau_variant must be 'osa' or 'full'")
        if self.code_text not in ("raw", "tokens"):
            raise ConfigError("code_text must be 'raw' or 'tokens'")
        for name in ("k_folds", "n_estimators", "trace_sample_k", "trace_truncate", "shap_permutations",
                     "shap_background", "n_jobs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.k_folds < 2:
            raise ConfigError("k_folds must be at least 2")
        if self.min_flaky_for_ml < 2 or self.shap_max_pairs < 0:
            raise ConfigError("min_flaky_for_ml must be >= 2 and shap_max_pairs >= 0")
        unknown = set(self.disabled_features) - set(FEATURE_NAMES)
        if unknown:
            raise ConfigError(f"unknown feature(s) in disabled_features: {', '.join(sorted(unknown))}")

    @property
    def enabled_features(self) -> list[int]:
        return [i for i, n in enumerate(FEATURE_NAMES) if n not in self.disabled_features]

    def replace(self, **changes) -> "Config":
        changes = {k: v for k, v in changes.items() if v is not None}
        return dataclasses.replace(self, **changes)


def _coerce(name: str, raw: str):
    kind = Config.__dataclass_fields__[name].type
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind.startswith("tuple"):
            return tuple(v.strip() for v in raw.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from exc
    return raw


def parse_config(text: str) -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, raw = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"config line {lineno}: expected 'key = value'")
        if key not in Config.__dataclass_fields__:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw.strip())
    return values


def load_config(path: str | None = None, environ=None, **overrides) -> Config:
    environ = os.environ if environ is None else environ
    values = {}
    if path:
        with open(path, encoding="utf-8") as fh:
            values.update(parse_config(fh.read()))
    if environ.get(SEED_ENV):
        values["seed"] = _coerce("seed", environ[SEED_ENV])
    values.update({k: v for k, v in overrides.items() if v is not None})
    return Config(**values)

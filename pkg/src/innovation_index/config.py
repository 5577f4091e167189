"""Run configuration, loaded from YAML (JSON also parses)."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import yaml

from .dataset import Schema
from .exceptions import ConfigError, InnovationIndexError
from .forest import ForestParams

OUTPUT_DIR_ENV = "INNOVATION_INDEX_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "innovation_output"

_SECTIONS = {"seed", "n_jobs", "paths", "data", "forest", "clustering", "comparison", "evaluation"}


@dataclass(frozen=True)
class ClusterSettings:
    k: int = 20
    restarts: int = 10
    aggregate_years: bool = True
    max_iter: int = 300
    tol: float = 1e-6


@dataclass(frozen=True)
class CompareSettings:
    pairs: tuple[tuple[str, str], ...] = ()
    top_n: int = 8
    suggest: int = 0


@dataclass(frozen=True)
class RunConfig:
    seed: int
    features: Path | None = None
    targets: Path | None = None
    model: Path | None = None
    contributions: Path | None = None
    output_dir: Path = Path(DEFAULT_OUTPUT_DIR)
    features_schema: Schema = field(default_factory=Schema)
    targets_schema: Schema = field(default_factory=Schema)
    target_column: str = "innovation"
    forest: ForestParams = field(default_factory=ForestParams)
    clustering: ClusterSettings = field(default_factory=ClusterSettings)
    comparison: CompareSettings = field(default_factory=CompareSettings)
    eval_modes: tuple[str, ...] = ("in-sample", "oob")
    n_jobs: int = 1

    @property
    def model_path(self) -> Path:
        return self.model if self.model is not None else self.output_dir / "model.json"

    @property
    def contributions_path(self) -> Path:
        return self.contributions if self.contributions is not None else self.output_dir / "contributions.csv"

    def require_file(self, name: str) -> Path:
        derived = {"model": self.model_path, "contributions": self.contributions_path}
        path = derived[name] if name in derived else getattr(self, name)
        if path is None:
            raise ConfigError(f"config does not set paths.{name}")
        if not Path(path).is_file():
            raise ConfigError(f"paths.{name} does not exist: {path}")
        return Path(path)

    def validate(self) -> RunConfig:
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        if self.clustering.k < 1:
            raise ConfigError(f"clustering.k must be >= 1, got {self.clustering.k}")
        if self.clustering.restarts < 1:
            raise ConfigError(f"clustering.restarts must be >= 1, got {self.clustering.restarts}")
        if self.comparison.top_n < 1:
            raise ConfigError(f"comparison.top_n must be >= 1, got {self.comparison.top_n}")
        bad = set(self.eval_modes) - {"in-sample", "oob"}
        if bad:
            raise ConfigError(f"unknown evaluation modes: {sorted(bad)}")
        return self


def _section(raw: dict[str, Any], name: str) -> dict[str, Any]:
    value = raw.get(name) or {}
    if not isinstance(value, dict):
        raise ConfigError(f"config section {name!r} must be a mapping")
    return value


def _path(value: Any, base: Path) -> Path | None:
    if value is None:
        return None
    p = Path(str(value))
    return p if p.is_absolute() else base / p


def parse_config(raw: dict[str, Any] | None, base_dir: Path = Path(".")) -> RunConfig:
    """Build a :class:`RunConfig` from a parsed document.

    Relative paths resolve against ``base_dir`` (the config file's directory).
    A missing ``paths.output_dir`` falls back to ``$INNOVATION_INDEX_OUTPUT_DIR``.
    """
    raw = dict(raw or {})
    unknown = set(raw) - _SECTIONS
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    if "seed" not in raw:
        raise ConfigError("config must set an explicit integer seed")
    paths = _section(raw, "paths")
    data = _section(raw, "data")
    try:
        out = paths.get("output_dir")
        output_dir = _path(out, base_dir) if out is not None else Path(os.environ.get(OUTPUT_DIR_ENV, DEFAULT_OUTPUT_DIR))
        cl = _section(raw, "clustering")
        cmp_ = _section(raw, "comparison")
        pairs = tuple(_parse_pair(p) for p in cmp_.get("pairs", []) or [])
        cfg = RunConfig(
            seed=raw["seed"],
            features=_path(paths.get("features"), base_dir),
            targets=_path(paths.get("targets"), base_dir),
            model=_path(paths.get("model"), base_dir),
            contributions=_path(paths.get("contributions"), base_dir),
            output_dir=output_dir,
            features_schema=Schema.from_dict(data.get("features_schema") or {}),
            targets_schema=Schema.from_dict(data.get("targets_schema") or {}),
            target_column=str(data.get("target_column", "innovation")),
            forest=ForestParams.from_dict(_section(raw, "forest")),
            clustering=ClusterSettings(**cl),
            comparison=CompareSettings(
                pairs=pairs,
                top_n=int(cmp_.get("top_n", 8)),
                suggest=int(cmp_.get("suggest", 0)),
            ),
            eval_modes=tuple(_section(raw, "evaluation").get("modes", ["in-sample", "oob"])),
            n_jobs=int(raw.get("n_jobs", 1)),
        )
    except ConfigError:
        raise
    except (InnovationIndexError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from None
    return cfg.validate()


def _parse_pair(p: Any) -> tuple[str, str]:
    if not isinstance(p, (list, tuple)) or len(p) != 2:
        raise ConfigError(f"comparison pair must be a 2-element list, got {p!r}")
    return str(p[0]), str(p[1])


def load_config(path: str | os.PathLike[str]) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a mapping at top level")
    return parse_config(raw, path.parent)


def with_overrides(cfg: RunConfig, **overrides: Any) -> RunConfig:
    """Apply non-None command-line overrides and re-validate."""
    flat = {k: v for k, v in overrides.items() if v is not None}
    forest_keys = {"n_trees", "max_depth", "min_samples_leaf", "features_per_split"}
    cluster_keys = {"k", "restarts", "aggregate_years"}
    forest = {k: flat.pop(k) for k in list(flat) if k in forest_keys}
    cluster = {k: flat.pop(k) for k in list(flat) if k in cluster_keys}
    top_n = flat.pop("top_n", None)
    pairs = flat.pop("pairs", None)
    try:
        if forest:
            flat["forest"] = replace(cfg.forest, **forest)
        if cluster:
            flat["clustering"] = replace(cfg.clustering, **cluster)
        if top_n is not None or pairs:
            flat["comparison"] = replace(
                cfg.comparison,
                top_n=top_n if top_n is not None else cfg.comparison.top_n,
                pairs=tuple(pairs) if pairs else cfg.comparison.pairs,
            )
        return replace(cfg, **flat).validate()
    except InnovationIndexError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid override: {exc}") from None

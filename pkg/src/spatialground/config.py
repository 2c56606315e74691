"""Run configuration: a YAML file with command-line overrides on top.

Example::

    strategies: [raw, resolver]
    data:
      annotations: data/annotations.json
      ground_truth: data/ground_truth.json
      scenes: data/scenes
    grounder: {quantile: 0.98, eps: 0.15, min_pts: 10, max_candidates: 8}
    volume_filter: {min_volume: 0.01, per_class: {chair: [0.05, 2.0]}}
    budget: {max_rounds: 5, max_tool_calls: 10, timeout: 60}
    chat: {endpoint: null, model: gpt-4, cache_dir: .cache/chat, min_interval: 0}
    out: runs/latest
    workers: 4
    seed: 0

A ``synth: {n: 200, k: 3}`` section replaces the ``data`` paths with an
in-memory synthetic suite generated from ``seed``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import yaml

from .agent import Budget
from .errors import ConfigError
from .grounder import FeatureBackend, GrounderParams, HttpEmbedder, LabelBackend, RelevanceBackend
from .spatial import VolumeFilterConfig

DEFAULT_CACHE_DIR = ".spatialground-cache"
DEFAULT_OUT = "runs/latest"


@dataclass
class ChatSettings:
    endpoint: str | None = None
    model: str = "gpt-4"
    cache_dir: str = DEFAULT_CACHE_DIR
    min_interval: float = 0.0


@dataclass
class SynthSettings:
    n: int = 200
    k: int | list[int] = 3
    relations: list[str] | None = None


@dataclass
class RunConfig:
    scene: str | None = None
    query: str | None = None
    annotations: str | None = None
    ground_truth: str | None = None
    scenes: str | None = None
    strategies: list[str] = field(default_factory=lambda: ["raw", "resolver"])
    grounder: GrounderParams = field(default_factory=GrounderParams)
    volume_filter: VolumeFilterConfig = field(default_factory=VolumeFilterConfig)
    budget: Budget = field(default_factory=Budget)
    chat: ChatSettings = field(default_factory=ChatSettings)
    backend: str = "label"
    embed_endpoint: str | None = None
    synth: SynthSettings | None = None
    out: str = DEFAULT_OUT
    workers: int = 1
    seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["volume_filter"]["per_class"] = {k: list(v) for k, v in self.volume_filter.per_class.items()}
        return d

    @property
    def digest(self) -> str:
        """Short hash of everything that can change results (not output location or worker count)."""
        d = self.to_dict()
        for key in ("out", "workers", "query", "scene"):
            d.pop(key)
        d["chat"].pop("cache_dir")
        d["chat"].pop("min_interval")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def make_backend(self) -> RelevanceBackend:
        if self.backend == "label":
            return LabelBackend()
        if self.backend == "feature":
            if not self.embed_endpoint:
                raise ConfigError("backend 'feature' needs embed_endpoint")
            return FeatureBackend(HttpEmbedder(self.embed_endpoint))
        raise ConfigError(f"unknown backend {self.backend!r}; expected 'label' or 'feature'")

    def validate_bench(self) -> None:
        """Check the fields a benchmark run needs, naming the first one missing."""
        from .evaluation.benchmark import canonical_strategy

        if not self.strategies:
            raise ConfigError("strategies: at least one strategy is required")
        self.strategies = [canonical_strategy(s) for s in self.strategies]
        if self.synth is None:
            for name in ("annotations", "ground_truth", "scenes"):
                value = getattr(self, name)
                if not value:
                    raise ConfigError(f"missing required field '{name}' (or a 'synth' section)")
                if not Path(value).exists():
                    raise ConfigError(f"{name}: path does not exist: {value}")


def _build(cls, data: Mapping | None, section: str):
    data = dict(data or {})
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{section}: unknown key(s) {', '.join(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from None


def config_from_dict(raw: Mapping[str, Any]) -> RunConfig:
    raw = dict(raw or {})
    data = raw.pop("data", None) or {}
    if not isinstance(data, Mapping):
        raise ConfigError("data: expected a mapping")
    for key in ("annotations", "ground_truth", "scenes"):
        if key in data:
            raw.setdefault(key, data[key])
    unknown_data = sorted(set(data) - {"annotations", "ground_truth", "scenes"})
    if unknown_data:
        raise ConfigError(f"data: unknown key(s) {', '.join(unknown_data)}")

    cfg = RunConfig()
    simple = {"scene", "query", "annotations", "ground_truth", "scenes", "backend", "embed_endpoint", "out"}
    for key, value in raw.items():
        if key in simple:
            setattr(cfg, key, None if value is None else str(value))
        elif key == "strategies":
            cfg.strategies = [value] if isinstance(value, str) else list(value)
        elif key == "grounder":
            cfg.grounder = _build(GrounderParams, value, "grounder")
        elif key == "volume_filter":
            try:
                cfg.volume_filter = VolumeFilterConfig.from_dict(value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"volume_filter: {exc}") from None
        elif key == "budget":
            cfg.budget = _build(Budget, value, "budget")
        elif key == "chat":
            cfg.chat = _build(ChatSettings, value, "chat")
        elif key == "synth":
            cfg.synth = _build(SynthSettings, value, "synth")
        elif key in ("workers", "seed"):
            try:
                setattr(cfg, key, int(value))
            except (TypeError, ValueError):
                raise ConfigError(f"{key}: expected an integer, got {value!r}") from None
        else:
            raise ConfigError(f"unknown config key {key!r}")
    if cfg.workers < 1:
        raise ConfigError("workers: must be >= 1")
    return cfg


def load_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    """Read ``path`` (if given) and apply non-None ``overrides``; flags win over the file."""
    raw: dict[str, Any] = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            raw = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{p}: invalid YAML: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{p}: top level must be a mapping")
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key in ("endpoint", "model", "cache_dir"):
            chat = dict(raw.get("chat") or {})
            chat[key] = value
            raw["chat"] = chat
        elif key == "strategy":
            raw["strategies"] = [value]
        else:
            raw[key] = value
    return config_from_dict(raw)

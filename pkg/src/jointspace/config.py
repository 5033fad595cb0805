"""Run configuration: one JSON document, strict keys, flags override file values."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .alignment import ContrastiveConfig
from .dataset import CorpusConfig
from .encoders import ModelConfig
from .errors import ConfigInvalid
from .retrieval import DIRECTIONS


@dataclass
class EvalConfig:
    directions: list[str] = field(default_factory=lambda: list(DIRECTIONS))
    head_templates: int = 64
    compose_trials: int = 100

    def validate(self) -> "EvalConfig":
        bad = [d for d in self.directions if d not in DIRECTIONS]
        if bad or not self.directions:
            raise ConfigInvalid("eval.directions", f"choose from {', '.join(DIRECTIONS)}")
        if self.head_templates < 1:
            raise ConfigInvalid("eval.head_templates", "must be at least 1")
        return self


@dataclass
class CacheConfig:
    k: int = 3
    beta: float = 5.0
    gamma: float = 0.5


@dataclass
class PathsConfig:
    corpus: str = "corpus.jsc"
    checkpoint: str = "model.ckpt"
    report: str = ""


@dataclass
class RunConfig:
    seed: int = 0
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    cache: CacheConfig = field(default_factory=CacheConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _build(cls, data, prefix: str):
    if not isinstance(data, dict):
        raise ConfigInvalid(prefix or "config", "expected a JSON object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        name = f"{prefix}.{key}" if prefix else key
        if key not in known:
            raise ConfigInvalid(name, "unknown key")
        default = known[key].default_factory() if known[key].default_factory is not dataclasses.MISSING \
            else known[key].default
        if dataclasses.is_dataclass(default):
            kwargs[key] = _build(type(default), value, name)
        else:
            kwargs[key] = _coerce(name, default, value)
    return cls(**kwargs)


def _coerce(name: str, default, value):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigInvalid(name, "expected true or false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigInvalid(name, "expected an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigInvalid(name, "expected a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigInvalid(name, "expected a string")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigInvalid(name, "expected a list")
        return list(value)
    return value


def from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data, "")


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8") or "{}")
    except json.JSONDecodeError as exc:
        raise ConfigInvalid("config", f"{path} is not valid JSON ({exc})") from None
    return from_dict(data)


def validate(cfg: RunConfig) -> RunConfig:
    cfg.corpus.validate()
    cfg.model.validate()
    cfg.train.validate()
    cfg.eval.validate()
    if cfg.seed < 0:
        raise ConfigInvalid("seed", "must be non-negative")
    return cfg

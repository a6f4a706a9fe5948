"""Versioned JSON run configuration.

Schema (version 1)::

    {"schema_version": 1,
     "scene": {SceneConfig fields},
     "model": {ModelConfig fields},
     "train": {TrainConfig fields}}

Every section and key is optional; missing keys take defaults and unknown
keys are rejected.
"""
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from ..losses import LossWeights
from ..scenes.generator import SceneConfig
from .model import ModelConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 0.01
    steps_per_task: int = 200
    stage2_steps: int = 400
    subgrid: bool = True
    min_views: int = 1
    max_views: int = None
    min_times: int = 2
    max_times: int = None
    grad_clip: float = 1.0
    checksum_every: int = 100
    weights: LossWeights = LossWeights()

    def __post_init__(self):
        if isinstance(self.weights, dict):
            object.__setattr__(self, "weights", LossWeights(**self.weights))
        if self.lr <= 0 or self.weight_decay < 0 or self.checksum_every < 1:
            raise ConfigError(f"invalid training hyperparameters {self}")
        if self.steps_per_task < 0 or self.stage2_steps < 0:
            raise ConfigError("step counts must be non-negative")

    def to_dict(self):
        d = asdict(self)
        d["weights"] = self.weights.to_dict()
        return d


@dataclass(frozen=True)
class RunConfig:
    scene: SceneConfig = SceneConfig()
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()

    def to_dict(self):
        return {"schema_version": SCHEMA_VERSION, "scene": self.scene.to_dict(),
                "model": self.model.to_dict(), "train": self.train.to_dict()}


def _build(cls, data, section):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in {section}: {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {section} section: {exc}") from exc


def parse_config(data, overrides=None):
    """Build a :class:`RunConfig` from a dict, applying ``overrides``.

    ``overrides`` maps section -> {key: value}; flags win over file values.
    """
    data = dict(data or {})
    version = data.pop("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"config schema version {version} unsupported "
                          f"(expected {SCHEMA_VERSION})")
    unknown = set(data) - {"scene", "model", "train"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    merged = {}
    for section in ("scene", "model", "train"):
        merged[section] = dict(data.get(section, {}))
        merged[section].update((overrides or {}).get(section, {}))
    return RunConfig(_build(SceneConfig, merged["scene"], "scene"),
                     _build(ModelConfig, merged["model"], "model"),
                     _build(TrainConfig, merged["train"], "train"))


def load_config(path, overrides=None):
    if path is None:
        return parse_config({}, overrides)
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config root must be an object")
    return parse_config(data, overrides)


def write_resolved(run, directory):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / "resolved_config.json").write_text(
        json.dumps(run.to_dict(), indent=2, sort_keys=True) + "\n")

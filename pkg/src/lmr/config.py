"""Experiment configuration file: one JSON document with five sections.

Every key is optional and defaults to the library default; unknown keys are
rejected so that typos cannot silently fall back to defaults.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .losses import LossWeights
from .network import VARIANTS
from .synth import DatasetConfig, DataError, FeatureSpec, MotionConfig
from .training import TrainConfig

CONFIG_FORMAT = "lmr-config-v1"


class ConfigError(ValueError):
    pass


@dataclass
class ModelSection:
    variant: str = "lmr"
    pose_hidden: int = 128
    shape_hidden: int = 128
    camera_hidden: int = 64
    n_iter: int = 3


@dataclass
class TrainingSection:
    epochs: int = 60
    batch_size: int = 8
    learning_rate: float = 1e-3
    init_seed: int = 0
    shuffle_seed: int = 0
    clip_norm: float = 5.0
    supervise_all_iterations: bool = False
    camera_supervision: bool = True
    eval_every: int = 1


@dataclass
class MetricsSection:
    fps: float = 30.0
    weights: LossWeights = field(default_factory=LossWeights)


@dataclass
class PathsSection:
    checkpoint: str = "checkpoint.lmrb"
    log: str = "train_log.jsonl"
    report: str = "report.csv"
    resolved_config: str = "config.resolved.json"


@dataclass
class ExperimentConfig:
    model: ModelSection = field(default_factory=ModelSection)
    data: DatasetConfig = field(default_factory=DatasetConfig)
    training: TrainingSection = field(default_factory=TrainingSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)
    paths: PathsSection = field(default_factory=PathsSection)

    def train_config(self, variant=None):
        return TrainConfig(
            variant=variant or self.model.variant,
            pose_hidden=self.model.pose_hidden,
            shape_hidden=self.model.shape_hidden,
            camera_hidden=self.model.camera_hidden,
            n_iter=self.model.n_iter,
            weights=self.metrics.weights,
            fps=self.metrics.fps,
            **asdict(self.training),
        )

    def validate(self):
        if self.model.variant not in VARIANTS:
            raise ConfigError(f"model.variant must be one of {VARIANTS}, got {self.model.variant!r}")
        try:
            self.data.motion.validate()
            self.data.features.validate()
            self.data.seeds()
            if self.data.n_train < 1 or self.data.n_val < 0:
                raise DataError("data.n_train must be >= 1 and data.n_val >= 0")
            self.train_config().validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self

    def to_dict(self):
        return {"format": CONFIG_FORMAT, **asdict(self)}

    def dumps(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"


def _section(cls, doc, where):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown key {unknown[0]!r}")
    return cls(**doc)


def from_dict(doc):
    doc = dict(doc)
    fmt = doc.pop("format", CONFIG_FORMAT)
    if fmt != CONFIG_FORMAT:
        raise ConfigError(f"config format {fmt!r} is not {CONFIG_FORMAT!r}")
    unknown = sorted(set(doc) - {"model", "data", "training", "metrics", "paths"})
    if unknown:
        raise ConfigError(f"unknown config section {unknown[0]!r}")
    try:
        data = dict(doc.get("data", {}))
        motion = _section(MotionConfig, data.pop("motion", {}), "data.motion")
        if isinstance(motion.amp_range, list):
            motion.amp_range = tuple(motion.amp_range)
        features = _section(FeatureSpec, data.pop("features", {}), "data.features")
        metrics = dict(doc.get("metrics", {}))
        weights = _section(LossWeights, metrics.pop("weights", {}), "metrics.weights")
        cfg = ExperimentConfig(
            model=_section(ModelSection, doc.get("model", {}), "model"),
            data=_section(DatasetConfig, {**data, "motion": motion, "features": features}, "data"),
            training=_section(TrainingSection, doc.get("training", {}), "training"),
            metrics=_section(MetricsSection, {**metrics, "weights": weights}, "metrics"),
            paths=_section(PathsSection, doc.get("paths", {}), "paths"),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg.validate()


def load(path):
    if path is None:
        return ExperimentConfig().validate()
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return from_dict(doc)

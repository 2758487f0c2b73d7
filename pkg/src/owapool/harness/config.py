"""Experiment configuration: TOML file, one section per concern, no unknown keys."""
from __future__ import annotations

import dataclasses
import os
import sys
from dataclasses import dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

TASKS = ("cnn", "bow", "bench", "robust")


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    source: str = "synth"          # synth | cifar10 | codes | csv
    kind: str = "blob"             # synth image kind
    path: str = ""
    n_train: int = 1000
    n_test: int = 500
    class_filter: list[int] = field(default_factory=list)
    size: int = 20
    noise: float = 0.4
    noise_spread: float = 0.5
    blob_amplitude: float = 2.0
    offset: float = 0.5
    spike_amplitude: float = 10.0
    spikes: int = 8


@dataclass
class ModelConfig:
    arch: str = "small"            # small | nin
    variants: list[str] = field(default_factory=lambda: ["Max", "Avg", "OWAL"])
    filters: int = 4
    kernel: int = 3
    pool_window: int = 0           # 0 = global pooling
    num_classes: int = 2


@dataclass
class TrainSection:
    learning_rate: float = 0.05
    momentum: float = 0.9
    epochs: int = 100
    batch_size: int = 50
    weight_lr_multiplier: float = 0.01
    c1: float = 1.0
    c2: float = 1.0
    c3: float = 0.01
    export_weights: bool = True


@dataclass
class BowSection:
    C1: float = 10.0
    C2: float = 0.0
    dictionary_sizes: list[int] = field(default_factory=lambda: [16])
    n_images: int = 200
    cells: int = 16
    patch: int = 8
    kmeans_iters: int = 30
    theta_lr: float = 1.0
    w_lr: float = 0.1
    dual_lr: float = 0.5
    max_outer: int = 50
    max_phase_epochs: int = 200


@dataclass
class BenchSection:
    shapes: list[list[int]] = field(default_factory=lambda: [[1, 32, 222, 222]])
    window: int = 2
    stride: int = 2
    variants: list[str] = field(default_factory=lambda: ["max", "avg", "owa", "owa_select"])
    repetitions: int = 11


@dataclass
class RobustSection:
    angles: list[float] = field(default_factory=lambda: [-8.0, -4.0, 0.0, 4.0, 8.0])


@dataclass
class ExperimentConfig:
    task: str = "cnn"
    seed: int = 0
    out: str = "runs/out"
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainSection = field(default_factory=TrainSection)
    bow: BowSection = field(default_factory=BowSection)
    bench: BenchSection = field(default_factory=BenchSection)
    robust: RobustSection = field(default_factory=RobustSection)

    def validate(self, check_paths: bool = True) -> ExperimentConfig:
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.data.source in ("cifar10", "csv") and check_paths and not os.path.exists(self.data.path):
            raise ConfigError(f"data path does not exist: {self.data.path!r}")
        if self.data.n_train < 1 or self.data.n_test < 0:
            raise ConfigError("n_train must be >= 1 and n_test >= 0")
        if self.train.epochs < 1 or self.train.learning_rate <= 0:
            raise ConfigError("epochs must be >= 1 and learning_rate > 0")
        if self.bench.repetitions < 1:
            raise ConfigError("bench repetitions must be >= 1")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_SECTIONS = {"data": DataConfig, "model": ModelConfig, "train": TrainSection, "bow": BowSection,
             "bench": BenchSection, "robust": RobustSection}
_TOP = ("task", "seed", "out")


def _build(cls, values: dict, where: str):
    known = {f.name: f for f in dataclasses.fields(cls)}
    for key in values:
        if key not in known:
            raise ConfigError(f"unknown key {where}.{key}")
    defaults = cls()
    for key, value in values.items():
        expected = type(getattr(defaults, key))
        if expected is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if not isinstance(value, expected) or (expected is int and isinstance(value, bool)):
            raise ConfigError(f"{where}.{key}: expected {expected.__name__}, got {type(value).__name__}")
    return cls(**values)


def config_from_dict(raw: dict) -> ExperimentConfig:
    top = {}
    sections = {}
    for key, value in raw.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"[{key}] must be a section")
            sections[key] = _build(_SECTIONS[key], value, key)
        elif key in _TOP:
            top[key] = value
        else:
            raise ConfigError(f"unknown key {key}")
    cfg = ExperimentConfig(**{k: v for k, v in top.items()}, **sections)
    if not isinstance(cfg.seed, int) or not isinstance(cfg.task, str) or not isinstance(cfg.out, str):
        raise ConfigError("task and out must be strings, seed an integer")
    return cfg


def load_config(path, seed: int | None = None, out: str | None = None,
                check_paths: bool = True) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    cfg = config_from_dict(raw)
    if seed is not None:
        cfg.seed = seed
    if out is not None:
        cfg.out = out
    return cfg.validate(check_paths)

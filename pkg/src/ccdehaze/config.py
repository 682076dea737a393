"""Experiment configuration: one JSON document fully determines a run.

Schema (every key optional; missing keys come from the chosen preset)::

    {
      "preset": "tiny" | "paper",
      "seed": 0,
      "data": {
        "source": "tiny" | "<dir of class folders>",
        "classes": 4, "per_class": 32, "image_size": 256,
        "manifest": "<path to manifest.json>",
        "val_fraction": 0.2, "train_per_class": 24
      },
      "haze": {"beta": 2.0, "airlight": null, "airlight_range": [0.7, 1.0],
               "depth_mode": "constant", "depth_range": [0.1, 1.0], "depth_dir": null},
      "train": {"variant": "DNet+CCGAN+CNet", "learning_rate": 0.0002,
                "adam_betas": [0.5, 0.999], "weights": {"a": 500, "b": 1, "c": 1},
                "epochs": 10, "batch_size": 4, "width_scale": 0.125,
                "disc_hidden": 128, "cnet_backbone": "small",
                "non_saturating_gan": false, "checkpoint_every": 0, "max_steps": null},
      "eval": {"batch_size": 8, "external_classifiers": {"<name>": "<shell command>"}}
    }
"""
from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError
from .objective import LossWeights

VARIANTS = ("DNet", "DNet+CCGAN", "DNet+CNet", "DNet+CCGAN+CNet")
PRESETS = ("tiny", "paper")
OUT_ENV = "CCDEHAZE_OUT"


@dataclass
class DataConfig:
    source: str = "tiny"
    classes: int = 4
    per_class: int = 32
    image_size: int = 256
    manifest: str | None = None
    val_fraction: float = 0.2
    train_per_class: int | None = 24

    def validate(self):
        if self.classes < 2 or self.per_class < 1:
            raise ConfigError("data.classes must be >= 2 and data.per_class >= 1")
        if self.image_size < 1 or self.image_size % 256:
            raise ConfigError("data.image_size must be a positive multiple of 256 (eight 2x downsamplings)")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError("data.val_fraction must be in [0, 1)")
        if self.train_per_class is not None and self.train_per_class < 1:
            raise ConfigError("data.train_per_class must be >= 1 or null")


@dataclass
class HazeConfig:
    beta: float = 2.0
    airlight: float | list | None = None
    airlight_range: list = field(default_factory=lambda: [0.7, 1.0])
    depth_mode: str = "constant"
    depth_range: list = field(default_factory=lambda: [0.1, 1.0])
    depth_dir: str | None = None

    def params(self, seed: int):
        from .scattering import HazeParams

        airlight = tuple(self.airlight) if isinstance(self.airlight, list) else self.airlight
        return HazeParams(
            beta=self.beta,
            airlight=airlight,
            airlight_range=tuple(self.airlight_range),
            depth_mode=self.depth_mode,
            depth_range=tuple(self.depth_range),
            depth_dir=self.depth_dir,
            rng_seed=seed,
        )


@dataclass
class TrainConfig:
    variant: str = "DNet+CCGAN+CNet"
    learning_rate: float = 2e-4
    adam_betas: list = field(default_factory=lambda: [0.5, 0.999])
    weights: dict = field(default_factory=lambda: {"a": 500.0, "b": 1.0, "c": 1.0})
    epochs: int = 10
    batch_size: int = 8
    width_scale: float = 0.125
    disc_hidden: int = 128
    cnet_backbone: str = "small"
    non_saturating_gan: bool = False
    checkpoint_every: int = 0
    max_steps: int | None = None

    def validate(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"train.variant must be one of {list(VARIANTS)}, got {self.variant!r}")
        if not self.learning_rate > 0:
            raise ConfigError("train.learning_rate must be > 0")
        if self.epochs < 1:
            raise ConfigError("train.epochs must be >= 1")
        if self.batch_size < 2:
            raise ConfigError("train.batch_size must be >= 2 (batch norm at the 1x1 bottleneck)")
        if not self.width_scale > 0:
            raise ConfigError("train.width_scale must be > 0")
        if self.checkpoint_every < 0:
            raise ConfigError("train.checkpoint_every must be >= 0")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError("train.max_steps must be >= 1 or null")
        if len(self.adam_betas) != 2 or not all(0 <= b < 1 for b in self.adam_betas):
            raise ConfigError("train.adam_betas must be two values in [0, 1)")
        unknown = set(self.weights) - {"a", "b", "c"}
        if unknown:
            raise ConfigError(f"unknown loss weights {sorted(unknown)}")
        self.loss_weights()

    def loss_weights(self) -> LossWeights:
        try:
            return LossWeights(**{k: float(v) for k, v in self.weights.items()})
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def uses_gan(self) -> bool:
        return "CCGAN" in self.variant

    @property
    def uses_cnet(self) -> bool:
        return "CNet" in self.variant

    def effective_weights(self) -> LossWeights:
        """Configured weights with the terms of absent sub-networks zeroed."""
        w = self.loss_weights()
        return LossWeights(w.a, w.b if self.uses_gan else 0.0, w.c if self.uses_cnet else 0.0)


@dataclass
class EvalConfig:
    batch_size: int = 8
    external_classifiers: dict = field(default_factory=dict)


@dataclass
class ExperimentConfig:
    preset: str = "tiny"
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    haze: HazeConfig = field(default_factory=HazeConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_variant(self, variant: str) -> "ExperimentConfig":
        out = copy.deepcopy(self)
        out.train.variant = variant
        out.train.validate()
        return out


PRESET_OVERRIDES = {
    "tiny": {"train": {"batch_size": 4}},
    "paper": {
        "data": {"source": None, "train_per_class": None},
        "train": {"width_scale": 1.0, "disc_hidden": 1024, "cnet_backbone": "resnet50", "epochs": 100},
    },
}

_SECTIONS = {"data": DataConfig, "haze": HazeConfig, "train": TrainConfig, "eval": EvalConfig}


def _build_section(cls, values: dict, where: str):
    if not isinstance(values, dict):
        raise ConfigError(f"{where} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}; allowed: {sorted(known)}")
    return cls(**values)


def config_from_dict(doc: dict, preset: str | None = None, seed: int | None = None) -> ExperimentConfig:
    """Validate a config document, layering it over its preset's defaults."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(doc) - {"preset", "seed", *_SECTIONS}
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}")
    preset = preset or doc.get("preset", "tiny")
    if preset not in PRESETS:
        raise ConfigError(f"preset must be one of {list(PRESETS)}, got {preset!r}")
    seed = int(doc.get("seed", 0) if seed is None else seed)

    sections = {}
    for name, cls in _SECTIONS.items():
        section = doc.get(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"{name} must be an object")
        merged = dict(PRESET_OVERRIDES[preset].get(name, {}))
        merged.update(section)
        sections[name] = _build_section(cls, merged, name)
    cfg = ExperimentConfig(preset=preset, seed=seed, **sections)
    cfg.data.validate()
    cfg.train.validate()
    try:
        cfg.haze.params(seed)
    except ValueError as exc:
        raise ConfigError(f"haze: {exc}") from exc
    return cfg


def load_config(path, preset: str | None = None, seed: int | None = None) -> ExperimentConfig:
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return config_from_dict(doc, preset, seed)


def save_config(path, cfg: ExperimentConfig) -> None:
    with open(path, "w") as f:
        json.dump(cfg.to_dict(), f, indent=1, sort_keys=True)
        f.write("\n")

"""Versioned checkpoints holding all three sub-networks in one archive."""
from __future__ import annotations

import os
import zlib
from dataclasses import dataclass

import numpy as np
import torch

from .ccgan import (
    Discriminator,
    DiscriminatorConfig,
    FeatureExtractor,
    FeatureExtractorConfig,
    build_discriminator,
    build_extractor,
    discriminator_config_for,
)
from .cnet import CNet, CNetConfig, build_cnet
from .config import ExperimentConfig
from .dnet import Generator, GeneratorConfig, build_generator
from .errors import CheckpointError, CheckpointVersionError

CHECKPOINT_FORMAT = "ccdehaze-checkpoint"
CHECKPOINT_VERSION = 1
NETWORKS = ("dnet", "extractor", "discriminator", "cnet")


def derive_seed(seed: int, name: str) -> int:
    """Stable per-network seed from the run seed and a name."""
    return int(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]).generate_state(1)[0])


@dataclass
class Models:
    dnet: Generator
    extractor: FeatureExtractor
    discriminator: Discriminator
    cnet: CNet

    def items(self):
        return [(name, getattr(self, name)) for name in NETWORKS]

    def configs(self) -> dict:
        return {name: m.config.to_dict() for name, m in self.items()}

    def state_dicts(self) -> dict:
        return {name: m.state_dict() for name, m in self.items()}

    def train(self):
        for _, m in self.items():
            m.train()

    def eval(self):
        for _, m in self.items():
            m.eval()

    def to(self, dtype):
        for _, m in self.items():
            m.to(dtype)
        return self


def build_models(cfg: ExperimentConfig, num_classes: int) -> Models:
    t = cfg.train
    size = cfg.data.image_size
    ext_cfg = FeatureExtractorConfig(width_scale=t.width_scale, input_size=size)
    return Models(
        dnet=build_generator(GeneratorConfig(width_scale=t.width_scale, input_size=size), derive_seed(cfg.seed, "dnet")),
        extractor=build_extractor(ext_cfg, derive_seed(cfg.seed, "extractor")),
        discriminator=build_discriminator(
            discriminator_config_for(ext_cfg, t.disc_hidden), derive_seed(cfg.seed, "discriminator")
        ),
        cnet=build_cnet(
            CNetConfig(num_classes, t.cnet_backbone, size, t.width_scale), derive_seed(cfg.seed, "cnet")
        ),
    )


def models_from_configs(configs: dict) -> Models:
    """Rebuild untrained networks from the configs stored in a checkpoint."""
    try:
        gen = GeneratorConfig(**configs["dnet"])
        ext = FeatureExtractorConfig(**configs["extractor"])
        disc = DiscriminatorConfig(**configs["discriminator"])
        cls = CNetConfig(**configs["cnet"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"bad network configs in checkpoint: {exc}") from exc
    return Models(
        dnet=build_generator(gen), extractor=build_extractor(ext), discriminator=build_discriminator(disc), cnet=build_cnet(cls)
    )


def parameter_checksums(module: torch.nn.Module) -> dict[str, bytes]:
    """Raw bytes of every parameter; equality means bitwise-identical weights."""
    return {name: p.detach().cpu().numpy().tobytes() for name, p in module.named_parameters()}


def atomic_save(obj, path) -> None:
    tmp = f"{path}.tmp"
    torch.save(obj, tmp)
    os.replace(tmp, path)


def save_checkpoint(path, models: Models, cfg: ExperimentConfig, extra: dict | None = None) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "network_configs": models.configs(),
        "networks": models.state_dicts(),
    }
    payload.update(extra or {})
    atomic_save(payload, path)


def read_checkpoint(path) -> dict:
    if not os.path.isfile(path):
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:  # torch raises a zoo of types on corrupt archives
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a ccdehaze checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"{path} has checkpoint version {payload.get('version')}, this build reads version {CHECKPOINT_VERSION}"
        )
    return payload


def load_networks(payload: dict, models: Models | None = None) -> Models:
    """Load network weights, checking every tensor shape against the config first."""
    models = models or models_from_configs(payload["network_configs"])
    for name, module in models.items():
        stored = payload["networks"].get(name)
        if stored is None:
            raise CheckpointError(f"checkpoint lacks network {name!r}")
        expected = module.state_dict()
        if set(stored) != set(expected):
            missing = sorted(set(expected) - set(stored))
            extra = sorted(set(stored) - set(expected))
            raise CheckpointError(f"{name}: missing tensors {missing[:5]}, unexpected {extra[:5]}")
        for key, tensor in stored.items():
            if tuple(tensor.shape) != tuple(expected[key].shape):
                raise CheckpointError(
                    f"{name}.{key}: stored shape {tuple(tensor.shape)} vs config shape {tuple(expected[key].shape)}"
                )
        module.load_state_dict(stored)
    return models


def load_checkpoint(path) -> tuple[Models, dict]:
    payload = read_checkpoint(path)
    return load_networks(payload), payload

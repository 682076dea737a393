"""Feature-level adversarial pair: a VGG-style extractor and a two-layer FC discriminator.

The extractor plays the generator role of the adversarial game: it embeds
clear and dehazed images into 8 x 8 feature maps (for 256 x 256 input), and
the discriminator tells the two apart.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn as nn

from .dnet import scale_width
from .errors import ConfigError, ShapeError

LOG_EPS = 1e-7
VGG_STAGES = (64, 128, 256, 512, 512)
VGG_CONVS = (2, 2, 3, 3, 3)


@dataclass
class FeatureExtractorConfig:
    stage_channels: tuple = VGG_STAGES
    convs_per_stage: tuple = VGG_CONVS
    width_scale: float = 1.0
    input_size: int = 256

    def __post_init__(self):
        self.stage_channels = tuple(int(c) for c in self.stage_channels)
        self.convs_per_stage = tuple(int(c) for c in self.convs_per_stage)
        if len(self.stage_channels) != 5 or len(self.convs_per_stage) != 5:
            raise ConfigError("feature extractor needs exactly 5 stages (5 downsamplings)")
        if min(self.convs_per_stage) < 1:
            raise ConfigError("every stage needs at least one convolution")
        if self.input_size % 2 ** self.downsamplings:
            raise ConfigError("input_size must be divisible by 32")

    @property
    def downsamplings(self) -> int:
        return len(self.stage_channels)

    @property
    def final_spatial(self) -> int:
        return self.input_size // 2 ** self.downsamplings

    @property
    def out_channels(self) -> int:
        return scale_width(self.stage_channels[-1], self.width_scale)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stage_channels"] = list(self.stage_channels)
        d["convs_per_stage"] = list(self.convs_per_stage)
        return d


@dataclass
class DiscriminatorConfig:
    in_channels: int
    spatial: int = 8
    hidden_width: int = 1024
    leaky_slope: float = 0.2

    def __post_init__(self):
        if self.in_channels < 1 or self.spatial < 1 or self.hidden_width < 1:
            raise ConfigError("discriminator sizes must be positive")

    @property
    def in_features(self) -> int:
        return self.in_channels * self.spatial * self.spatial

    def to_dict(self) -> dict:
        return asdict(self)


class FeatureExtractor(nn.Module):
    def __init__(self, config: FeatureExtractorConfig):
        super().__init__()
        self.config = config
        layers = []
        in_ch = 3
        for width, n_convs in zip(config.stage_channels, config.convs_per_stage):
            out_ch = scale_width(width, config.width_scale)
            for _ in range(n_convs):
                layers += [nn.Conv2d(in_ch, out_ch, 3, padding=1), nn.ReLU()]
                in_ch = out_ch
            layers.append(nn.MaxPool2d(2))
        self.features = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != 3:
            raise ShapeError(f"expected N x 3 x H x W input, got {tuple(x.shape)}")
        step = 2 ** self.config.downsamplings
        if x.shape[2] % step or x.shape[3] % step:
            raise ShapeError(f"spatial size must be divisible by {step}, got {tuple(x.shape[2:])}")
        return self.features(x * 2 - 1)


class Discriminator(nn.Module):
    def __init__(self, config: DiscriminatorConfig):
        super().__init__()
        self.config = config
        self.fc1 = nn.Linear(config.in_features, config.hidden_width)
        self.act = nn.LeakyReLU(config.leaky_slope)
        self.fc2 = nn.Linear(config.hidden_width, 1)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        """Probability (N,) that each feature map came from a clear image."""
        c = self.config
        if features.dim() != 4 or tuple(features.shape[1:]) != (c.in_channels, c.spatial, c.spatial):
            raise ShapeError(
                f"expected N x {c.in_channels} x {c.spatial} x {c.spatial} features, got {tuple(features.shape)}"
            )
        # channel-major flatten: index = (c * H + y) * W + x
        h = self.act(self.fc1(features.flatten(1)))
        return torch.sigmoid(self.fc2(h)).squeeze(1)


def build_extractor(config: FeatureExtractorConfig | None = None, seed: int = 0) -> FeatureExtractor:
    config = config or FeatureExtractorConfig()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(int(seed))
        return FeatureExtractor(config)


def build_discriminator(config: DiscriminatorConfig, seed: int = 0) -> Discriminator:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(int(seed))
        return Discriminator(config)


def discriminator_config_for(extractor_config: FeatureExtractorConfig, hidden_width: int) -> DiscriminatorConfig:
    return DiscriminatorConfig(
        in_channels=extractor_config.out_channels,
        spatial=extractor_config.final_spatial,
        hidden_width=hidden_width,
    )


def extract_features(extractor: FeatureExtractor, image: torch.Tensor) -> torch.Tensor:
    size = extractor.config.input_size
    if image.dim() != 4 or tuple(image.shape[1:]) != (3, size, size):
        raise ShapeError(f"expected N x 3 x {size} x {size}, got {tuple(image.shape)}")
    return extractor(image)


def discriminate(discriminator: Discriminator, features: torch.Tensor) -> torch.Tensor:
    return discriminator(features)


def _safe(p: torch.Tensor, eps: float) -> torch.Tensor:
    return p.clamp(eps, 1 - eps)


def discriminator_objective(d_real: torch.Tensor, d_fake: torch.Tensor, eps: float = LOG_EPS) -> torch.Tensor:
    """mean log D(real) + mean log(1 - D(fake)); the discriminator maximizes this."""
    return torch.log(_safe(d_real, eps)).mean() + torch.log(1 - _safe(d_fake, eps)).mean()


def generator_gan_loss(d_fake: torch.Tensor, non_saturating: bool = False, eps: float = LOG_EPS) -> torch.Tensor:
    """mean log(1 - D(fake)), minimized; or -mean log D(fake) when non-saturating."""
    if non_saturating:
        return -torch.log(_safe(d_fake, eps)).mean()
    return torch.log(1 - _safe(d_fake, eps)).mean()


def adversarial_terms(d_real, d_fake, non_saturating: bool = False, eps: float = LOG_EPS):
    """Return (discriminator objective, generator GAN loss) for probability tensors."""
    if not torch.is_tensor(d_real):
        d_real = torch.tensor(d_real, dtype=torch.float64)
    if not torch.is_tensor(d_fake):
        d_fake = torch.tensor(d_fake, dtype=torch.float64)
    return discriminator_objective(d_real, d_fake, eps), generator_gan_loss(d_fake, non_saturating, eps)

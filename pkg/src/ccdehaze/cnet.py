"""Classification sub-network fed with dehazed images."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .dnet import scale_width
from .errors import ConfigError, ShapeError

BACKBONES = ("small", "resnet50")


@dataclass
class CNetConfig:
    num_classes: int
    backbone: str = "small"
    input_size: int = 256
    width_scale: float = 1.0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.backbone not in BACKBONES:
            raise ConfigError(f"backbone must be one of {BACKBONES}")
        if self.width_scale <= 0:
            raise ConfigError("width_scale must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


class BasicBlock(nn.Module):
    def __init__(self, in_ch, out_ch, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)
        self.shortcut = nn.Identity()
        if stride != 1 or in_ch != out_ch:
            self.shortcut = nn.Sequential(nn.Conv2d(in_ch, out_ch, 1, stride, bias=False), nn.BatchNorm2d(out_ch))

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


class SmallResNet(nn.Module):
    """Stem + three residual stages + global average pooling + FC."""

    def __init__(self, num_classes, width_scale=1.0):
        super().__init__()
        w1, w2, w3 = (scale_width(c, width_scale) for c in (64, 128, 256))
        self.stem = nn.Sequential(
            nn.Conv2d(3, w1, 3, 2, 1, bias=False), nn.BatchNorm2d(w1), nn.ReLU(), nn.MaxPool2d(2)
        )
        self.stages = nn.Sequential(BasicBlock(w1, w1), BasicBlock(w1, w2, 2), BasicBlock(w2, w3, 2))
        self.fc = nn.Linear(w3, num_classes)

    def forward(self, x):
        h = self.stages(self.stem(x))
        return self.fc(F.adaptive_avg_pool2d(h, 1).flatten(1))


class CNet(nn.Module):
    def __init__(self, config: CNetConfig):
        super().__init__()
        self.config = config
        if config.backbone == "small":
            self.backbone = SmallResNet(config.num_classes, config.width_scale)
        else:
            from torchvision.models import resnet50

            # torchvision's resnet already ends in global average pooling
            self.backbone = resnet50(weights=None, num_classes=config.num_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != 3:
            raise ShapeError(f"expected N x 3 x H x W input, got {tuple(x.shape)}")
        return self.backbone(x * 2 - 1)


def build_cnet(config: CNetConfig, seed: int = 0) -> CNet:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(int(seed))
        return CNet(config)


def classify(model: CNet, image: torch.Tensor) -> torch.Tensor:
    """Logits (N, C) for N x 3 x S x S images in [0, 1]."""
    size = model.config.input_size
    if image.dim() != 4 or tuple(image.shape[1:]) != (3, size, size):
        raise ShapeError(f"expected N x 3 x {size} x {size}, got {tuple(image.shape)}")
    return model(image)


def softmax(logits: torch.Tensor, dim: int = -1) -> torch.Tensor:
    logits = torch.as_tensor(logits)
    shifted = logits - logits.max(dim=dim, keepdim=True).values
    e = torch.exp(shifted)
    return e / e.sum(dim=dim, keepdim=True)

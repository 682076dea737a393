"""Loss terms and their weighted combination L = a*MSE + b*GAN + c*CE."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch

from .errors import InvalidParameterError, NumericError, ShapeError

PROB_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    a: float = 500.0
    b: float = 1.0
    c: float = 1.0

    def __post_init__(self):
        for name in ("a", "b", "c"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise InvalidParameterError(f"loss weight {name} must be finite and >= 0, got {v}")

    def to_dict(self) -> dict:
        return asdict(self)


DEFAULT_WEIGHTS = LossWeights(500.0, 1.0, 1.0)


@dataclass
class LossBreakdown:
    mse: float
    gan: float
    ce: float
    total: float
    weights: LossWeights

    def to_dict(self) -> dict:
        return {"mse": self.mse, "gan": self.gan, "ce": self.ce, "total": self.total, "weights": self.weights.to_dict()}


def mse_loss(dehazed: torch.Tensor, clear: torch.Tensor) -> torch.Tensor:
    """Mean squared error over every pixel, channel and batch element."""
    if dehazed.shape != clear.shape:
        raise ShapeError(f"shape mismatch: {tuple(dehazed.shape)} vs {tuple(clear.shape)}")
    return ((dehazed - clear) ** 2).mean()


def ce_loss(probs: torch.Tensor, labels) -> torch.Tensor:
    """Batch-mean of -log P[label], with P clamped at 1e-7 first.

    ``probs`` is (C,) with an int label or (N, C) with (N,) labels.
    """
    probs = torch.as_tensor(probs)
    labels = torch.as_tensor(labels, dtype=torch.long)
    if probs.dim() == 1:
        probs, labels = probs[None], labels.reshape(1)
    n_classes = probs.shape[1]
    if labels.shape != (probs.shape[0],):
        raise ShapeError(f"expected {probs.shape[0]} labels, got shape {tuple(labels.shape)}")
    if labels.numel() and (labels.min() < 0 or labels.max() >= n_classes):
        raise IndexError(f"labels must lie in [0, {n_classes})")
    picked = probs.gather(1, labels[:, None]).squeeze(1)
    return -torch.log(picked.clamp_min(PROB_EPS)).mean()


def total_loss(mse, gan, ce, weights: LossWeights = DEFAULT_WEIGHTS):
    """Weighted sum of the three terms.

    Accepts floats or scalar tensors. Returns ``(total, breakdown)``; the
    total keeps autograd history when the inputs have it.
    """
    values = {}
    for name, v in (("mse", mse), ("gan", gan), ("ce", ce)):
        f = float(v.detach()) if torch.is_tensor(v) else float(v)
        if math.isnan(f) or math.isinf(f):
            raise NumericError(f"{name} loss is {f}")
        values[name] = f
    total = weights.a * mse + weights.b * gan + weights.c * ce
    breakdown = LossBreakdown(
        mse=values["mse"],
        gan=values["gan"],
        ce=values["ce"],
        total=weights.a * values["mse"] + weights.b * values["gan"] + weights.c * values["ce"],
        weights=weights,
    )
    return total, breakdown

"""Tiny labeled dataset: one colored geometric shape per image on a textured background.

The class is the shape kind. Image ``i`` of class ``c`` is drawn entirely
from ``np.random.default_rng([seed, c, i])``.
"""
from __future__ import annotations

import os

import numpy as np

from .data import LabeledImage
from .images import save_image

SHAPES = ("circle", "square", "triangle", "cross", "ring", "diamond", "hbar", "vbar")


def _background(rng, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / size
    base = rng.uniform(0.15, 0.85, size=3)
    tilt = rng.uniform(-0.25, 0.25, size=(2, 3))
    img = base + yy[..., None] * tilt[0] + xx[..., None] * tilt[1]
    # stripes + smooth blotches give local contrast worth restoring
    freq = rng.uniform(4, 14)
    angle = rng.uniform(0, np.pi)
    stripes = np.sin(2 * np.pi * freq * (xx * np.cos(angle) + yy * np.sin(angle)))
    img = img + 0.12 * stripes[..., None] * rng.uniform(0.3, 1.0, size=3)
    coarse = rng.normal(0, 1, size=(8, 8, 3))
    blotch = np.kron(coarse, np.ones((size // 8 + 1, size // 8 + 1, 1)))[:size, :size]
    return img + 0.06 * blotch


def _mask(kind: str, rng, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    r = rng.uniform(0.18, 0.32) * size
    cy, cx = rng.uniform(r + 2, size - r - 2, size=2)
    dy, dx = yy - cy, xx - cx
    if kind == "circle":
        return dx ** 2 + dy ** 2 <= r ** 2
    if kind == "square":
        return (np.abs(dx) <= r * 0.85) & (np.abs(dy) <= r * 0.85)
    if kind == "triangle":
        return (dy <= r * 0.8) & (dy >= -r) & (np.abs(dx) <= (dy + r) * 0.6)
    if kind == "cross":
        w = r * 0.3
        return ((np.abs(dx) <= w) & (np.abs(dy) <= r)) | ((np.abs(dy) <= w) & (np.abs(dx) <= r))
    if kind == "ring":
        d2 = dx ** 2 + dy ** 2
        return (d2 <= r ** 2) & (d2 >= (0.55 * r) ** 2)
    if kind == "diamond":
        return np.abs(dx) + np.abs(dy) <= r
    if kind == "hbar":
        return (np.abs(dx) <= r) & (np.abs(dy) <= r * 0.3)
    if kind == "vbar":
        return (np.abs(dy) <= r) & (np.abs(dx) <= r * 0.3)
    raise ValueError(f"unknown shape {kind!r}")


def render_shape(kind: str, rng, size: int = 256) -> np.ndarray:
    img = _background(rng, size)
    color = rng.uniform(0, 1, size=3)
    color[rng.integers(3)] = rng.uniform(0.0, 0.2)  # keep it saturated
    mask = _mask(kind, rng, size)
    img[mask] = color
    return np.clip(img, 0.0, 1.0)


def make_shapes_dataset(out_dir, classes: int = 4, per_class: int = 32, size: int = 256, seed: int = 0):
    """Write ``out_dir/<shape>/<i>.png`` and return (LabeledImage list, class names)."""
    if not 2 <= classes <= len(SHAPES):
        raise ValueError(f"classes must be in [2, {len(SHAPES)}]")
    names = list(SHAPES[:classes])
    items = []
    for label, name in enumerate(names):
        for i in range(per_class):
            rng = np.random.default_rng([int(seed), label, i])
            path = os.path.join(out_dir, name, f"{i:03d}.png")
            save_image(path, render_shape(name, rng, size))
            items.append(LabeledImage(f"{name}/{i:03d}", path, label))
    return items, names

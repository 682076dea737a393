"""Hazy image synthesis with the atmospheric scattering model.

A hazy observation is a per-pixel blend of the clear scene and the airlight,

    I(x) = J(x) * t(x) + A * (1 - t(x)),    t(x) = exp(-beta * d(x)),

with images stored as H x W x 3 float arrays in [0, 1].
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import LabeledImage, PairedSample, write_manifest
from .errors import DatasetError, InvalidParameterError, ShapeError
from .images import load_image, save_image

log = logging.getLogger(__name__)

DEPTH_MODES = ("constant", "map")


@dataclass
class HazeParams:
    """Synthesis settings.

    ``airlight=None`` draws A per image, one uniform value per channel in
    ``airlight_range``; a float or 3-tuple fixes it. ``depth_mode="map"`` reads
    ``<depth_dir>/<identity_key>.npy`` instead of drawing a constant depth.
    """

    beta: float = 2.0
    airlight: float | tuple[float, float, float] | None = None
    airlight_range: tuple[float, float] = (0.7, 1.0)
    depth_mode: str = "constant"
    depth_range: tuple[float, float] = (0.1, 1.0)
    depth_dir: str | None = None
    rng_seed: int = 0

    def __post_init__(self):
        if not np.isfinite(self.beta) or self.beta < 0:
            raise InvalidParameterError(f"beta must be >= 0, got {self.beta}")
        if self.depth_mode not in DEPTH_MODES:
            raise InvalidParameterError(f"depth_mode must be one of {DEPTH_MODES}, got {self.depth_mode!r}")
        if self.depth_mode == "map" and not self.depth_dir:
            raise InvalidParameterError("depth_mode='map' needs depth_dir")
        lo, hi = self.depth_range
        if not 0 <= lo <= hi:
            raise InvalidParameterError(f"bad depth_range {self.depth_range}")
        lo, hi = self.airlight_range
        if not 0 <= lo <= hi <= 1:
            raise InvalidParameterError(f"bad airlight_range {self.airlight_range}")
        if self.airlight is not None:
            _check_airlight(self.airlight)

    def to_dict(self) -> dict:
        airlight = self.airlight
        if isinstance(airlight, (tuple, list)):
            airlight = [float(a) for a in airlight]
        return {
            "beta": float(self.beta),
            "airlight": airlight,
            "airlight_range": [float(v) for v in self.airlight_range],
            "depth_mode": self.depth_mode,
            "depth_range": [float(v) for v in self.depth_range],
            "depth_dir": self.depth_dir,
            "rng_seed": int(self.rng_seed),
        }


def _check_airlight(airlight) -> np.ndarray:
    a = np.broadcast_to(np.asarray(airlight, dtype=np.float64), (3,)).copy()
    if not np.all((a >= 0) & (a <= 1)):
        raise InvalidParameterError(f"airlight components must lie in [0, 1], got {a.tolist()}")
    return a


def transmission_from_depth(depth, beta: float) -> np.ndarray:
    """Return ``exp(-beta * depth)`` elementwise."""
    depth = np.asarray(depth, dtype=np.float64)
    if not np.isfinite(beta) or beta < 0:
        raise InvalidParameterError(f"beta must be >= 0, got {beta}")
    if np.any(depth < 0) or not np.all(np.isfinite(depth)):
        raise InvalidParameterError("depth values must be finite and >= 0")
    return np.exp(-beta * depth)


def apply_scattering(clear, t, airlight) -> np.ndarray:
    """Blend a clear H x W x 3 image toward the airlight by transmission ``t``.

    ``t`` may be an H x W map or a scalar (constant transmission).
    """
    clear = np.asarray(clear, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if clear.ndim != 3 or clear.shape[2] != 3:
        raise ShapeError(f"clear image must be H x W x 3, got {clear.shape}")
    if t.ndim == 3 and t.shape[2] == 1:
        t = t[..., 0]
    if t.ndim not in (0, 2) or (t.ndim == 2 and t.shape != clear.shape[:2]):
        raise ShapeError(f"transmission shape {t.shape} does not match image {clear.shape[:2]}")
    a = _check_airlight(airlight)
    if t.ndim == 2:
        t = t[..., None]
    return clear * t + a * (1.0 - t)


def invert_scattering(hazy, t, airlight) -> np.ndarray:
    """Recover the clear image from a hazy one given the true ``t`` and A."""
    hazy = np.asarray(hazy, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 2:
        t = t[..., None]
    a = _check_airlight(airlight)
    return (hazy - a * (1.0 - t)) / t


def draw_haze(params: HazeParams, index: int) -> tuple[float | None, np.ndarray]:
    """Draw (constant depth, airlight) for item ``index``.

    Each item gets its own generator seeded with ``[rng_seed, index]``, so
    serial and parallel runs agree. Draw order: one depth uniform (constant
    mode only), then three airlight uniforms (random-airlight only).
    """
    rng = np.random.default_rng([int(params.rng_seed), int(index)])
    depth = None
    if params.depth_mode == "constant":
        depth = float(rng.uniform(*params.depth_range))
    if params.airlight is None:
        airlight = rng.uniform(params.airlight_range[0], params.airlight_range[1], size=3)
    else:
        airlight = _check_airlight(params.airlight)
    return depth, airlight


def synthesize_pairs(
    clear_dataset: Sequence[LabeledImage],
    params: HazeParams,
    out_dir: str | os.PathLike | None = None,
    class_names: Sequence[str] | None = None,
) -> list[PairedSample]:
    """Make one hazy image per clear image.

    Items are processed in identity-key order; an item's index in that order
    feeds :func:`draw_haze`. Unreadable images are skipped with a warning.
    With ``out_dir`` set, hazy PNGs go to ``out_dir/hazy/<key>.png`` and a
    ``manifest.json`` is written next to them.
    """
    if not clear_dataset:
        raise DatasetError("no clear images to synthesize from")
    items = sorted(clear_dataset, key=lambda s: s.identity_key)
    keys = [s.identity_key for s in items]
    if len(set(keys)) != len(keys):
        raise DatasetError("duplicate identity keys in clear dataset")

    pairs = []
    for index, item in enumerate(items):
        try:
            clear = load_image(item.path)
        except (OSError, ValueError) as exc:
            log.warning("skipping %s: cannot read %s (%s)", item.identity_key, item.path, exc)
            continue
        depth, airlight = draw_haze(params, index)
        depth_map_path = None
        if params.depth_mode == "constant":
            hazy = apply_scattering(clear, transmission_from_depth(depth, params.beta), airlight)
        else:
            depth_map_path = os.path.join(params.depth_dir, item.identity_key + ".npy")
            try:
                t = transmission_from_depth(np.load(depth_map_path), params.beta)
                hazy = apply_scattering(clear, t, airlight)
            except (OSError, ValueError) as exc:
                log.warning("skipping %s: bad depth map %s (%s)", item.identity_key, depth_map_path, exc)
                continue
        pairs.append(
            PairedSample(
                identity_key=item.identity_key,
                hazy=hazy,
                clear=clear,
                label=item.label,
                clear_path=str(item.path),
                subset=item.subset,
                haze={
                    "beta": float(params.beta),
                    "depth": depth,
                    "depth_map": depth_map_path,
                    "airlight": [float(a) for a in airlight],
                },
            )
        )
    if not pairs:
        raise DatasetError("every clear image failed to load; nothing synthesized")

    if out_dir is not None:
        hazy_dir = os.path.join(out_dir, "hazy")
        for pair in pairs:
            path = os.path.join(hazy_dir, pair.identity_key + ".png")
            save_image(path, pair.hazy)
            pair.hazy_path = path
        write_manifest(os.path.join(out_dir, "manifest.json"), pairs, params.to_dict(), class_names)
    return pairs

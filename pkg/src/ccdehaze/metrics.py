"""PSNR, SSIM and top-1 accuracy on H x W x 3 float images in [0, 1].

Everything runs in float64 numpy so results are reproducible bit for bit.

SSIM definition used here: per channel, local statistics come from an 11 x 11
Gaussian window (sigma 1.5, weights normalized to 1) applied separably over
all fully-contained window positions ("valid" mode, no padding). With K1 =
0.01, K2 = 0.03 and peak 1, C1 = K1**2 and C2 = K2**2,

    ssim_map = (2 mu_x mu_y + C1)(2 cov_xy + C2) / ((mu_x^2 + mu_y^2 + C1)(var_x + var_y + C2))

where var and cov are E[xy] - E[x]E[y] under the window. The score is the
mean of the map per channel, averaged over channels. An image smaller than
11 pixels on a side uses a k x k window, k = min(H, W), holding the central k
taps of the 11-tap profile renormalized to sum 1.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass
class MetricReport:
    psnr: float
    ssim: float
    accuracy: float | None
    sample_count: int

    def to_dict(self) -> dict:
        return asdict(self)


def _pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"shape mismatch: {x.shape} vs {y.shape}")
    if x.ndim == 2:
        x, y = x[..., None], y[..., None]
    if x.ndim != 3:
        raise ShapeError(f"expected H x W x C images, got {x.shape}")
    return x, y


def psnr(x, y, peak: float = 1.0) -> float:
    x, y = _pair(x, y)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(peak ** 2 / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """1-D taps: the central ``size`` taps of the 11-tap profile, summing to 1."""
    full = np.arange(SSIM_WINDOW, dtype=np.float64) - (SSIM_WINDOW - 1) / 2
    g = np.exp(-(full ** 2) / (2 * sigma ** 2))
    start = (SSIM_WINDOW - size) // 2
    g = g[start:start + size]
    return g / g.sum()


def _filter_valid(img: np.ndarray, taps: np.ndarray) -> np.ndarray:
    k = len(taps)
    rows = sliding_window_view(img, k, axis=0) @ taps
    return sliding_window_view(rows, k, axis=1) @ taps


def ssim(x, y, peak: float = 1.0) -> float:
    x, y = _pair(x, y)
    k = min(SSIM_WINDOW, x.shape[0], x.shape[1])
    taps = gaussian_window(k)
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    scores = []
    for ch in range(x.shape[2]):
        a, b = x[..., ch], y[..., ch]
        mu_a, mu_b = _filter_valid(a, taps), _filter_valid(b, taps)
        var_a = _filter_valid(a * a, taps) - mu_a ** 2
        var_b = _filter_valid(b * b, taps) - mu_b ** 2
        cov = _filter_valid(a * b, taps) - mu_a * mu_b
        num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
        den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
        scores.append(float(np.mean(num / den)))
    return float(np.mean(scores))


def top1_accuracy(predictions, truths) -> float:
    predictions = np.asarray(predictions)
    truths = np.asarray(truths)
    if predictions.shape != truths.shape:
        raise ShapeError(f"length mismatch: {predictions.shape} vs {truths.shape}")
    if predictions.size == 0:
        raise ShapeError("accuracy of an empty prediction list is undefined")
    return 100.0 * float(np.sum(predictions == truths)) / predictions.size

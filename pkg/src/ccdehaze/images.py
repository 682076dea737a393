"""8-bit image file I/O and conversions between H x W x 3 arrays and NCHW tensors."""
from __future__ import annotations

import os

import numpy as np
import torch
from PIL import Image


def load_image(path, size: int | None = None) -> np.ndarray:
    """Read an image as float64 H x W x 3 in [0, 1].

    With ``size`` set the whole image is bilinearly resized to size x size
    (no cropping).
    """
    with Image.open(path) as im:
        im = im.convert("RGB")
        if size is not None and im.size != (size, size):
            im = im.resize((size, size), Image.BILINEAR)
        return np.asarray(im, dtype=np.float64) / 255.0


def to_uint8(image) -> np.ndarray:
    return np.round(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(path, image) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    Image.fromarray(to_uint8(image)).save(path, format="PNG")


def resize_image(image, height: int, width: int) -> np.ndarray:
    """Bilinear resize of a float image via its 8-bit representation."""
    im = Image.fromarray(to_uint8(image))
    if im.size != (width, height):
        im = im.resize((width, height), Image.BILINEAR)
    return np.asarray(im, dtype=np.float64) / 255.0


def to_tensor(images, dtype=torch.float32) -> torch.Tensor:
    """Stack H x W x 3 arrays (or one array) into an N x 3 x H x W tensor."""
    arr = np.asarray(images)
    if arr.ndim == 3:
        arr = arr[None]
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2))).to(dtype)


def from_tensor(batch: torch.Tensor) -> np.ndarray:
    """N x 3 x H x W tensor to an N x H x W x 3 float64 array."""
    return batch.detach().to(torch.float64).permute(0, 2, 3, 1).cpu().numpy()

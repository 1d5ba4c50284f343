"""Bilinear resampling with half-pixel-center sampling and edge clamping."""

from __future__ import annotations

import numpy as np


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resample the last two axes of ``img`` to (out_h, out_w)."""
    h, w = img.shape[-2:]
    if (h, w) == (out_h, out_w):
        return img.copy()
    sy = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    sx = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    ty = sy - y0
    tx = sx - x0
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    arr = np.asarray(img, dtype=np.float64)
    top = arr[..., y0c[:, None], x0c[None, :]] * (1 - tx) + arr[..., y0c[:, None], x1c[None, :]] * tx
    bot = arr[..., y1c[:, None], x0c[None, :]] * (1 - tx) + arr[..., y1c[:, None], x1c[None, :]] * tx
    return top * (1 - ty)[:, None] + bot * ty[:, None]

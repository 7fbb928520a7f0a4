"""Bilinear sampling and resizing on plain 2-D arrays.

Resizing uses the half-pixel-centers convention: output pixel o samples the
input at (o + 0.5) * scale - 0.5 with coordinates clamped to the valid
range, so a 2x2 average reduces to the block mean.
"""

from __future__ import annotations

import numpy as np


def bilinear_sample(image, rows, cols):
    """Sample ``image`` at float (row, col) positions, clamped at the edges.

    rows/cols are broadcast against each other; the result has their shape.
    """
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    rows = np.clip(np.asarray(rows, dtype=np.float64), 0.0, h - 1.0)
    cols = np.clip(np.asarray(cols, dtype=np.float64), 0.0, w - 1.0)
    r0 = np.floor(rows).astype(np.int64)
    c0 = np.floor(cols).astype(np.int64)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = rows - r0
    fc = cols - c0
    top = image[r0, c0] * (1.0 - fc) + image[r0, c1] * fc
    bot = image[r1, c0] * (1.0 - fc) + image[r1, c1] * fc
    return top * (1.0 - fr) + bot * fr


def bilinear_resize(image, out_h, out_w):
    """Resize a 2-D array with bilinear interpolation (half-pixel centers)."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    if out_h < 1 or out_w < 1:
        raise ValueError(f"bad output size {(out_h, out_w)}")
    sr = h / out_h
    sc = w / out_w
    rows = (np.arange(out_h) + 0.5) * sr - 0.5
    cols = (np.arange(out_w) + 0.5) * sc - 0.5
    return bilinear_sample(image, rows[:, None], cols[None, :])

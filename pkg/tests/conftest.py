import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def horizontal_bar_mask(h, w, row_lo, row_hi, col_lo, col_hi):
    """Filled axis-aligned bar, rows [row_lo, row_hi] x cols [col_lo, col_hi]."""
    mask = np.zeros((h, w), dtype=np.uint8)
    mask[row_lo : row_hi + 1, col_lo : col_hi + 1] = 1
    return mask


def brute_force_distance_to_background(mask):
    """Oracle: per-pixel min Euclidean distance to a background pixel center.

    Exhaustive pairwise scan; only usable on small masks.
    """
    mask = np.asarray(mask)
    out = np.zeros(mask.shape, dtype=np.float64)
    fg = np.argwhere(mask != 0)
    bg = np.argwhere(mask == 0)
    if fg.size == 0 or bg.size == 0:
        return out
    for r, c in fg:
        d2 = (bg[:, 0] - r) ** 2 + (bg[:, 1] - c) ** 2
        out[r, c] = np.sqrt(d2.min())
    return out


def brute_force_nearest_centerline_u(mask, points, cum_arclen):
    """Oracle: per foreground pixel, arc length of the closest point."""
    mask = np.asarray(mask)
    out = np.zeros(mask.shape, dtype=np.float64)
    for r, c in np.argwhere(mask != 0):
        d2 = (points[:, 0] - r) ** 2 + (points[:, 1] - c) ** 2
        out[r, c] = cum_arclen[np.argmin(d2)]
    return out

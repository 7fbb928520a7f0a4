"""Warping a worm into its canonical straightened pose.

Straightening inverse-maps each canonical cell (column = arc length u,
row = signed cross-body offset v) to the image point c(u) + v * n(u) and
samples bilinearly, which is hole-free by construction. When only a
predicted UV field is available, a centerline is first recovered as the
per-U ridge of the side-to-centerline V field.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AmbiguousOrientationError, DegenerateGeometryError
from .geometry import Centerline, resample_arclength
from .imageops import bilinear_sample


@dataclass(frozen=True)
class CanonicalGrid:
    """Target raster: length_px columns, 2 * halfwidth_px + 1 rows."""

    length_px: int
    halfwidth_px: int
    step: float = 1.0  # pixels of arc length per column

    def __post_init__(self):
        if self.length_px < 2:
            raise ValueError(f"length_px must be >= 2, got {self.length_px}")
        if self.halfwidth_px < 1:
            raise ValueError(f"halfwidth_px must be >= 1, got {self.halfwidth_px}")
        if self.step <= 0:
            raise ValueError(f"step must be positive, got {self.step}")

    @property
    def shape(self):
        return (2 * self.halfwidth_px + 1, self.length_px)


def straighten(image, cl, mask, grid):
    """Resample ``image`` into the canonical grid along centerline ``cl``.

    Cells whose source point falls outside ``mask`` are set to 0 rather
    than extrapolated.
    """
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask)
    if not mask.any():
        raise DegenerateGeometryError("cannot straighten with an empty mask")
    u = np.arange(grid.length_px, dtype=np.float64) * grid.step
    v = np.arange(grid.shape[0], dtype=np.float64) - grid.halfwidth_px
    centers = cl.point_at(u)  # (L, 2)
    normals = cl.normal_at(u)  # (L, 2)
    pos = centers[None, :, :] + v[:, None, None] * normals[None, :, :]
    rows, cols = pos[..., 0], pos[..., 1]
    out = bilinear_sample(image, rows, cols)
    inside = bilinear_sample(mask.astype(np.float64), rows, cols) > 0.5
    out[~inside] = 0.0
    return out


def orient_head_tail(cl, u_field, mask, rel_tol=0.05, probe_radius=3.0):
    """Return ``cl`` oriented so its last point sits at the high-U (head) end.

    U is averaged over mask pixels within ``probe_radius`` of each endpoint;
    an end separation below ``rel_tol`` of the body length is ambiguous.
    """
    mask = np.asarray(mask)
    rr, cc = np.nonzero(mask)
    if rr.size == 0:
        raise DegenerateGeometryError("cannot orient with an empty mask")
    u_field = np.asarray(u_field, dtype=np.float64)
    coords = np.stack([rr, cc], axis=1).astype(np.float64)

    def probe(point):
        d = np.linalg.norm(coords - point, axis=1)
        radius = probe_radius
        near = d <= radius
        while not near.any():
            radius *= 2.0
            near = d <= radius
        return float(u_field[rr[near], cc[near]].mean())

    u_first = probe(cl.points[0])
    u_last = probe(cl.points[-1])
    if abs(u_last - u_first) < rel_tol * cl.total_length:
        raise AmbiguousOrientationError(
            f"end U values {u_first:.2f} and {u_last:.2f} too close to orient "
            f"(body length {cl.total_length:.2f})"
        )
    return cl if u_last > u_first else cl.reversed()


def side_sign(cl, points):
    """Which side of the centerline each (row, col) point lies on.

    Sign of cross(tangent, p - c) at the nearest centerline sample; +1 on
    the normal side, -1 opposite, 0 on the line.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    d2 = ((points[:, None, :] - cl.points[None, :, :]) ** 2).sum(axis=2)
    idx = np.argmin(d2, axis=1)
    rel = points - cl.points[idx]
    t = cl.tangents[idx]
    cross = t[:, 0] * rel[:, 1] - t[:, 1] * rel[:, 0]
    return np.sign(cross)


def centerline_from_uv(u_field, v_field, mask, n=256, bin_width=2.0, smooth_taps=5):
    """Recover a centerline from a (possibly predicted) UV field.

    The ridge of the side-to-centerline V field is taken per U bin (argmax
    of V), smoothed with a short moving average, and resampled to uniform
    arc length. The result runs from low to high U (tail to head).
    """
    mask = np.asarray(mask)
    rr, cc = np.nonzero(mask)
    if rr.size == 0:
        raise DegenerateGeometryError("cannot extract a centerline from an empty mask")
    u = np.asarray(u_field, dtype=np.float64)[rr, cc]
    v = np.asarray(v_field, dtype=np.float64)[rr, cc]
    u_max = float(u.max())
    if u_max <= bin_width:
        raise DegenerateGeometryError("predicted U range too small for ridge extraction")
    n_bins = max(2, int(np.ceil(u_max / bin_width)))
    which = np.clip((u / u_max * n_bins).astype(np.int64), 0, n_bins - 1)
    ridge = []
    for b in range(n_bins):
        sel = which == b
        if not sel.any():
            continue
        k = np.argmax(v[sel])
        ridge.append((rr[sel][k], cc[sel][k]))
    if len(ridge) < 2:
        raise DegenerateGeometryError("ridge extraction found fewer than 2 points")
    ridge = np.asarray(ridge, dtype=np.float64)
    if smooth_taps > 1 and len(ridge) > smooth_taps:
        kernel = np.ones(smooth_taps) / smooth_taps
        pad = smooth_taps // 2
        padded = np.pad(ridge, ((pad, pad), (0, 0)), mode="edge")
        ridge = np.stack(
            [np.convolve(padded[:, j], kernel, mode="valid") for j in range(2)], axis=1
        )
    # collapse consecutive duplicates (argmax can repeat a pixel)
    keep = np.ones(len(ridge), dtype=bool)
    keep[1:] = np.linalg.norm(np.diff(ridge, axis=0), axis=1) > 1e-9
    ridge = ridge[keep]
    if len(ridge) < 2:
        raise DegenerateGeometryError("ridge extraction collapsed to a single point")
    return resample_arclength(ridge, n)

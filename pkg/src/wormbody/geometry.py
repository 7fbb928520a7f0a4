"""Per-pixel body coordinates from a centerline and a mask.

The U coordinate of a worm pixel is the arc length (in pixels, tail = 0) of
the nearest centerline sample. The V coordinate has three representations:

  * ``left_to_right``: signed offset across the body shifted so the left
    boundary is 0 and the right boundary is the local width,
  * ``centerline_to_side``: a fixed maximum on the centerline falling
    linearly to 0 at the boundary,
  * ``side_to_centerline``: Euclidean distance to the nearest background
    pixel (the representation used by the trained models).

All coordinates are in image pixels. Points are (row, col); the in-plane
rotation convention treats col as x and row as y, so for a centerline
running in the +col direction its +90-degree normal points toward +row.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import ndimage

from .errors import DegenerateGeometryError


class VMode(Enum):
    LEFT_TO_RIGHT = "left_to_right"
    CENTERLINE_TO_SIDE = "centerline_to_side"
    SIDE_TO_CENTERLINE = "side_to_centerline"


@dataclass(frozen=True)
class Centerline:
    """Arc-length parameterized polyline from tail to head.

    points: (n, 2) float64 (row, col)
    cum_arclen: (n,) cumulative arc length, 0 at the tail
    tangents / normals: (n, 2) unit vectors; normal = tangent rotated +90
    degrees in (col=x, row=y) coordinates.
    """

    points: np.ndarray
    cum_arclen: np.ndarray
    tangents: np.ndarray
    normals: np.ndarray

    @property
    def total_length(self):
        return float(self.cum_arclen[-1])

    def reversed(self):
        """The same curve traversed head to tail (endpoints swapped)."""
        pts = self.points[::-1].copy()
        arc = self.cum_arclen[-1] - self.cum_arclen[::-1]
        return Centerline(pts, arc.copy(), -self.tangents[::-1].copy(), -self.normals[::-1].copy())

    def point_at(self, u):
        """Linear interpolation of position at arc length u (clamped)."""
        u = np.asarray(u, dtype=np.float64)
        r = np.interp(u, self.cum_arclen, self.points[:, 0])
        c = np.interp(u, self.cum_arclen, self.points[:, 1])
        return np.stack([r, c], axis=-1)

    def normal_at(self, u):
        """Unit normal at arc length u, interpolated and renormalized."""
        u = np.asarray(u, dtype=np.float64)
        nr = np.interp(u, self.cum_arclen, self.normals[:, 0])
        nc = np.interp(u, self.cum_arclen, self.normals[:, 1])
        n = np.stack([nr, nc], axis=-1)
        norm = np.linalg.norm(n, axis=-1, keepdims=True)
        return n / np.maximum(norm, 1e-12)


@dataclass(frozen=True)
class UVField:
    """Paired per-pixel U and V rasters plus validity mask."""

    u: np.ndarray
    v: np.ndarray
    valid: np.ndarray
    representation: VMode

    def u_as_percent_body_length(self, total_length):
        """U converted from pixels to percent of body length."""
        if total_length <= 0:
            raise DegenerateGeometryError("total body length must be positive")
        return self.u * (100.0 / total_length)


def _as_binary_mask(mask):
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    values = np.unique(mask)
    if not np.all(np.isin(values, (0, 1))):
        raise ValueError("mask must contain only {0, 1}")
    return mask.astype(np.uint8)


def resample_arclength(polyline, n):
    """Resample a polyline to n points uniformly spaced in arc length.

    Tangents use central differences (one-sided at the endpoints); normals
    are the tangents rotated +90 degrees. Total length is preserved because
    the resampled points lie on the original polyline.
    """
    polyline = np.asarray(polyline, dtype=np.float64)
    if polyline.ndim != 2 or polyline.shape[1] != 2 or polyline.shape[0] < 2:
        raise ValueError(f"polyline must be (m>=2, 2), got shape {polyline.shape}")
    if n < 2:
        raise ValueError(f"need n >= 2 resampled points, got {n}")
    seg = np.linalg.norm(np.diff(polyline, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total <= 0.0:
        raise DegenerateGeometryError("polyline has zero total length")
    u = np.linspace(0.0, total, n)
    pts = np.stack(
        [np.interp(u, cum, polyline[:, 0]), np.interp(u, cum, polyline[:, 1])], axis=1
    )
    tangents = np.empty_like(pts)
    tangents[1:-1] = pts[2:] - pts[:-2]
    tangents[0] = pts[1] - pts[0]
    tangents[-1] = pts[-1] - pts[-2]
    norms = np.linalg.norm(tangents, axis=1, keepdims=True)
    tangents = tangents / np.maximum(norms, 1e-12)
    # +90 degrees with col as x and row as y: (x, y) -> (-y, x)
    normals = np.stack([tangents[:, 1], -tangents[:, 0]], axis=1)
    arclen = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
    return Centerline(pts, arclen, tangents, normals)


def distance_to_boundary(mask):
    """Exact Euclidean distance (pixels) to the nearest background pixel.

    Background pixels get 0; a lone foreground pixel gets 1. Distances are
    measured between pixel centers.
    """
    mask = _as_binary_mask(mask)
    if not mask.any():
        return np.zeros(mask.shape, dtype=np.float64)
    return ndimage.distance_transform_edt(mask).astype(np.float64)


def _nearest_centerline_index(coords, cl, chunk=4096):
    """Index of the nearest centerline sample per (row, col) coordinate."""
    pts = cl.points
    out = np.empty(len(coords), dtype=np.int64)
    for start in range(0, len(coords), chunk):
        block = coords[start : start + chunk]
        d2 = ((block[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
        out[start : start + chunk] = np.argmin(d2, axis=1)
    return out


def compute_u_field(mask, cl):
    """Arc length of the nearest centerline sample, per mask pixel."""
    mask = _as_binary_mask(mask)
    rr, cc = np.nonzero(mask)
    if rr.size == 0:
        raise DegenerateGeometryError("cannot compute U field for an empty mask")
    coords = np.stack([rr, cc], axis=1).astype(np.float64)
    idx = _nearest_centerline_index(coords, cl)
    u = np.zeros(mask.shape, dtype=np.float64)
    u[rr, cc] = cl.cum_arclen[idx]
    return u


def _local_halfwidths(mask, cl):
    """Half-width at each centerline sample, read off the distance transform."""
    from .imageops import bilinear_sample

    edt = distance_to_boundary(mask)
    return bilinear_sample(edt, cl.points[:, 0], cl.points[:, 1])


def compute_v_field(mask, cl, mode, v_max=None):
    """Cross-body V coordinate under the requested representation.

    ``v_max`` applies to ``centerline_to_side`` only and defaults to the
    maximum local half-width of this worm.
    """
    mask = _as_binary_mask(mask)
    if not isinstance(mode, VMode):
        raise ValueError(f"unknown V representation: {mode!r}")
    if not mask.any():
        raise DegenerateGeometryError("cannot compute V field for an empty mask")

    if mode is VMode.SIDE_TO_CENTERLINE:
        return distance_to_boundary(mask)

    rr, cc = np.nonzero(mask)
    coords = np.stack([rr, cc], axis=1).astype(np.float64)
    idx = _nearest_centerline_index(coords, cl)
    halfwidths = _local_halfwidths(mask, cl)
    v = np.zeros(mask.shape, dtype=np.float64)

    if mode is VMode.LEFT_TO_RIGHT:
        offset = ((coords - cl.points[idx]) * cl.normals[idx]).sum(axis=1)
        local_half = halfwidths[idx]
        vals = np.clip(offset + local_half, 0.0, 2.0 * local_half)
        v[rr, cc] = vals
        return v

    # centerline_to_side
    if v_max is None:
        v_max = float(halfwidths.max())
    if v_max <= 0:
        raise ValueError(f"v_max must be positive, got {v_max}")
    d_center = np.linalg.norm(coords - cl.points[idx], axis=1)
    local_half = np.maximum(halfwidths[idx], 1e-6)
    vals = np.clip(v_max * (1.0 - d_center / local_half), 0.0, v_max)
    v[rr, cc] = vals
    return v


def build_uv_field(mask, cl, mode=VMode.SIDE_TO_CENTERLINE, v_max=None):
    """Convenience constructor for the full UVField of a worm."""
    mask = _as_binary_mask(mask)
    return UVField(
        u=compute_u_field(mask, cl),
        v=compute_v_field(mask, cl, mode, v_max=v_max),
        valid=mask.copy(),
        representation=mode,
    )

"""Coarse-to-fine orchestration and the feature-masking input modes.

The full pipeline mirrors the three-model chain: a coarse segmenter on the
downsized image locates the worm, the crop at original scale feeds the fine
mask/UV model, the UV prediction drives straightening, and the age model
reads the crop under the configured input mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import WormNotFoundError
from .imageops import bilinear_resize
from .straighten import CanonicalGrid, centerline_from_uv, orient_head_tail, straighten


class MaskMode(Enum):
    RAW_IMAGE = "raw_image"
    WORM_ONLY = "worm_only"
    BACKGROUND = "background"
    SILHOUETTE = "silhouette"
    SILHOUETTE_PLUS_BG = "silhouette_bg"


@dataclass(frozen=True)
class CropWindow:
    top: int
    left: int
    side: int

    def slices(self):
        return slice(self.top, self.top + self.side), slice(self.left, self.left + self.side)


def downsample_to_coarse(image, coarse_hw):
    """Bilinear resize to the coarse square; returns per-axis scale factors
    (original / coarse) for mapping detections back."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    ch, cw = coarse_hw
    if h < ch or w < cw:
        raise ValueError(f"image {image.shape} smaller than coarse size {coarse_hw}")
    coarse = bilinear_resize(image, ch, cw)
    return coarse, (h / ch, w / cw)


def locate_crop(coarse_prob, threshold, scale_factors, orig_hw, crop_size):
    """Square window at original scale centered on the detected worm.

    The probability map is binarized at ``threshold``; the window is
    centered on the foreground centroid mapped through the scale factors
    and clamped inside the image.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    prob = np.asarray(coarse_prob, dtype=np.float64)
    fg = prob > threshold
    if not fg.any():
        raise WormNotFoundError(f"no pixel above threshold {threshold}")
    h, w = orig_hw
    if crop_size > h or crop_size > w:
        raise ValueError(f"crop size {crop_size} exceeds image {orig_hw}")
    rows, cols = np.nonzero(fg)
    sr, sc = scale_factors
    center_r = rows.mean() * sr
    center_c = cols.mean() * sc
    top = int(round(center_r - crop_size / 2.0))
    left = int(round(center_c - crop_size / 2.0))
    top = min(max(top, 0), h - crop_size)
    left = min(max(left, 0), w - crop_size)
    return CropWindow(top=top, left=left, side=crop_size)


def crop_image(image, window):
    rs, cs = window.slices()
    return np.asarray(image)[rs, cs].copy()


def apply_feature_mask(image, mask, mode, seed=0, attempts=200):
    """Rewrite the input under one of the five ablation modes.

    ``background`` pastes a seeded random square (half the image side) with
    zero worm overlap onto a black canvas at its original location; if no
    such square exists after ``attempts`` tries, worm pixels are replaced
    by the median background intensity instead.
    """
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask)
    if image.shape != mask.shape:
        raise ValueError(f"image {image.shape} and mask {mask.shape} differ")
    if not isinstance(mode, MaskMode):
        raise ValueError(f"unknown mask mode: {mode!r}")
    fg = mask != 0

    if mode is MaskMode.RAW_IMAGE:
        return image.copy()
    if mode is MaskMode.WORM_ONLY:
        return np.where(fg, image, 0.0)
    if mode is MaskMode.SILHOUETTE:
        return fg.astype(np.float64)
    if mode is MaskMode.SILHOUETTE_PLUS_BG:
        return np.where(fg, 1.0, image)

    # background
    h, w = image.shape
    patch = max(1, min(h, w) // 2)
    rng = np.random.default_rng(seed)
    for _ in range(attempts):
        top = int(rng.integers(0, h - patch + 1))
        left = int(rng.integers(0, w - patch + 1))
        if not fg[top : top + patch, left : left + patch].any():
            out = np.zeros_like(image)
            out[top : top + patch, left : left + patch] = image[
                top : top + patch, left : left + patch
            ]
            return out
    background = image[~fg]
    fill = float(np.median(background)) if background.size else 0.0
    return np.where(fg, fill, image)


@dataclass(frozen=True)
class PipelineConfig:
    coarse_size: int = 64
    crop_size: int = 128
    threshold: float = 0.5
    mask_mode: MaskMode = MaskMode.RAW_IMAGE
    straighten_length: int = 128
    straighten_halfwidth: int = 16
    feature_seed: int = 0


@dataclass
class PipelineResult:
    """Every intermediate of a full pipeline run."""

    coarse_prob: np.ndarray
    scale_factors: tuple
    window: CropWindow
    crop: np.ndarray
    fine_mask_prob: np.ndarray
    fine_mask: np.ndarray
    u: np.ndarray
    v: np.ndarray
    straightened: np.ndarray
    age_input: np.ndarray
    age_hours: float


def _forward_single(model, image):
    """Run a model on one grayscale image (adds the batch/channel axes)."""
    x = Tensor(np.asarray(image, dtype=np.float32)[None, None])
    return model(x)


def run_full_pipeline(image, coarse_model, fine_model, age_model, cfg):
    """Image in, age out, with all intermediates exposed."""
    image = np.asarray(image, dtype=np.float64)
    coarse_model.eval()
    fine_model.eval()
    age_model.eval()

    coarse_in, scale_factors = downsample_to_coarse(image, (cfg.coarse_size, cfg.coarse_size))
    coarse_logits = _forward_single(coarse_model, coarse_in)
    coarse_prob = ad.sigmoid(coarse_logits[0]).data[0, 0].astype(np.float64)

    window = locate_crop(coarse_prob, cfg.threshold, scale_factors, image.shape, cfg.crop_size)
    crop = crop_image(image, window)

    fine_out = _forward_single(fine_model, crop)[0].data[0]
    fine_mask_prob = 1.0 / (1.0 + np.exp(-fine_out[0].astype(np.float64)))
    fine_mask = (fine_mask_prob > cfg.threshold).astype(np.uint8)
    u = fine_out[1].astype(np.float64) * fine_mask
    v = fine_out[2].astype(np.float64) * fine_mask

    cl = centerline_from_uv(u, v, fine_mask)
    cl = orient_head_tail(cl, u, fine_mask)
    grid = CanonicalGrid(cfg.straighten_length, cfg.straighten_halfwidth)
    straightened = straighten(crop, cl, fine_mask, grid)

    age_input = apply_feature_mask(crop, fine_mask, cfg.mask_mode, seed=cfg.feature_seed)
    age_hours = float(_forward_single(age_model, age_input).data[0])

    return PipelineResult(
        coarse_prob=coarse_prob,
        scale_factors=scale_factors,
        window=window,
        crop=crop,
        fine_mask_prob=fine_mask_prob,
        fine_mask=fine_mask,
        u=u,
        v=v,
        straightened=straightened,
        age_input=age_input,
        age_hours=age_hours,
    )

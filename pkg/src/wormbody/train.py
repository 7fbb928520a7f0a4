"""Training loops for the four model kinds, with seeded determinism.

Each kind prepares its own (input, target) arrays from Samples once, then
runs Adam with the halving learning-rate schedule. Per-epoch rows (epoch,
lr, train loss, val metric) are returned for the loss log; a non-finite
loss aborts with a diagnostic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, Tensor, backward, lr_schedule
from .errors import ConfigError, TrainingDivergedError
from .imageops import bilinear_resize
from .losses import (
    age_l1,
    build_multiscale_target,
    majority_downsample2x,
    masked_l1_uv,
    multiscale_bce,
    total_reg_loss,
)
from .metrics import evaluate_segmentation, evaluate_uv
from .models import NetConfig, build_model, transfer_encoder
from .pipeline import MaskMode, apply_feature_mask


@dataclass(frozen=True)
class TrainConfig:
    kind: str = "coarse"
    epochs: int = 30
    batch_size: int = 8
    lr0: float = 5e-4
    lr_half_every: int = 20
    seed: int = 0
    init_mode: str = "scratch"  # scratch | generic | uvreg
    coarse_size: int = 64
    crop_size: int = 128
    mask_mode: MaskMode = MaskMode.RAW_IMAGE
    use_pred_mask: bool = True
    denoise_sigma: float = 0.10
    net: NetConfig = field(default_factory=NetConfig)


def gt_crop_window(mask, crop_size):
    """Square window centered on the mask centroid, clamped in bounds."""
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        raise ValueError("cannot crop around an empty mask")
    h, w = mask.shape
    if crop_size > h or crop_size > w:
        raise ValueError(f"crop size {crop_size} exceeds canvas {mask.shape}")
    top = int(round(rows.mean() - crop_size / 2.0))
    left = int(round(cols.mean() - crop_size / 2.0))
    top = min(max(top, 0), h - crop_size)
    left = min(max(left, 0), w - crop_size)
    return top, left


def mask_to_coarse(mask, coarse_size):
    """Majority-downsample a canvas mask to the coarse grid (power-of-2 ratio)."""
    mask = np.asarray(mask).astype(np.uint8)
    size = mask.shape[0]
    if size % coarse_size:
        raise ValueError(f"canvas {size} not a multiple of coarse size {coarse_size}")
    ratio = size // coarse_size
    if ratio & (ratio - 1):
        raise ValueError(f"canvas/coarse ratio {ratio} must be a power of 2")
    while mask.shape[0] > coarse_size:
        mask = majority_downsample2x(mask)
    return mask


# ---------------------------------------------------------------------------
# per-kind data preparation
# ---------------------------------------------------------------------------

def prepare_coarse(samples, cfg):
    xs, pyramids = [], []
    for s in samples:
        coarse_img = bilinear_resize(s.image, cfg.coarse_size, cfg.coarse_size)
        coarse_mask = mask_to_coarse(s.mask, cfg.coarse_size)
        xs.append(coarse_img.astype(np.float32))
        pyramids.append(build_multiscale_target(coarse_mask, num_scales=cfg.net.num_scales))
    x = np.stack(xs)[:, None]
    masks = [
        np.stack([p.masks[s] for p in pyramids])[:, None] for s in range(cfg.net.num_scales)
    ]
    return x, {"masks": masks}


def prepare_fine(samples, cfg):
    xs, pyramids = [], []
    for s in samples:
        top, left = gt_crop_window(s.mask, cfg.crop_size)
        win = (slice(top, top + cfg.crop_size), slice(left, left + cfg.crop_size))
        xs.append(s.image[win].astype(np.float32))
        pyramids.append(
            build_multiscale_target(
                s.mask[win], s.uv.u[win], s.uv.v[win], num_scales=cfg.net.num_scales
            )
        )
    x = np.stack(xs)[:, None]
    S = cfg.net.num_scales
    return x, {
        "masks": [np.stack([p.masks[s] for p in pyramids])[:, None] for s in range(S)],
        "us": [np.stack([p.us[s] for p in pyramids])[:, None] for s in range(S)],
        "vs": [np.stack([p.vs[s] for p in pyramids])[:, None] for s in range(S)],
    }


def prepare_age(samples, cfg):
    xs, ages = [], []
    for s in samples:
        top, left = gt_crop_window(s.mask, cfg.crop_size)
        win = (slice(top, top + cfg.crop_size), slice(left, left + cfg.crop_size))
        masked = apply_feature_mask(
            s.image[win], s.mask[win], cfg.mask_mode, seed=s.seed & 0x7FFFFFFF
        )
        xs.append(masked.astype(np.float32))
        ages.append(s.age_hours)
    return np.stack(xs)[:, None], {"ages": np.asarray(ages, dtype=np.float32)}


def prepare_denoise(samples, cfg):
    rng = np.random.default_rng(cfg.seed + 101)
    xs, cleans = [], []
    for s in samples:
        top, left = gt_crop_window(s.mask, cfg.crop_size)
        win = (slice(top, top + cfg.crop_size), slice(left, left + cfg.crop_size))
        clean = s.image[win].astype(np.float32)
        noisy = clean + rng.normal(0.0, cfg.denoise_sigma, size=clean.shape).astype(np.float32)
        xs.append(noisy)
        cleans.append(clean)
    return np.stack(xs)[:, None], {"clean": np.stack(cleans)[:, None]}


PREPARE = {
    "coarse": prepare_coarse,
    "fine": prepare_fine,
    "age": prepare_age,
    "denoise": prepare_denoise,
}


# ---------------------------------------------------------------------------
# batch losses
# ---------------------------------------------------------------------------

def _fine_heads(outs):
    mask_probs = [ad.sigmoid(ad.slice_channels(o, 0, 1)) for o in outs]
    us = [ad.slice_channels(o, 1, 2) for o in outs]
    vs = [ad.slice_channels(o, 2, 3) for o in outs]
    return mask_probs, us, vs


def batch_loss(kind, model, x_batch, targets, idx, use_pred_mask=True):
    x = Tensor(x_batch[idx])
    if kind == "coarse":
        outs = model(x)
        probs = [ad.sigmoid(o) for o in outs]
        return multiscale_bce(probs, [m[idx] for m in targets["masks"]])
    if kind == "fine":
        outs = model(x)
        mask_probs, us, vs = _fine_heads(outs)
        masks = [m[idx] for m in targets["masks"]]
        seg = multiscale_bce(mask_probs, masks)
        pyramid = _BatchTarget(
            masks=masks,
            us=[u[idx] for u in targets["us"]],
            vs=[v[idx] for v in targets["vs"]],
        )
        lu, lv = masked_l1_uv(us, vs, mask_probs if use_pred_mask else None, pyramid)
        return total_reg_loss(lu, lv, seg)
    if kind == "age":
        pred = model(x)
        return age_l1(pred, targets["ages"][idx])
    if kind == "denoise":
        pred = model(x)
        diff = ad.sub(pred, Tensor(targets["clean"][idx]))
        return ad.tmean(ad.mul(diff, diff))
    raise ValueError(f"unknown model kind {kind!r}")


@dataclass(frozen=True)
class _BatchTarget:
    masks: list
    us: list
    vs: list


# ---------------------------------------------------------------------------
# validation metrics
# ---------------------------------------------------------------------------

def _batched_forward(model, x, batch_size=16):
    outs = []
    for start in range(0, len(x), batch_size):
        outs.append(model(Tensor(x[start : start + batch_size])))
    return outs


def validate(kind, model, x, targets, threshold=0.5):
    """Scalar validation metric: IoU (coarse), UV error (fine), MAE (age),
    reconstruction MSE (denoise)."""
    model.eval()
    try:
        if kind == "coarse":
            ious = []
            for chunk_start in range(0, len(x), 16):
                idx = slice(chunk_start, min(chunk_start + 16, len(x)))
                probs = ad.sigmoid(model(Tensor(x[idx]))[0]).data
                gts = targets["masks"][0][idx]
                for p, g in zip(probs, gts):
                    iou, _ = evaluate_segmentation((p[0] > threshold).astype(np.uint8), g[0])
                    ious.append(iou)
            return float(np.mean(ious))
        if kind == "fine":
            errs = []
            for chunk_start in range(0, len(x), 16):
                idx = slice(chunk_start, min(chunk_start + 16, len(x)))
                outs = model(Tensor(x[idx]))[0].data
                gts_m = targets["masks"][0][idx]
                gts_u = targets["us"][0][idx]
                gts_v = targets["vs"][0][idx]
                for o, gm, gu, gv in zip(outs, gts_m, gts_u, gts_v):
                    errs.append(evaluate_uv(o[1], o[2], gu[0], gv[0], gm[0]))
            return float(np.mean(errs))
        if kind == "age":
            preds = []
            for chunk_start in range(0, len(x), 16):
                idx = slice(chunk_start, min(chunk_start + 16, len(x)))
                preds.append(model(Tensor(x[idx])).data)
            preds = np.concatenate(preds)
            return float(np.abs(preds - targets["ages"]).mean())
        if kind == "denoise":
            errs = []
            for chunk_start in range(0, len(x), 16):
                idx = slice(chunk_start, min(chunk_start + 16, len(x)))
                pred = model(Tensor(x[idx])).data
                errs.append(((pred - targets["clean"][idx]) ** 2).mean())
            return float(np.mean(errs))
        raise ValueError(f"unknown model kind {kind!r}")
    finally:
        model.train()


# ---------------------------------------------------------------------------
# the training loop
# ---------------------------------------------------------------------------

def apply_init_mode(model, cfg, init_state=None):
    """Encoder transfer per the configured initialization mode."""
    if cfg.init_mode == "scratch":
        return 0
    if cfg.init_mode not in ("generic", "uvreg"):
        raise ConfigError(f"unknown init mode {cfg.init_mode!r}")
    if init_state is None:
        raise ConfigError(f"init mode {cfg.init_mode!r} requires an init checkpoint")
    copied, _ = transfer_encoder(init_state, model, cfg.init_mode)
    return copied


def train_model(train_samples, val_samples, cfg, init_state=None):
    """Train one model. Returns (model, log rows).

    Log rows are (epoch, lr, mean train loss, val metric).
    """
    if cfg.kind not in PREPARE:
        raise ConfigError(
            f"unknown model kind {cfg.kind!r} (expected one of {sorted(PREPARE)})"
        )
    x_train, t_train = PREPARE[cfg.kind](train_samples, cfg)
    x_val, t_val = PREPARE[cfg.kind](val_samples, cfg)

    net_cfg = cfg.net
    if net_cfg.init_seed != cfg.seed:
        from dataclasses import replace

        net_cfg = replace(net_cfg, init_seed=cfg.seed)
    model = build_model(cfg.kind, net_cfg)
    apply_init_mode(model, cfg, init_state)

    opt = Adam(model.parameters(), lr=cfg.lr0)
    order_rng = np.random.default_rng(cfg.seed + 1)
    n = len(x_train)
    log = []
    for epoch in range(cfg.epochs):
        opt.lr = lr_schedule(epoch, cfg.lr0, cfg.lr_half_every)
        order = order_rng.permutation(n)
        epoch_losses = []
        model.train()
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            opt.zero_grad()
            loss = batch_loss(cfg.kind, model, x_train, t_train, idx, cfg.use_pred_mask)
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingDivergedError(
                    f"non-finite loss {value} at epoch {epoch}, batch {start // cfg.batch_size}"
                )
            backward(loss)
            opt.step()
            epoch_losses.append(value)
        metric = validate(cfg.kind, model, x_val, t_val)
        log.append((epoch, opt.lr, float(np.mean(epoch_losses)), metric))
    model.eval()
    return model, log, net_cfg

"""Training objectives: multi-scale segmentation cross entropy, mask-gated
L1 coordinate regression, their unweighted sum, and the age L1.

The coordinate losses are normalized by the gating-mask mass (plus a small
guard) rather than left as raw sums, so the loss scale does not depend on
canvas size; the optimum is unchanged. The gating mask is detached: the
regression terms cannot shrink the loss by shrinking the mask, which is
trained only by its own segmentation term.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

PROB_EPS = 1e-7


@dataclass(frozen=True)
class MultiScaleTarget:
    """Ground truth per scale, full resolution first.

    masks: binary (H_s, W_s) arrays; us/vs: float fields at the same sizes
    (zero outside the mask).
    """

    masks: list
    us: list
    vs: list

    @property
    def num_scales(self):
        return len(self.masks)


def majority_downsample2x(mask):
    """2x2 block reduction: foreground wins ties (>= 50% foreground)."""
    mask = np.asarray(mask)
    h, w = mask.shape
    if h % 2 or w % 2:
        raise ValueError(f"mask size {mask.shape} not even")
    blocks = mask.reshape(h // 2, 2, w // 2, 2).sum(axis=(1, 3))
    return (blocks >= 2).astype(np.uint8)


def masked_average_downsample2x(field, mask):
    """2x2 block mean of ``field`` over foreground pixels only (0 if none)."""
    field = np.asarray(field, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    h, w = field.shape
    num = (field * mask).reshape(h // 2, 2, w // 2, 2).sum(axis=(1, 3))
    den = mask.reshape(h // 2, 2, w // 2, 2).sum(axis=(1, 3))
    return num / np.maximum(den, 1.0)


def build_multiscale_target(mask, u=None, v=None, num_scales=5):
    """Ground-truth pyramid: majority masks, foreground-averaged UV."""
    masks = [np.asarray(mask).astype(np.uint8)]
    us = [None if u is None else np.asarray(u, dtype=np.float64)]
    vs = [None if v is None else np.asarray(v, dtype=np.float64)]
    for _ in range(num_scales - 1):
        if us[-1] is not None:
            us.append(masked_average_downsample2x(us[-1], masks[-1]))
            vs.append(masked_average_downsample2x(vs[-1], masks[-1]))
        else:
            us.append(None)
            vs.append(None)
        masks.append(majority_downsample2x(masks[-1]))
    return MultiScaleTarget(masks=masks, us=us, vs=vs)


def multiscale_bce(pred_probs, target_masks):
    """Sum over scales of the mean binary cross entropy at that scale.

    ``pred_probs`` are probability maps in (0, 1) (clamped at 1e-7); each
    scale contributes its per-pixel mean, and scales are summed.
    """
    if len(pred_probs) != len(target_masks):
        raise ValueError(
            f"scale count mismatch: {len(pred_probs)} predictions, {len(target_masks)} targets"
        )
    total = None
    for probs, mask in zip(pred_probs, target_masks):
        y = np.asarray(mask, dtype=probs.data.dtype)
        if probs.data.shape[-2:] != y.shape[-2:]:
            raise ValueError(f"shape mismatch: {probs.data.shape} vs {y.shape}")
        y = np.broadcast_to(y, probs.data.shape)
        x = ad.clamp(probs, PROB_EPS, 1.0 - PROB_EPS)
        ll = ad.add(
            ad.mul(Tensor(y), ad.log(x)),
            ad.mul(Tensor(1.0 - y), ad.log(ad.sub(1.0, x))),
        )
        term = ad.scale(ad.tmean(ll), -1.0)
        total = term if total is None else ad.add(total, term)
    return total


def masked_l1_uv(pred_us, pred_vs, mask_probs, target, delta=1.0, normalize=True):
    """Mask-gated L1 losses for the U and V fields, summed over scales.

    ``mask_probs`` are the predicted per-scale mask probabilities (detached
    here so no gradient reaches the mask through these terms); pass None to
    disable gating (every pixel weighted 1). With ``normalize`` the sums are
    divided by the total gate mass plus ``delta``.
    """
    n_scales = len(pred_us)
    if len(pred_vs) != n_scales or len(target.masks) < n_scales:
        raise ValueError("scale count mismatch in masked_l1_uv")
    gates = []
    gate_mass = 0.0
    for s in range(n_scales):
        if mask_probs is None:
            gate = Tensor(np.ones_like(pred_us[s].data))
        else:
            gate = mask_probs[s].detach()
        gates.append(gate)
        gate_mass += float(gate.data.sum())
    num_u = None
    num_v = None
    for s in range(n_scales):
        tu = np.broadcast_to(np.asarray(target.us[s], dtype=pred_us[s].data.dtype), pred_us[s].data.shape)
        tv = np.broadcast_to(np.asarray(target.vs[s], dtype=pred_vs[s].data.dtype), pred_vs[s].data.shape)
        if pred_us[s].data.shape[-2:] != target.us[s].shape[-2:]:
            raise ValueError(f"shape mismatch at scale {s}")
        du = ad.tsum(ad.mul(gates[s], ad.absolute(ad.sub(pred_us[s], Tensor(tu)))))
        dv = ad.tsum(ad.mul(gates[s], ad.absolute(ad.sub(pred_vs[s], Tensor(tv)))))
        num_u = du if num_u is None else ad.add(num_u, du)
        num_v = dv if num_v is None else ad.add(num_v, dv)
    if not normalize:
        return num_u, num_v
    denom = gate_mass + delta
    return ad.scale(num_u, 1.0 / denom), ad.scale(num_v, 1.0 / denom)


def total_reg_loss(loss_u, loss_v, loss_seg_fine):
    """Unweighted sum of the three fine-model objectives."""
    for name, term in (("U", loss_u), ("V", loss_v), ("seg", loss_seg_fine)):
        if not np.isfinite(term.data).all():
            raise ValueError(f"non-finite {name} loss: {term.data}")
    return ad.add(ad.add(loss_u, loss_v), loss_seg_fine)


def age_l1(pred_hours, true_hours):
    """Batch mean absolute age error in hours."""
    true_hours = np.asarray(true_hours, dtype=pred_hours.data.dtype)
    if true_hours.size == 0:
        raise ValueError("age_l1 needs a non-empty batch")
    if pred_hours.data.shape != true_hours.shape:
        raise ValueError(
            f"shape mismatch: predictions {pred_hours.data.shape}, targets {true_hours.shape}"
        )
    return ad.tmean(ad.absolute(ad.sub(pred_hours, Tensor(true_hours))))

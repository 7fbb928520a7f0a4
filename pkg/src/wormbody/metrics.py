"""Evaluation metrics and CSV report writers."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

AGE_BIN_EDGES = np.arange(0.0, 401.0, 20.0)  # 20-hour bins over the lifespan


def evaluate_segmentation(pred_mask, gt_mask):
    """(IoU, pixel accuracy) of two binary masks of equal size.

    IoU of two empty masks is defined as 1.
    """
    pred = np.asarray(pred_mask)
    gt = np.asarray(gt_mask)
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    for m in (pred, gt):
        if not np.all(np.isin(np.unique(m), (0, 1))):
            raise ValueError("masks must be binary")
    p = pred != 0
    g = gt != 0
    union = np.logical_or(p, g).sum()
    inter = np.logical_and(p, g).sum()
    iou = 1.0 if union == 0 else inter / union
    acc = (p == g).mean()
    return float(iou), float(acc)


def evaluate_uv(pred_u, pred_v, gt_u, gt_v, gt_mask):
    """Mean of (|dU| + |dV|) / 2 over ground-truth worm pixels."""
    gt_mask = np.asarray(gt_mask)
    fields = [np.asarray(f, dtype=np.float64) for f in (pred_u, pred_v, gt_u, gt_v)]
    for f in fields:
        if f.shape != gt_mask.shape:
            raise ValueError(f"field shape {f.shape} does not match mask {gt_mask.shape}")
    fg = gt_mask != 0
    if not fg.any():
        raise ValueError("ground-truth mask is empty")
    du = np.abs(fields[0][fg] - fields[2][fg])
    dv = np.abs(fields[1][fg] - fields[3][fg])
    return float(((du + dv) / 2.0).mean())


@dataclass(frozen=True)
class AgeReport:
    mae_hours: float
    scatter: list  # (gt, pred) pairs, CSV-ready
    gt_hist: np.ndarray
    pred_hist: np.ndarray
    bin_edges: np.ndarray


def evaluate_age(pred_hours, gt_hours):
    """MAE plus scatter pairs and aligned 20-hour histograms."""
    pred = np.asarray(pred_hours, dtype=np.float64)
    gt = np.asarray(gt_hours, dtype=np.float64)
    if pred.size == 0 or pred.shape != gt.shape:
        raise ValueError(f"need equal non-empty ages, got {pred.shape} and {gt.shape}")
    mae = float(np.abs(pred - gt).mean())
    gt_hist, _ = np.histogram(gt, bins=AGE_BIN_EDGES)
    pred_hist, _ = np.histogram(pred, bins=AGE_BIN_EDGES)
    scatter = list(zip(gt.tolist(), pred.tolist()))
    return AgeReport(
        mae_hours=mae,
        scatter=scatter,
        gt_hist=gt_hist,
        pred_hist=pred_hist,
        bin_edges=AGE_BIN_EDGES.copy(),
    )


def write_csv(path, header, rows, comments=None):
    """CSV with optional '#' comment lines (config echo) above the header."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        for line in comments or []:
            f.write(f"# {line}\n")
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def read_csv(path):
    """Counterpart of write_csv. Returns (header, rows, comments)."""
    comments = []
    with open(path, "r", encoding="utf-8") as f:
        lines = [line for line in f]
    data_lines = []
    for line in lines:
        if line.startswith("#"):
            comments.append(line[1:].strip())
        else:
            data_lines.append(line)
    reader = csv.reader(data_lines)
    table = [row for row in reader if row]
    return table[0], table[1:], comments

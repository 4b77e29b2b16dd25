"""Evaluation metrics: PCK/AUC, mean 3D error, mask IoU/PA, frame accuracy, F1@IoU."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (DegenerateRange, DimensionMismatch, LengthMismatch,
                     NoVisibleKeypoints)


@dataclass
class PckCurve:
    thresholds: np.ndarray
    pck: np.ndarray


def _errors(pred, gt, visibility):
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape:
        raise LengthMismatch(f"pred shape {pred.shape} != gt shape {gt.shape}")
    d = pred.shape[-1]
    pred = pred.reshape(-1, d)
    gt = gt.reshape(-1, d)
    vis = np.ones(len(gt), bool) if visibility is None else \
        np.asarray(visibility, bool).reshape(-1)
    if vis.size != len(gt):
        raise LengthMismatch("visibility length does not match keypoints")
    if not vis.any():
        raise NoVisibleKeypoints("no visible keypoint pairs")
    return np.linalg.norm(pred[vis] - gt[vis], axis=1)


def pck_curve(pred, gt, visibility=None, thresholds=None) -> PckCurve:
    """Fraction of visible keypoints with error <= t, for each threshold t."""
    err = _errors(pred, gt, visibility)
    if thresholds is None or len(thresholds) == 0:
        raise ValueError("at least one threshold is required")
    t = np.sort(np.asarray(thresholds, dtype=float))
    e = np.sort(err)
    pck = np.searchsorted(e, t, side="right") / e.size
    return PckCurve(t, pck)


def auc(curve: PckCurve, t_min: float | None = None, t_max: float | None = None) -> float:
    """Trapezoid area under the curve on ``[t_min, t_max]`` divided by the range.

    The curve is linearly interpolated at the range ends.
    """
    t, p = curve.thresholds, curve.pck
    t_min = t[0] if t_min is None else t_min
    t_max = t[-1] if t_max is None else t_max
    if len(t) < 2 or not t_max > t_min or t_min < t[0] or t_max > t[-1]:
        raise DegenerateRange(f"range [{t_min}, {t_max}] not covered by >= 2 thresholds")
    inner = (t > t_min) & (t < t_max)
    ts = np.concatenate([[t_min], t[inner], [t_max]])
    ps = np.interp(ts, t, p)
    area = float(np.sum((ts[1:] - ts[:-1]) * (ps[1:] + ps[:-1]) / 2))
    return area / (t_max - t_min)


def mean_error_3d(pred, gt, visibility=None) -> float:
    """Mean Euclidean joint error in millimetres (inputs in meters)."""
    return float(_errors(pred, gt, visibility).mean() * 1000.0)


def mask_iou_pa(pred, gt) -> tuple[float, float]:
    pred = np.asarray(pred) != 0
    gt = np.asarray(gt) != 0
    if pred.shape != gt.shape:
        raise DimensionMismatch(f"mask shapes {pred.shape} and {gt.shape} differ")
    union = np.count_nonzero(pred | gt)
    inter = np.count_nonzero(pred & gt)
    iou = 1.0 if union == 0 else inter / union
    pa = np.count_nonzero(pred == gt) / pred.size
    return float(iou), float(pa)


def frame_accuracy(pred, gt) -> float:
    if len(pred) != len(gt):
        raise LengthMismatch(f"{len(pred)} predicted vs {len(gt)} ground-truth frames")
    if len(gt) == 0:
        raise LengthMismatch("empty timelines")
    return sum(a == b for a, b in zip(pred, gt)) / len(gt)


def segment_iou(a, b) -> float:
    inter = min(a.end, b.end) - max(a.start, b.start) + 1
    if inter <= 0:
        return 0.0
    union = (a.end - a.start + 1) + (b.end - b.start + 1) - inter
    return inter / union


def f1_at_iou(pred, gt, iou_threshold: float = 0.5) -> tuple[float, float, float]:
    """Segmental precision, recall and F1.

    Candidate pairs (same label, IoU >= threshold) are matched one-to-one in
    order of descending IoU; ties go to the earlier predicted start, then
    the earlier ground-truth start.
    """
    if not pred and not gt:
        # nothing to find and nothing claimed: perfect agreement
        return 1.0, 1.0, 1.0
    pred = sorted(pred, key=lambda s: (s.start, s.end, s.label))
    gt = sorted(gt, key=lambda s: (s.start, s.end, s.label))
    cands = []
    for i, p in enumerate(pred):
        for j, g in enumerate(gt):
            if p.label == g.label:
                iou = segment_iou(p, g)
                if iou >= iou_threshold and iou > 0:
                    cands.append((-iou, p.start, g.start, i, j))
    cands.sort()
    used_p, used_g = set(), set()
    for _, _, _, i, j in cands:
        if i not in used_p and j not in used_g:
            used_p.add(i)
            used_g.add(j)
    tp = len(used_p)
    fp = len(pred) - tp
    fn = len(gt) - tp
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1

"""Evaluation metrics: success (AUC), precision, normalised precision, cAUC and mACC.

Conventions pinned here:
  * success thresholds 0.00, 0.01, ..., 1.00 (101) with strict ``IoU > tau``;
    AUC is the mean of the success curve, so a perfect run scores 100/101;
  * precision thresholds 0..50 px (51) with ``error <= t``; P is the value at 20 px;
  * normalised precision divides the centre offset per axis by the ground-truth
    (w, h), thresholds 0..0.5 (51) with ``<=``; P_norm is the mean of that curve;
  * cAUC is the AUC of complete-IoU, clamped to [-1, 1];
  * mACC averages IoU on visible frames and absence credit (empty predicted box) on absent ones;
  * absent frames are excluded from everything except mACC.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .attributes import ATTRIBUTE_NAMES, LEVELED, AttributeSet

log = logging.getLogger(__name__)

SUCCESS_THRESHOLDS = np.arange(101) / 100.0
PRECISION_THRESHOLDS = np.arange(51, dtype=np.float64)
NORM_THRESHOLDS = np.arange(51) / 100.0
PRECISION_AT = 20


def box_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise IoU of [N, 4] x, y, w, h boxes; empty unions give 0."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    iw = np.clip(np.minimum(a[:, 0] + a[:, 2], b[:, 0] + b[:, 2]) - np.maximum(a[:, 0], b[:, 0]), 0, None)
    ih = np.clip(np.minimum(a[:, 1] + a[:, 3], b[:, 1] + b[:, 3]) - np.maximum(a[:, 1], b[:, 1]), 0, None)
    inter = iw * ih
    union = a[:, 2] * a[:, 3] + b[:, 2] * b[:, 3] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def complete_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """IoU - rho^2/c^2 - alpha*v (centre distance over enclosing diagonal, aspect consistency)."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    iou = box_iou(a, b)
    ca, cb = a[:, :2] + a[:, 2:] / 2.0, b[:, :2] + b[:, 2:] / 2.0
    rho2 = np.sum((ca - cb) ** 2, axis=1)
    ex = np.maximum(a[:, 0] + a[:, 2], b[:, 0] + b[:, 2]) - np.minimum(a[:, 0], b[:, 0])
    ey = np.maximum(a[:, 1] + a[:, 3], b[:, 1] + b[:, 3]) - np.minimum(a[:, 1], b[:, 1])
    c2 = ex ** 2 + ey ** 2
    dist = np.where(c2 > 0, rho2 / np.where(c2 > 0, c2, 1.0), 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ta = np.arctan(np.where(a[:, 3] > 0, a[:, 2] / np.where(a[:, 3] > 0, a[:, 3], 1.0), 0.0))
        tb = np.arctan(np.where(b[:, 3] > 0, b[:, 2] / np.where(b[:, 3] > 0, b[:, 3], 1.0), 0.0))
    v = 4.0 / np.pi ** 2 * (ta - tb) ** 2
    denom = 1.0 - iou + v
    alpha = np.where(v > 0, v / np.where(denom > 0, denom, 1.0), 0.0)
    return np.clip(iou - dist - alpha * v, -1.0, 1.0)


def center_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return np.linalg.norm((a[:, :2] + a[:, 2:] / 2.0) - (b[:, :2] + b[:, 2:] / 2.0), axis=1)


def normalized_center_error(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    d = (pred[:, :2] + pred[:, 2:] / 2.0) - (gt[:, :2] + gt[:, 2:] / 2.0)
    return np.linalg.norm(d / gt[:, 2:], axis=1)


@dataclass
class MetricReport:
    auc: float
    precision: float
    norm_precision: float
    cauc: float
    macc: float
    success_curve: np.ndarray
    precision_curve: np.ndarray
    norm_precision_curve: np.ndarray
    complete_success_curve: np.ndarray
    n_frames: int = 0
    n_visible: int = 0
    slices: dict = field(default_factory=dict)

    SCALARS = ("auc", "precision", "norm_precision", "cauc", "macc")
    CURVES = {"success": ("success_curve", SUCCESS_THRESHOLDS),
              "precision": ("precision_curve", PRECISION_THRESHOLDS),
              "norm_precision": ("norm_precision_curve", NORM_THRESHOLDS),
              "complete_success": ("complete_success_curve", SUCCESS_THRESHOLDS)}

    def scalars(self) -> dict:
        return {k: float(getattr(self, k)) for k in self.SCALARS}

    def to_dict(self, curves: bool = True) -> dict:
        d = self.scalars()
        d.update(n_frames=int(self.n_frames), n_visible=int(self.n_visible))
        if curves:
            d["curves"] = {name: [float(v) for v in getattr(self, attr)] for name, (attr, _) in self.CURVES.items()}
        if self.slices:
            d["attributes"] = {k: r.to_dict(curves=False) for k, r in self.slices.items()}
        return d


def compute_metrics(predictions, annotation) -> MetricReport:
    """``annotation`` is a SequenceAnnotation or a (boxes, absent) pair."""
    if isinstance(annotation, tuple):
        gt, absent = annotation
    else:
        gt, absent = annotation.boxes, annotation.absent
    pred = np.asarray(predictions, dtype=np.float64).reshape(-1, 4)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 4)
    absent = np.asarray(absent, dtype=bool).reshape(-1)
    if not (len(pred) == len(gt) == len(absent)):
        raise ValueError(f"length mismatch: {len(pred)} predictions for {len(gt)} frames")
    vis = ~absent
    p, g = pred[vis], gt[vis]
    n = int(vis.sum())
    if n:
        iou = box_iou(p, g)
        cerr = center_error(p, g)
        nerr = normalized_center_error(p, g)
        ciou = complete_iou(p, g)
        # integer hit counts per threshold; scalars are formed from these so they do not
        # depend on floating-point summation order
        s_hits = (iou[None, :] > SUCCESS_THRESHOLDS[:, None]).sum(axis=1)
        p_hits = (cerr[None, :] <= PRECISION_THRESHOLDS[:, None]).sum(axis=1)
        n_hits = (nerr[None, :] <= NORM_THRESHOLDS[:, None]).sum(axis=1)
        c_hits = (ciou[None, :] > SUCCESS_THRESHOLDS[:, None]).sum(axis=1)
    else:
        iou = np.zeros(0)
        s_hits = c_hits = np.zeros(len(SUCCESS_THRESHOLDS), dtype=np.int64)
        p_hits = n_hits = np.zeros(len(PRECISION_THRESHOLDS), dtype=np.int64)
    denom = max(n, 1)
    curve = lambda hits: hits / denom
    area = lambda hits: int(hits.sum()) / (len(hits) * denom)
    empty = (pred[:, 2] <= 0) | (pred[:, 3] <= 0)
    acc = np.zeros(len(pred))
    acc[vis] = iou
    acc[absent] = empty[absent].astype(np.float64)
    macc = math.fsum(acc) / len(acc) if len(acc) else 0.0
    return MetricReport(area(s_hits), int(p_hits[PRECISION_AT]) / denom, area(n_hits), area(c_hits), macc,
                        curve(s_hits), curve(p_hits), curve(n_hits), curve(c_hits), len(pred), n)


def aggregate(reports) -> MetricReport:
    """Sequence-level mean of every scalar and curve."""
    reports = list(reports)
    if not reports:
        raise ValueError("nothing to aggregate")
    mean = lambda attr: np.mean([np.asarray(getattr(r, attr), dtype=np.float64) for r in reports], axis=0)
    return MetricReport(float(mean("auc")), float(mean("precision")), float(mean("norm_precision")),
                        float(mean("cauc")), float(mean("macc")), mean("success_curve"),
                        mean("precision_curve"), mean("norm_precision_curve"), mean("complete_success_curve"),
                        sum(r.n_frames for r in reports), sum(r.n_visible for r in reports))


def attribute_report(reports: dict, annotations: dict) -> dict:
    """Aggregate per attribute slice. Keys: flag names (``FM``) and ``BRI=low`` style levels.

    ``annotations`` maps sequence id to an AttributeSet or anything with ``.attributes``.
    Empty slices are omitted (and logged).
    """
    members: dict[str, list] = {}
    for seq, rep in reports.items():
        if seq not in annotations:
            raise KeyError(f"sequence {seq!r} has no attribute annotation")
        attrs = annotations[seq]
        attrs = attrs if isinstance(attrs, AttributeSet) else attrs.attributes
        for key in attrs.slices():
            members.setdefault(key, []).append(rep)
    out = {}
    for name in ATTRIBUTE_NAMES:
        keys = [f"{name}={lv}" for lv in LEVELED[name]] if name in LEVELED else [name]
        for key in keys:
            if key in members:
                out[key] = aggregate(members[key])
            else:
                log.info("attribute slice %s is empty; omitted", key)
    return out


def slice_report(reports: dict, annotations: dict, key: str) -> MetricReport:
    name = key.split("=")[0]
    if name not in ATTRIBUTE_NAMES:
        raise KeyError(f"attribute {name!r} missing from schema")
    slices = attribute_report(reports, annotations)
    if key not in slices:
        raise KeyError(f"slice {key!r} is empty")
    return slices[key]

"""Tracking head (per-token classification + box regression) and the training losses.

Box convention for the regression branch: every candidate predicts
``(cx, cy, w, h)`` normalised to the search region (each in [0, 1] after a
sigmoid). The L1 term is the sum of absolute differences over those four
coordinates; GIoU is computed on the same boxes converted to corners.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .cvlf import VISUAL, FusedTokens, IndexMap
from .nn import Linear, Module
from .tensor import Tensor

BCE_EPS = 1e-7


@dataclass(frozen=True)
class BoundingBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        vals = (self.x, self.y, self.w, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box {vals}")
        if self.w < 0 or self.h < 0:
            raise ValueError(f"negative box extent {vals}")

    @classmethod
    def from_center(cls, cx, cy, w, h) -> "BoundingBox":
        return cls(cx - w / 2.0, cy - h / 2.0, w, h)

    @property
    def center(self) -> tuple[float, float]:
        return self.x + self.w / 2.0, self.y + self.h / 2.0

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def size(self) -> float:
        return math.sqrt(self.w * self.h)

    def xyxy(self) -> np.ndarray:
        return np.array([self.x, self.y, self.x + self.w, self.y + self.h])

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]


@dataclass
class LossWeights:
    l1: float = 5.0      # lambda_1
    giou: float = 2.0    # lambda_G
    alpha: float = 1.0   # classification balance

    def validate(self):
        if min(self.l1, self.giou, self.alpha) < 0:
            raise ValueError("loss weights must be nonnegative")
        return self


@dataclass
class HeadOutput:
    confidence: Tensor   # [B, N]
    boxes: Tensor        # [B, N, 4] normalised (cx, cy, w, h)


class TrackingHead(Module):
    """Two-layer MLP classifier and one-layer regressor applied to every fused token."""

    def __init__(self, width: int, rng: np.random.Generator):
        self.cls_hidden = Linear(width, width, rng)
        self.cls_out = Linear(width, 1, rng)
        self.reg = Linear(width, 4, rng)

    def forward(self, fused) -> HeadOutput:
        return head_forward(fused, self)


def head_forward(fused, head: TrackingHead) -> HeadOutput:
    x = fused.tokens if isinstance(fused, FusedTokens) else T.as_tensor(fused)
    logits = head.cls_out(head.cls_hidden(x).relu())
    conf = logits.reshape(*logits.shape[:-1]).sigmoid()
    boxes = head.reg(x).sigmoid()
    return HeadOutput(conf, boxes)


def cell_centers(grid_side: int, region_size: float) -> np.ndarray:
    """Pixel centres of a row-major grid tiling a square region: [side*side, 2] as (x, y)."""
    step = region_size / grid_side
    c = (np.arange(grid_side) + 0.5) * step
    xs = np.tile(c, grid_side)
    ys = np.repeat(c, grid_side)
    return np.stack([xs, ys], axis=1)


def assign_labels(index_map: IndexMap, gt_box: BoundingBox, region_size: float) -> np.ndarray:
    """1 for visual tokens whose cell centre lies in ``gt_box`` ([x, x+w) x [y, y+h)), else 0.

    ``gt_box`` is in search-region pixels. Language and [OBJ] positions are always 0.
    """
    labels = np.zeros(len(index_map.kinds))
    x0, y0, x1, y1 = gt_box.xyxy()
    if x1 <= 0 or y1 <= 0 or x0 >= region_size or y0 >= region_size:
        warnings.warn("ground-truth box lies outside the search region; all labels negative")
        return labels
    centers = cell_centers(index_map.grid_side, region_size)
    inside = (centers[:, 0] >= x0) & (centers[:, 0] < x1) & (centers[:, 1] >= y0) & (centers[:, 1] < y1)
    labels[index_map.visual_positions] = inside.astype(np.float64)
    return labels


def bce_loss(confidence, labels, reduction: str = "mean") -> Tensor:
    """Binary cross-entropy, minimised; confidences are clamped to [eps, 1 - eps]."""
    p = T.clip(T.as_tensor(confidence), BCE_EPS, 1.0 - BCE_EPS)
    y = np.asarray(labels, dtype=np.float64)
    per = -(y * p.log() + (1.0 - y) * (1.0 - p).log())
    if reduction == "sum":
        return per.sum()
    if reduction == "mean":
        return per.mean()
    raise ValueError(f"unknown reduction {reduction!r}")


def cxcywh_to_xyxy(boxes) -> Tensor:
    b = T.as_tensor(boxes)
    cx, cy, w, h = b[..., 0:1], b[..., 1:2], b[..., 2:3], b[..., 3:4]
    return T.concat([cx - w * 0.5, cy - h * 0.5, cx + w * 0.5, cy + h * 0.5], axis=-1)


def giou_xyxy(a, b) -> Tensor:
    """Generalised IoU for corner boxes [..., 4]; pairs of zero-area boxes score 0."""
    a, b = T.as_tensor(a), T.as_tensor(b)
    ax1, ay1, ax2, ay2 = (a[..., i] for i in range(4))
    bx1, by1, bx2, by2 = (b[..., i] for i in range(4))
    iw = T.relu(T.minimum(ax2, bx2) - T.maximum(ax1, bx1))
    ih = T.relu(T.minimum(ay2, by2) - T.maximum(ay1, by1))
    inter = iw * ih
    area_a = (ax2 - ax1) * (ay2 - ay1)
    area_b = (bx2 - bx1) * (by2 - by1)
    union = area_a + area_b - inter
    enclose = (T.maximum(ax2, bx2) - T.minimum(ax1, bx1)) * (T.maximum(ay2, by2) - T.minimum(ay1, by1))
    both_empty = (area_a.data <= 0) & (area_b.data <= 0)
    safe_union = union + np.where(union.data <= 0, 1.0, 0.0)
    safe_enclose = enclose + np.where(enclose.data <= 0, 1.0, 0.0)
    g = inter / safe_union - (enclose - union) / safe_enclose
    return g * np.where(both_empty, 0.0, 1.0)


def giou(a: BoundingBox, b: BoundingBox) -> float:
    return float(giou_xyxy(a.xyxy(), b.xyxy()).data)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    ax1, ay1, ax2, ay2 = a.xyxy()
    bx1, by1, bx2, by2 = b.xyxy()
    inter = max(0.0, min(ax2, bx2) - max(ax1, bx1)) * max(0.0, min(ay2, by2) - max(ay1, by1))
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


def regression_loss(pred_boxes, gt_boxes, labels, weights: LossWeights) -> Tensor:
    """Mean over positive candidates of lambda_1 * L1 + lambda_G * (1 - GIoU).

    ``pred_boxes`` [B, N, 4] and ``gt_boxes`` [B, 4] are normalised (cx, cy, w, h).
    """
    pred_boxes = T.as_tensor(pred_boxes)
    labels = np.asarray(labels)
    gt = np.asarray(gt_boxes, dtype=np.float64)
    if labels.ndim == 1:
        labels, gt = labels[None], gt.reshape(1, 4)
        pred_boxes = pred_boxes.reshape(1, *pred_boxes.shape)
    bi, ni = np.nonzero(labels > 0.5)
    if len(bi) == 0:
        warnings.warn("no positive candidates; regression loss is zero")
        return Tensor(0.0)
    sel = pred_boxes[bi, ni]
    target = gt[bi]
    l1 = (sel - target).abs().sum(axis=-1)
    g = giou_xyxy(cxcywh_to_xyxy(sel), cxcywh_to_xyxy(target))
    per = l1 * weights.l1 + (1.0 - g) * weights.giou
    return per.sum() * (1.0 / len(bi))


def total_loss(coa, reg, ce, weights: LossWeights) -> Tensor:
    total = T.as_tensor(coa) + T.as_tensor(reg) + T.as_tensor(ce) * weights.alpha
    if not np.isfinite(total.data):
        parts = {k: float(T.as_tensor(v).data) for k, v in (("coa", coa), ("reg", reg), ("ce", ce))}
        raise FloatingPointError(f"non-finite loss component: {parts}")
    return total

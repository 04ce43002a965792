"""Soft-target focal classification loss, Line-IoU + smooth-l1 regression loss, total loss."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import LaneError, NoOverlapError, ShapeError
from .geometry import GeometryConfig, anchor_to_polyline, line_iou


@dataclass(frozen=True)
class LossWeights:
    lambda_cls: float = 2.0
    lambda_iou: float = 2.0
    lambda_l1: float = 0.3
    lambda_seg: float = 1.0
    gamma: float = 2.0
    smooth_l1_beta: float = 1.0

    def __post_init__(self):
        for name in ("lambda_cls", "lambda_iou", "lambda_l1", "lambda_seg", "gamma", "smooth_l1_beta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class LossBreakdown:
    cls: float
    reg: float
    seg: float
    total: float
    per_layer: list = field(default_factory=list)  # [(cls_r, reg_r), ...]


def focal_term(p: float, q: float, gamma: float = 2.0) -> float:
    """``-|q - p|^gamma * (q log p + (1 - q) log(1 - p))`` for a soft target ``q``."""
    if not 0.0 < p < 1.0:
        raise LaneError(f"p must lie in (0, 1), got {p}")
    if not 0.0 <= q <= 1.0:
        raise LaneError(f"q must lie in [0, 1], got {q}")
    ce = -(q * math.log(p) + (1.0 - q) * math.log1p(-p))
    return abs(q - p) ** gamma * ce


def focal_term_grad(p: float, q: float, gamma: float = 2.0) -> float:
    """Analytic d/dp of :func:`focal_term`."""
    ce = -(q * math.log(p) + (1.0 - q) * math.log1p(-p))
    s = math.copysign(1.0, p - q) if p != q else 0.0
    return gamma * s * abs(q - p) ** (gamma - 1.0) * ce + abs(q - p) ** gamma * ((1.0 - q) / (1.0 - p) - q / p)


def smooth_l1(diff, beta: float = 1.0) -> float:
    d = abs(float(diff))
    if beta == 0.0:
        return d
    return 0.5 * d * d / beta if d < beta else d - 0.5 * beta


def _clamp01(v: float) -> float:
    if math.isnan(v):
        return 0.0
    return min(max(v, 0.0), 1.0)


def _check(assignments, traces):
    if len(assignments) != len(traces):
        raise ShapeError(f"{len(assignments)} assignments for {len(traces)} traces")
    for asg, trace in zip(assignments, traces):
        K = len(trace.predictions)
        seen = [p.anchor_index for p in asg.positives] + list(asg.negatives)
        if sorted(seen) != list(range(K)):
            raise ShapeError(f"layer {asg.layer}: positives and negatives must partition the {K} anchors")


def classification_loss(assignments, traces, w: LossWeights):
    """Sum over layers of focal terms: ``d * clamp(LIoU)`` targets on positives, 0 on negatives.

    Returns ``(total, per_layer)``.
    """
    _check(assignments, traces)
    per_layer = []
    for asg, trace in zip(assignments, traces):
        preds = trace.predictions
        loss = 0.0
        for rec in asg.positives:
            target = rec.soft_label * _clamp01(rec.liou)
            loss += focal_term(preds[rec.anchor_index].score, target, w.gamma)
        for j in asg.negatives:
            loss += focal_term(preds[j].score, 0.0, w.gamma)
        per_layer.append(loss)
    return float(sum(per_layer)), per_layer


def regression_terms(pred, gt, w: LossWeights, geo: GeometryConfig):
    """``(iou_part, l1_part)`` for one positive; both already weighted."""
    iou = line_iou(anchor_to_polyline(pred.anchor(), geo), gt.polyline, geo.liou_radius)
    b = w.smooth_l1_beta
    l1 = (
        smooth_l1(pred.start_x - gt.start_x, b)
        + smooth_l1(pred.start_y - gt.start_y, b)
        + smooth_l1(pred.theta - gt.theta, b)
        + smooth_l1(pred.length - gt.length, b)
    )
    return w.lambda_iou * (1.0 - iou), w.lambda_l1 * l1


def regression_loss(assignments, traces, gts, w: LossWeights, geo: GeometryConfig):
    """Line-IoU + smooth-l1 over the positives of every layer.  Returns ``(total, per_layer)``."""
    _check(assignments, traces)
    per_layer = []
    for asg, trace in zip(assignments, traces):
        loss = 0.0
        for rec in asg.positives:
            pred = trace.predictions[rec.anchor_index]
            try:
                iou_part, l1_part = regression_terms(pred, gts[rec.gt_index], w, geo)
            except NoOverlapError as exc:
                raise NoOverlapError(
                    f"layer {asg.layer}: anchor {rec.anchor_index} shares no row with gt {rec.gt_index}"
                ) from exc
            loss += iou_part + l1_part
        per_layer.append(loss)
    return float(sum(per_layer)), per_layer


def total_loss(cls: float, reg: float, seg: float, w: LossWeights) -> float:
    if cls < 0 or reg < 0 or seg < 0:
        raise LaneError("loss components must be non-negative")
    return w.lambda_cls * cls + reg + w.lambda_seg * seg


def loss_breakdown(assignments, traces, gts, w: LossWeights, geo: GeometryConfig, seg: float = 0.0) -> LossBreakdown:
    cls, cls_layers = classification_loss(assignments, traces, w)
    reg, reg_layers = regression_loss(assignments, traces, gts, w, geo)
    return LossBreakdown(cls, reg, seg, total_loss(cls, reg, seg, w), list(zip(cls_layers, reg_layers)))

"""Dataset-level precision / recall / F1 with Line-IoU matching.

Matching is one-to-one (Hungarian on Line-IoU), not the official CULane
30-px mask IoU, so absolute numbers are not comparable with published
CULane tables.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import GeometryConfig, LanePolyline, pairwise_line_iou
from .hungarian import hungarian


@dataclass(frozen=True)
class EvalCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn) < 0:
            raise ValueError("counts must be non-negative")

    def __add__(self, other: "EvalCounts") -> "EvalCounts":
        return EvalCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


@dataclass(frozen=True)
class EvalConfig:
    liou_threshold: float = 0.5
    score_threshold: float = 0.5

    def __post_init__(self):
        if not (0.0 <= self.liou_threshold <= 1.0 and 0.0 <= self.score_threshold <= 1.0):
            raise ValueError("thresholds must lie in [0, 1]")


def match_image(preds, gts, cfg: EvalConfig, geo: GeometryConfig) -> EvalCounts:
    """Count TP/FP/FN for one image.

    Args:
        preds: sequence of ``(score, LanePolyline)``.
        gts: sequence of ``LanePolyline``.
    """
    kept = [poly for score, poly in preds if score >= cfg.score_threshold]
    if not kept or not gts:
        return EvalCounts(0, len(kept), len(gts))
    pa = np.array([p.xs for p in kept]), np.array([p.valid for p in kept])
    ga = np.array([g.xs for g in gts]), np.array([g.valid for g in gts])
    iou = pairwise_line_iou(pa[0], pa[1], ga[0], ga[1], geo.liou_radius)
    ok = np.nan_to_num(iou, nan=-np.inf) > cfg.liou_threshold
    if not ok.any():
        return EvalCounts(0, len(kept), len(gts))
    mapping, _ = hungarian(np.where(ok, -iou, 0.0))
    tp = sum(1 for i, j in mapping.items() if ok[i, j])
    return EvalCounts(tp, len(kept) - tp, len(gts) - tp)


def f1(counts: EvalCounts) -> tuple[float, float, float]:
    tp, fp, fn = counts.tp, counts.fp, counts.fn
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    score = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, score


def aggregate(per_image) -> EvalCounts:
    total = EvalCounts()
    for c in per_image:
        total = total + c
    return total


def report(counts: EvalCounts, per_category: dict | None = None) -> dict:
    precision, recall, score = f1(counts)
    out = {
        "matching": "liou",
        "precision": precision,
        "recall": recall,
        "f1": score,
        "tp": counts.tp,
        "fp": counts.fp,
        "fn": counts.fn,
    }
    if per_category:
        out["per_category"] = {
            name: dict(zip(("precision", "recall", "f1"), f1(c)), tp=c.tp, fp=c.fp, fn=c.fn)
            for name, c in sorted(per_category.items())
        }
    return out

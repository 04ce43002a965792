"""One-to-several label assignment.

OTA (dynamic-k over a similarity + focal classification cost) runs once on
the last decoder layer.  Its positive sets are shared by every earlier layer
with depth-decaying soft labels; the last layer keeps only the Hungarian
pick per ground truth ("fully positive"), which is what lets inference skip
NMS.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .decoder import prediction_arrays
from .errors import DegenerateScoreError, LaneError, ShapeError
from .geometry import GeometryConfig, pairwise_cost_components, pairwise_line_iou, rasterize
from .hungarian import hungarian

SENTINEL_COST = 1e6


@dataclass(frozen=True)
class OtaConfig:
    w_sim: float = 3.0
    w_cls: float = 1.0
    t_min: int = 2
    top_q: int = 4
    k_max: int = 8
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25

    def __post_init__(self):
        if self.t_min < 2:
            raise ValueError("t_min must be >= 2")
        if self.top_q < self.t_min or self.k_max < self.t_min:
            raise ValueError("top_q and k_max must be >= t_min")


@dataclass(frozen=True)
class PositiveRecord:
    anchor_index: int
    gt_index: int
    soft_label: float
    liou: float  # NaN when the pair shares no valid row
    is_fully_positive: bool


@dataclass(frozen=True)
class LayerAssignment:
    layer: int
    positives: tuple
    negatives: tuple  # sorted anchor indices

    @property
    def fully_positive(self) -> dict[int, int]:
        return {p.gt_index: p.anchor_index for p in self.positives if p.is_fully_positive}

    def pairs(self) -> set[tuple[int, int]]:
        return {(p.anchor_index, p.gt_index) for p in self.positives}


def focal_cost(scores, alpha: float = 0.25, gamma: float = 2.0) -> np.ndarray:
    """Foreground focal cost: positive focal term minus negative focal term."""
    p = np.clip(np.asarray(scores, dtype=np.float64), 1e-12, 1.0 - 1e-12)
    pos = alpha * (1.0 - p) ** gamma * -np.log(p)
    neg = (1.0 - alpha) * p ** gamma * -np.log(1.0 - p)
    return pos - neg


def _gt_arrays(gts):
    params = np.array([g.params for g in gts]).reshape(-1, 4)
    xs = np.array([g.polyline.xs for g in gts])
    valid = np.array([g.polyline.valid for g in gts])
    return params, xs, valid


def ota_matrices(scores, params, offsets, gts, cfg: OtaConfig, geo: GeometryConfig):
    """Cost and Line-IoU matrices, both (A, G), from prediction arrays.

    No-overlap pairs get ``SENTINEL_COST`` and NaN Line-IoU.
    """
    if len(scores) == 0 or len(gts) == 0:
        raise LaneError("OTA needs at least one prediction and one ground truth")
    xs, valid = rasterize(params, offsets, geo)
    g_params, g_xs, g_valid = _gt_arrays(gts)
    if g_xs.shape[1] != geo.num_points:
        raise ShapeError("ground truth lanes must have z sampling rows")
    c_dis, c_xy, c_theta = pairwise_cost_components(params, xs, valid, g_params, g_xs, g_valid, geo)
    c_cls = focal_cost(scores, cfg.focal_alpha, cfg.focal_gamma)
    cost = cfg.w_sim * (c_dis * c_xy * c_theta) ** 2 + cfg.w_cls * c_cls[:, None]
    cost = np.where(np.isnan(c_dis), SENTINEL_COST, cost)
    liou = pairwise_line_iou(xs, valid, g_xs, g_valid, geo.liou_radius)
    return cost, liou


def ota_cost_matrix(last_preds, gts, cfg: OtaConfig, geo: GeometryConfig) -> np.ndarray:
    if not last_preds or not gts:
        raise LaneError("OTA needs at least one prediction and one ground truth")
    scores, params, offsets = prediction_arrays(last_preds)
    return ota_matrices(scores, params, offsets, gts, cfg, geo)[0]


def dynamic_k(liou_column, cfg: OtaConfig) -> int:
    """``clamp(floor(sum of top_q clamped IoUs), t_min, min(k_max, len))``."""
    col = np.clip(np.nan_to_num(np.asarray(liou_column, dtype=np.float64), nan=0.0), 0.0, 1.0)
    if col.size == 0:
        raise ValueError("liou column must be non-empty")
    top = np.sort(col)[::-1][: cfg.top_q]
    k = max(int(math.floor(top.sum() + 1e-12)), cfg.t_min)
    return min(k, cfg.k_max, col.size)


def _cap_demand(ks: list[int], capacity: int, t_min: int) -> list[int]:
    ks = list(ks)
    for floor in (t_min, 1):
        while sum(ks) > capacity:
            big = max(ks)
            if big <= floor:
                break
            g = max(i for i, k in enumerate(ks) if k == big)
            ks[g] -= 1
    return ks


def ota_assign(cost, liou, cfg: OtaConfig) -> dict[int, list[int]]:
    """Dynamic-k positives per ground truth with no anchor shared.

    Every gt proposes to its candidates in increasing cost; an anchor wanted
    by several gts stays with the cheapest one (lower gt index on ties), and
    a gt that loses an anchor backfills from its next candidate.  Sentinel
    entries are never assigned.  Returns gt index -> sorted anchor indices.
    """
    cost = np.asarray(cost, dtype=np.float64)
    liou = np.asarray(liou, dtype=np.float64)
    if cost.shape != liou.shape or cost.ndim != 2:
        raise ShapeError("cost and liou must be matching (A, G) matrices")
    A, G = cost.shape
    eligible = np.isfinite(cost) & (cost < SENTINEL_COST)
    prefs, ks = [], []
    for g in range(G):
        cand = np.flatnonzero(eligible[:, g])
        cand = cand[np.lexsort((cand, cost[cand, g]))]
        prefs.append(cand)
        ks.append(dynamic_k(liou[cand, g], cfg) if cand.size else 0)
    ks = _cap_demand(ks, int(eligible.any(axis=1).sum()), cfg.t_min)

    holder = np.full(A, -1)
    held = [0] * G
    ptr = [0] * G
    while True:
        waiting = [g for g in range(G) if held[g] < ks[g] and ptr[g] < prefs[g].size]
        if not waiting:
            break
        g = waiting[0]
        a = prefs[g][ptr[g]]
        ptr[g] += 1
        h = holder[a]
        if h < 0:
            holder[a] = g
            held[g] += 1
        elif (cost[a, g], g) < (cost[a, h], h):
            holder[a] = g
            held[g] += 1
            held[h] -= 1
    return {g: sorted(int(a) for a in np.flatnonzero(holder == g)) for g in range(G)}


def select_fully_positive(cost, positives: dict[int, list[int]]) -> dict[int, int]:
    """Hungarian pick of one anchor per gt, restricted to that gt's own positives."""
    cost = np.asarray(cost, dtype=np.float64)
    gts = [g for g in sorted(positives) if positives[g]]
    if not gts:
        return {}
    cols = sorted(a for g in gts for a in positives[g])
    sub = np.full((len(gts), len(cols)), np.inf)
    col_of = {a: j for j, a in enumerate(cols)}
    for i, g in enumerate(gts):
        for a in positives[g]:
            sub[i, col_of[a]] = cost[a, g]
    mapping, _ = hungarian(sub)
    return {gts[i]: cols[j] for i, j in mapping.items()}


def layer_soft_labels(r: int, N: int, layer_scores, S, fully) -> dict[int, float]:
    """Soft label per positive anchor of layer ``r`` (1-based, r < N).

    Args:
        layer_scores: scores of layer ``r`` indexed by anchor.
        S: positive anchor indices (all gts together).
        fully: collection of fully positive anchor indices.
    """
    if not 1 <= r <= N - 1:
        raise ValueError(f"soft labels are defined for 1 <= r <= N-1, got r={r}, N={N}")
    S = list(S)
    if not S:
        raise ValueError("positive set is empty")
    scores = np.asarray(layer_scores, dtype=np.float64)
    top = max(scores[j] for j in S)
    if not top > 0:
        raise DegenerateScoreError("maximum positive score is zero")
    factor = (N - r) / (N - 1)
    fully = set(fully)
    return {j: 1.0 if j in fully else float(factor * (scores[j] / top)) for j in S}


def _pair_liou(params, offsets, anchors, gts_idx, gts, geo):
    if not anchors:
        return []
    xs, valid = rasterize(params[anchors], offsets[anchors], geo)
    out = []
    for k, g in enumerate(gts_idx):
        line = gts[g].polyline
        out.append(float(pairwise_line_iou(xs[k], valid[k], line.xs, line.valid, geo.liou_radius)[0, 0]))
    return out


def one_to_several(traces, gts, cfg: OtaConfig, geo: GeometryConfig) -> list[LayerAssignment]:
    """Assign labels for every layer from the last layer's OTA result."""
    N = len(traces)
    if N < 2:
        raise ValueError("one-to-several assignment needs at least 2 layers")
    arrays = [t.arrays() for t in traces]
    K = arrays[-1][0].shape[0]
    if any(a[0].shape[0] != K for a in arrays):
        raise ShapeError("every layer must carry the same number of predictions")
    if not gts:
        return [LayerAssignment(r, (), tuple(range(K))) for r in range(1, N + 1)]

    scores_N, params_N, offsets_N = arrays[-1]
    cost, liou = ota_matrices(scores_N, params_N, offsets_N, gts, cfg, geo)
    positives = ota_assign(cost, liou, cfg)
    fully = select_fully_positive(cost, positives)
    fully_set = set(fully.values())
    pairs = sorted((a, g) for g, anchors in positives.items() for a in anchors)
    S = [a for a, _ in pairs]

    out = []
    for r in range(1, N):
        scores, params, offsets = arrays[r - 1]
        lious = _pair_liou(params, offsets, S, [g for _, g in pairs], gts, geo)
        d = layer_soft_labels(r, N, scores, S, fully_set) if S else {}
        records = tuple(
            PositiveRecord(a, g, d[a], lious[k], a in fully_set) for k, (a, g) in enumerate(pairs)
        )
        out.append(LayerAssignment(r, records, tuple(sorted(set(range(K)) - set(S)))))

    last_pairs = sorted((a, g) for g, a in fully.items())
    lious = _pair_liou(params_N, offsets_N, [a for a, _ in last_pairs], [g for _, g in last_pairs], gts, geo)
    records = tuple(PositiveRecord(a, g, 1.0, lious[k], True) for k, (a, g) in enumerate(last_pairs))
    out.append(LayerAssignment(N, records, tuple(sorted(set(range(K)) - fully_set))))
    return out

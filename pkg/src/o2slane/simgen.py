"""Seeded synthetic lane scenes and perturbed predictions."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .decoder import Prediction
from .errors import GenerationError
from .geometry import (
    GeometryConfig,
    GroundTruthLane,
    LaneAnchor,
    anchor_to_polyline,
    default_anchors,
    offsets_for_polyline,
)

MAX_LANES = 4
MIN_GAP_PX = 20.0
MAX_RETRIES = 200


@dataclass(frozen=True)
class Noise:
    x_sigma: float = 0.0  # normalized width units
    theta_sigma: float = 0.0  # radians
    drop_prob: float = 0.0
    clutter_count: int = 0

    def __post_init__(self):
        if self.x_sigma < 0 or self.theta_sigma < 0:
            raise ValueError("noise sigmas must be non-negative")
        if not 0.0 <= self.drop_prob <= 1.0:
            raise ValueError("drop_prob must lie in [0, 1]")
        if self.clutter_count < 0:
            raise ValueError("clutter_count must be non-negative")


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    num_lanes: int = 4
    curvature_range: tuple = (-0.05, 0.05)
    geo: GeometryConfig = field(default_factory=GeometryConfig)
    noise: Noise = field(default_factory=Noise)

    def __post_init__(self):
        if not 1 <= self.num_lanes <= MAX_LANES:
            raise ValueError(f"num_lanes must lie in [1, {MAX_LANES}], got {self.num_lanes}")
        lo, hi = self.curvature_range
        if lo > hi:
            raise ValueError("curvature_range must be (low, high) with low <= high")


def _lane(sx, sy, theta, length, curvature, geo: GeometryConfig) -> GroundTruthLane:
    # x(y) = ray(y) + curvature * W * (relative height)^2 -> quadratic in y
    z = geo.num_points
    t = np.clip(np.arange(z) / (z - 1) - sy, 0.0, None)
    anchor = LaneAnchor(sx, sy, theta, length, curvature * t ** 2)
    return GroundTruthLane(anchor_to_polyline(anchor, geo), sx, sy, theta, length)


def _non_crossing(lanes) -> bool:
    for i in range(len(lanes)):
        for j in range(i + 1, len(lanes)):
            a, b = lanes[i].polyline, lanes[j].polyline
            common = a.valid & b.valid
            if not common.any():
                continue
            d = a.xs[common] - b.xs[common]
            if not (np.all(d > MIN_GAP_PX) or np.all(d < -MIN_GAP_PX)):
                return False
    return True


def gen_scene(spec: SceneSpec) -> list[GroundTruthLane]:
    """Quadratic lanes rising from the bottom edge toward a shared vanishing region."""
    geo = spec.geo
    rng = np.random.default_rng(spec.seed)
    W, H = geo.image_width, geo.image_height
    lo, hi = spec.curvature_range
    for _ in range(MAX_RETRIES):
        vx = rng.uniform(0.4, 0.6) * W
        vy = rng.uniform(0.55, 0.75) * H
        starts = np.sort(rng.uniform(0.05, 0.95, spec.num_lanes))
        lanes = []
        for sx in starts:
            sy = float(rng.uniform(0.0, 0.1))
            theta = math.atan2(vy - sy * H, sx * W - vx)
            length = float(rng.uniform(0.7, 0.95)) * (vy / H - sy)
            curvature = float(rng.uniform(lo, hi)) if hi > lo else float(lo)
            lanes.append(_lane(float(sx), sy, theta, length, curvature, geo))
        if all(l.polyline.valid.sum() >= 2 for l in lanes) and _non_crossing(lanes):
            return lanes
    raise GenerationError(f"could not place {spec.num_lanes} non-crossing lanes in {MAX_RETRIES} attempts")


def lane_prediction(gt: GroundTruthLane, geo: GeometryConfig, score: float = 1.0, anchor_index: int = 0, layer: int = 0) -> Prediction:
    """Prediction whose rasterization reproduces ``gt`` exactly on the gt's valid rows."""
    offsets = offsets_for_polyline(gt.params, gt.polyline, geo)
    return Prediction(score, gt.start_x, gt.start_y, gt.theta, gt.length, offsets, layer, anchor_index)


def perturb(gts, spec: SceneSpec) -> list[Prediction]:
    """Noisy, scored predictions for a scene: true lanes (maybe dropped) plus low-score clutter."""
    geo, noise = spec.geo, spec.noise
    rng = np.random.default_rng([spec.seed, 1])
    preds = []
    for gt in gts:
        drop = rng.random() < noise.drop_prob
        dx = rng.normal(0.0, noise.x_sigma) if noise.x_sigma > 0 else 0.0
        dth = rng.normal(0.0, noise.theta_sigma) if noise.theta_sigma > 0 else 0.0
        score = float(rng.uniform(0.7, 0.99))
        if drop:
            continue
        base = lane_prediction(gt, geo, score)
        theta = float(np.clip(gt.theta + dth, 1e-3, math.pi - 1e-3))
        # keep the gt curve shape; shift it sideways and rotate its ray
        offsets = base.offsets + dx
        preds.append(Prediction(score, gt.start_x, gt.start_y, theta, gt.length, offsets, 0, len(preds)))
    for _ in range(noise.clutter_count):
        sx, sy = rng.uniform(0.0, 1.0), rng.uniform(0.0, 0.3)
        theta = float(rng.uniform(math.pi / 6, 5 * math.pi / 6))
        length = float(rng.uniform(0.2, 1.0 - sy))
        score = float(rng.uniform(0.01, 0.3))
        preds.append(Prediction(score, float(sx), float(sy), theta, length, np.zeros(geo.num_points), 0, len(preds)))
    return preds


def scene_layers(gts, spec: SceneSpec, num_anchors: int, num_layers: int, shrink: float = 0.5) -> list[list[Prediction]]:
    """Per-layer prediction sets of size ``num_anchors`` for assignment demos.

    Slots ``0..P-1`` hold the perturbed lanes with noise scaled by
    ``shrink**(r - 1)`` in layer ``r`` (later layers are more accurate); the
    remaining slots are low-score background anchors.
    """
    geo = spec.geo
    layers = []
    background = default_anchors(num_anchors, geo)
    for r in range(1, num_layers + 1):
        scale = shrink ** (r - 1)
        noise = spec.noise
        layer_spec = SceneSpec(
            spec.seed, spec.num_lanes, spec.curvature_range, geo,
            Noise(noise.x_sigma * scale, noise.theta_sigma * scale, noise.drop_prob, noise.clutter_count),
        )
        preds = perturb(gts, layer_spec)[:num_anchors]
        rng = np.random.default_rng([spec.seed, 2, r])
        for k in range(len(preds), num_anchors):
            a = background[k]
            preds.append(Prediction(float(rng.uniform(0.01, 0.2)), a.start_x, a.start_y, a.theta, a.length, a.offsets, r, k))
        layers.append([
            Prediction(p.score, p.start_x, p.start_y, p.theta, p.length, p.offsets, r, k) for k, p in enumerate(preds)
        ])
    return layers


def perfect_layers(gts, geo: GeometryConfig, num_layers: int, eps: float = 1e-9) -> list[list[Prediction]]:
    """Predictions whose one-to-several loss is (numerically) zero.

    Every gt gets two exact copies: a confident one (score ``1 - eps``) that
    becomes the fully positive anchor, and a silent duplicate (score ``eps``)
    whose soft-label target is ~0 in every layer.
    """
    layers = []
    for r in range(1, num_layers + 1):
        preds = []
        for g in gts:
            for score in (1.0 - eps, eps):
                p = lane_prediction(g, geo, score, len(preds), r)
                preds.append(p)
        layers.append(preds)
    return layers

"""Lane-anchor geometry: row sampling, ray rasterization, Line-IoU and OTA distance costs.

Conventions
-----------
* Row ``i`` sits at ``y_i = H / (z - 1) * i`` measured from the *bottom* edge
  upward, so row 0 is the bottom of the image.
* Anchor fields are normalized (``start_x`` by width, ``start_y`` and
  ``length`` by height, offsets by width).  Pixels only appear inside the
  rasterized :class:`LanePolyline`.
* The base ray at row ``y`` is ``start_x * W + (start_y * H - y) / tan(theta)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import DegenerateAngleError, NoOverlapError, ShapeError

ANGLE_EPS = 1e-6


@dataclass(frozen=True)
class GeometryConfig:
    image_width: float = 800.0
    image_height: float = 320.0
    num_points: int = 72
    liou_radius: float = 15.0

    def __post_init__(self):
        if self.num_points < 2:
            raise ValueError(f"num_points must be >= 2, got {self.num_points}")
        if not self.image_width > 0 or not self.image_height > 0:
            raise ValueError("image dimensions must be positive")
        if not self.liou_radius > 0:
            raise ValueError("liou_radius must be positive")


@dataclass(frozen=True)
class LaneAnchor:
    start_x: float
    start_y: float
    theta: float
    length: float
    offsets: np.ndarray = field(repr=False)

    def __post_init__(self):
        offsets = np.asarray(self.offsets, dtype=np.float64)
        if offsets.ndim != 1:
            raise ShapeError("offsets must be a 1-D sequence")
        offsets.setflags(write=False)
        object.__setattr__(self, "offsets", offsets)

    @property
    def params(self) -> np.ndarray:
        return np.array([self.start_x, self.start_y, self.theta, self.length])

    def with_offsets(self, offsets) -> "LaneAnchor":
        return replace(self, offsets=np.asarray(offsets, dtype=np.float64))

    def __eq__(self, other):
        if not isinstance(other, LaneAnchor):
            return NotImplemented
        return (
            self.start_x == other.start_x
            and self.start_y == other.start_y
            and self.theta == other.theta
            and self.length == other.length
            and np.array_equal(self.offsets, other.offsets)
        )

    __hash__ = None


@dataclass(frozen=True)
class LanePolyline:
    xs: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if xs.ndim != 1 or xs.shape != valid.shape:
            raise ShapeError(f"xs {xs.shape} and valid {valid.shape} must be matching 1-D arrays")
        xs.setflags(write=False)
        valid.setflags(write=False)
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "valid", valid)

    @property
    def num_points(self) -> int:
        return self.xs.shape[0]

    def __eq__(self, other):
        if not isinstance(other, LanePolyline):
            return NotImplemented
        return np.array_equal(self.valid, other.valid) and np.array_equal(
            np.where(self.valid, self.xs, 0.0), np.where(other.valid, other.xs, 0.0)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class GroundTruthLane:
    polyline: LanePolyline
    start_x: float
    start_y: float
    theta: float
    length: float

    @property
    def params(self) -> np.ndarray:
        return np.array([self.start_x, self.start_y, self.theta, self.length])


def sample_rows(config: GeometryConfig) -> np.ndarray:
    """Pixel y-coordinates of the ``z`` sampling rows, bottom (0) to top (H)."""
    z = config.num_points
    return config.image_height / (z - 1) * np.arange(z, dtype=np.float64)


def _round_half_up(v):
    return np.floor(np.asarray(v) + 0.5)


def rasterize(params: np.ndarray, offsets: np.ndarray, config: GeometryConfig):
    """Batched anchor -> polyline.

    Args:
        params: (K, 4) array of ``(start_x, start_y, theta, length)``.
        offsets: (K, z) array of normalized offsets.

    Returns:
        ``(xs, valid)``, both (K, z).
    """
    params = np.atleast_2d(np.asarray(params, dtype=np.float64))
    offsets = np.atleast_2d(np.asarray(offsets, dtype=np.float64))
    z = config.num_points
    if params.shape[1] != 4 or offsets.shape != (params.shape[0], z):
        raise ShapeError(f"expected params (K,4) and offsets (K,{z}), got {params.shape} and {offsets.shape}")
    sx, sy, theta, length = params.T
    if np.any(np.abs(np.sin(theta)) < ANGLE_EPS):
        raise DegenerateAngleError("anchor angle within 1e-6 of 0 or pi")
    W, H = config.image_width, config.image_height
    ys = sample_rows(config)
    base = sx[:, None] * W + (sy[:, None] * H - ys[None, :]) / np.tan(theta)[:, None]
    xs = base + offsets * W
    start_row = _round_half_up(sy * (z - 1))
    end_row = _round_half_up((sy + length) * (z - 1))
    rows = np.arange(z)
    valid = (rows[None, :] >= start_row[:, None]) & (rows[None, :] <= end_row[:, None])
    valid &= (xs >= 0.0) & (xs <= W)
    return xs, valid


def anchor_to_polyline(anchor: LaneAnchor, config: GeometryConfig) -> LanePolyline:
    if anchor.offsets.shape[0] != config.num_points:
        raise ShapeError(f"anchor has {anchor.offsets.shape[0]} offsets, config expects {config.num_points}")
    xs, valid = rasterize(anchor.params[None, :], anchor.offsets[None, :], config)
    return LanePolyline(xs[0], valid[0])


def offsets_for_polyline(params, polyline: LanePolyline, config: GeometryConfig) -> np.ndarray:
    """Offsets that make the ray of ``params`` pass through ``polyline`` on its valid rows."""
    zero = np.zeros((1, config.num_points))
    base, _ = rasterize(np.asarray(params, dtype=np.float64)[None, :], zero, config)
    return np.where(polyline.valid, (polyline.xs - base[0]) / config.image_width, 0.0)


def pairwise_line_iou(xa, va, xb, vb, radius: float) -> np.ndarray:
    """Line-IoU between every row of ``xa`` and every row of ``xb``.

    Pairs without a common valid row are NaN.  Returns an (A, B) array.
    """
    xa = np.atleast_2d(xa)[:, None, :]
    xb = np.atleast_2d(xb)[None, :, :]
    common = np.atleast_2d(va)[:, None, :] & np.atleast_2d(vb)[None, :, :]
    overlap = np.minimum(xa, xb) - np.maximum(xa, xb) + 2.0 * radius
    union = np.maximum(xa, xb) - np.minimum(xa, xb) + 2.0 * radius
    num = np.where(common, overlap, 0.0).sum(axis=-1)
    den = np.where(common, union, 0.0).sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = num / den
    iou[~common.any(axis=-1)] = np.nan
    return iou


def line_iou(a: LanePolyline, b: LanePolyline, e: float) -> float:
    """Line-IoU of two polylines widened by radius ``e``; negative for far-apart lanes."""
    if a.num_points != b.num_points:
        raise ShapeError("polylines must share the number of sampling rows")
    common = a.valid & b.valid
    if not common.any():
        raise NoOverlapError("polylines have no common valid row")
    xa, xb = a.xs[common], b.xs[common]
    overlap = np.minimum(xa + e, xb + e) - np.maximum(xa - e, xb - e)
    union = np.maximum(xa + e, xb + e) - np.minimum(xa - e, xb - e)
    # sort the per-row terms so the result does not depend on argument order
    return float(np.sort(overlap).sum() / np.sort(union).sum())


def pairwise_cost_components(pred_params, pred_xs, pred_valid, gt_params, gt_xs, gt_valid, config: GeometryConfig):
    """Batched (C_dis, C_xy, C_theta), each (A, G).  C_dis is NaN where no row is shared."""
    pred_params = np.atleast_2d(pred_params)
    gt_params = np.atleast_2d(gt_params)
    common = pred_valid[:, None, :] & gt_valid[None, :, :]
    n = common.sum(axis=-1)
    dist = np.abs(pred_xs[:, None, :] - gt_xs[None, :, :]) / config.image_width
    with np.errstate(invalid="ignore", divide="ignore"):
        c_dis = np.where(common, dist, 0.0).sum(axis=-1) / n
    c_dis = np.minimum(c_dis, 1.0)
    dxy = pred_params[:, None, :2] - gt_params[None, :, :2]
    c_xy = np.minimum(np.sqrt((dxy ** 2).sum(axis=-1)) / math.sqrt(2.0), 1.0)
    c_theta = np.minimum(np.abs(pred_params[:, None, 2] - gt_params[None, :, 2]) / math.pi, 1.0)
    return c_dis, c_xy, c_theta


def cost_components(pred, gt: GroundTruthLane, config: GeometryConfig):
    """OTA distance costs between one prediction (anything with anchor fields) and a ground truth.

    Returns ``(C_dis, C_xy, C_theta)``, each in [0, 1].
    """
    anchor = pred if isinstance(pred, LaneAnchor) else pred.anchor()
    poly = anchor_to_polyline(anchor, config)
    c_dis, c_xy, c_theta = pairwise_cost_components(
        anchor.params[None, :], poly.xs[None, :], poly.valid[None, :],
        gt.params[None, :], gt.polyline.xs[None, :], gt.polyline.valid[None, :], config,
    )
    if np.isnan(c_dis[0, 0]):
        raise NoOverlapError("prediction and ground truth have no common valid row")
    return float(c_dis[0, 0]), float(c_xy[0, 0]), float(c_theta[0, 0])


def default_anchors(num_anchors: int, config: GeometryConfig) -> list[LaneAnchor]:
    """Deterministic initial anchor set: half rising from the bottom edge, a quarter from each side.

    Side anchors lean toward the image center; bottom anchors fan over [pi/6, 5pi/6].
    All offsets start at zero.
    """
    if num_anchors < 1:
        raise ValueError("num_anchors must be >= 1")
    z = config.num_points
    n_bottom = num_anchors - 2 * (num_anchors // 4)
    n_side = num_anchors // 4
    anchors = []

    def grid(n, lo, hi):
        return [lo + (hi - lo) * (k + 0.5) / n for k in range(n)]

    bottom_angles = [math.pi / 6, math.pi / 3, math.pi / 2, 2 * math.pi / 3, 5 * math.pi / 6]
    starts = grid(max(1, math.ceil(n_bottom / len(bottom_angles))), 0.0, 1.0)
    combos = [(sx, th) for sx in starts for th in bottom_angles]
    for sx, th in combos[:n_bottom]:
        anchors.append(LaneAnchor(sx, 0.0, th, 1.0, np.zeros(z)))

    side_angles = [math.pi / 9, 2 * math.pi / 9, math.pi / 3]
    ys = grid(max(1, math.ceil(n_side / len(side_angles))), 0.0, 0.8)
    side = [(sy, th) for sy in ys for th in side_angles][:n_side]
    for sy, th in side:
        anchors.append(LaneAnchor(0.0, sy, math.pi - th, 1.0 - sy, np.zeros(z)))
    for sy, th in side:
        anchors.append(LaneAnchor(1.0, sy, th, 1.0 - sy, np.zeros(z)))
    return anchors

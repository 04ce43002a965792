import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from o2slane.assignment import LayerAssignment, OtaConfig, PositiveRecord, one_to_several
from o2slane.decoder import Prediction
from o2slane.errors import LaneError, NoOverlapError, ShapeError
from o2slane.geometry import GeometryConfig, GroundTruthLane, LanePolyline
from o2slane.losses import (
    LossWeights,
    classification_loss,
    focal_term,
    focal_term_grad,
    loss_breakdown,
    regression_loss,
    regression_terms,
    smooth_l1,
    total_loss,
)
from o2slane.simgen import SceneSpec, gen_scene, lane_prediction, perfect_layers

from .conftest import as_traces

W = LossWeights()
HALF = -0.25 * math.log(0.5)  # 0.17329...

# tiny geometry so single-row lanes are easy to build
TINY = GeometryConfig(image_width=100.0, image_height=100.0, num_points=3, liou_radius=5.0)


def pred(score, sx=0.1, sy=0.5, theta=math.pi / 2, length=0.0, k=0, layer=1):
    return Prediction(score, sx, sy, theta, length, np.zeros(3), layer, k)


def one_row_gt(x, sx=0.1, sy=0.5, theta=math.pi / 2, length=0.0):
    xs = np.array([0.0, x, 0.0])
    return GroundTruthLane(LanePolyline(xs, np.array([False, True, False])), sx, sy, theta, length)


def layer(positives=(), negatives=(), r=1):
    return LayerAssignment(r, tuple(positives), tuple(negatives))


class TestFocalTerm:
    def test_hand_cases(self):
        assert HALF == pytest.approx(0.17329, abs=1e-5)
        assert focal_term(0.5, 0.0) == pytest.approx(0.17329, abs=1e-5)
        assert focal_term(0.5, 1.0) == pytest.approx(0.17329, abs=1e-5)
        assert focal_term(0.7, 0.7) == 0.0

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5])
    def test_domain(self, p):
        with pytest.raises(LaneError):
            focal_term(p, 0.5)

    def test_bad_target(self):
        with pytest.raises(LaneError):
            focal_term(0.5, 1.2)

    def test_grid_non_negative_zero_iff_equal(self):
        ps = np.linspace(0.005, 0.995, 100)
        qs = np.linspace(0.0, 1.0, 100)
        for p in ps:
            for q in qs:
                v = focal_term(p, q)
                assert v >= 0.0
                assert (v == 0.0) == (p == q)
        for p in ps:
            assert focal_term(p, p) == 0.0

    def test_finite_difference(self):
        rng = np.random.default_rng(17)
        h = 1e-6
        for _ in range(50):
            p, q = rng.uniform(0.05, 0.95), rng.uniform(0.0, 1.0)
            while abs(p - q) < 1e-3:
                q = rng.uniform(0.0, 1.0)
            fd = (focal_term(p + h, q) - focal_term(p - h, q)) / (2 * h)
            assert fd == pytest.approx(focal_term_grad(p, q), abs=1e-5)


def test_smooth_l1():
    assert smooth_l1(0.5) == 0.125
    assert smooth_l1(-2.0) == 1.5
    assert smooth_l1(0.3, beta=0.0) == 0.3


class TestClassification:
    def test_single_positive(self):
        traces = as_traces([[pred(0.5)]])
        asg = [layer([PositiveRecord(0, 0, 1.0, 1.0, True)])]
        total, per = classification_loss(asg, traces, W)
        assert total == pytest.approx(0.17329, abs=1e-5) and per == [total]

    def test_negative_adds(self):
        traces = as_traces([[pred(0.5), pred(0.5, k=1)]])
        asg = [layer([PositiveRecord(0, 0, 1.0, 1.0, True)], [1])]
        assert classification_loss(asg, traces, W)[0] == pytest.approx(2 * HALF, abs=1e-12)

    def test_exact_targets_zero(self):
        traces = as_traces([[pred(0.4), pred(0.3, k=1)]])
        asg = [layer([PositiveRecord(0, 0, 0.5, 0.8, False), PositiveRecord(1, 0, 1.0, 0.3, True)])]
        assert classification_loss(asg, traces, W)[0] == 0.0

    def test_nan_liou_targets_zero(self):
        traces = as_traces([[pred(0.5)]])
        asg = [layer([PositiveRecord(0, 0, 1.0, float("nan"), True)])]
        assert classification_loss(asg, traces, W)[0] == pytest.approx(focal_term(0.5, 0.0), abs=1e-15)

    def test_negative_liou_clamped(self):
        traces = as_traces([[pred(0.5)]])
        asg = [layer([PositiveRecord(0, 0, 1.0, -0.4, True)])]
        assert classification_loss(asg, traces, W)[0] == pytest.approx(focal_term(0.5, 0.0), abs=1e-15)

    def test_partition_required(self):
        traces = as_traces([[pred(0.5), pred(0.5, k=1)]])
        with pytest.raises(ShapeError):
            classification_loss([layer(negatives=[0])], traces, W)
        with pytest.raises(ShapeError):
            classification_loss([layer(negatives=[0, 1]), layer(negatives=[0, 1])], traces, W)

    def test_additive_over_disjoint_sets(self):
        rng = np.random.default_rng(0)
        preds = [pred(float(rng.uniform(0.05, 0.95)), k=k) for k in range(6)]
        recs = [PositiveRecord(k, 0, float(rng.random()), float(rng.random()), False) for k in range(3)]
        traces = as_traces([preds])
        full = classification_loss([layer(recs, [3, 4, 5])], traces, W)[0]
        pos = sum(focal_term(preds[k].score, recs[k].soft_label * recs[k].liou) for k in range(3))
        neg = sum(focal_term(preds[j].score, 0.0) for j in (3, 4, 5))
        assert full == pytest.approx(pos + neg, abs=1e-12)

    def test_monotone_toward_target(self):
        recs = [PositiveRecord(0, 0, 0.8, 0.9, False)]
        target = 0.72
        prev = None
        for p in (0.1, 0.3, 0.5, 0.65, 0.72):
            v = classification_loss([layer(recs, [1])], as_traces([[pred(p), pred(0.9 - p, k=1)]]), W)[0]
            if prev is not None:
                assert v <= prev
            prev = v
        assert focal_term(target, target) == 0.0


class TestRegression:
    def test_theta_error(self):
        gt = one_row_gt(10.0)
        iou_part, l1_part = regression_terms(pred(0.9, theta=math.pi / 2 + 0.5), gt, W, TINY)
        assert l1_part == pytest.approx(0.0375, abs=1e-15)

    def test_theta_error_per_layer(self):
        gt = one_row_gt(10.0, theta=math.pi / 2 - 0.5)
        traces = as_traces([[pred(0.9, layer=r)] for r in (1, 2)])
        asg = [layer([PositiveRecord(0, 0, 1.0, 1.0, True)], r=r) for r in (1, 2)]
        # the pred is vertical so its single row sits at x=10 exactly like the gt row
        total, per = regression_loss(asg, traces, [gt], W, TINY)
        assert per == [pytest.approx(0.0375, abs=1e-15)] * 2

    def test_liou_three_sevenths(self):
        gt = one_row_gt(14.0)
        traces = as_traces([[pred(0.9)]])
        asg = [layer([PositiveRecord(0, 0, 1.0, 3 / 7, True)])]
        total, per = regression_loss(asg, traces, [gt], W, TINY)
        assert total == pytest.approx(8 / 7, abs=1e-12)

    def test_iou_scaling_decomposition(self):
        gt = one_row_gt(14.0, theta=math.pi / 2 - 0.2)
        traces = as_traces([[pred(0.9)]])
        asg = [layer([PositiveRecord(0, 0, 1.0, 0.0, True)])]
        base = regression_loss(asg, traces, [gt], W, TINY)[0]
        doubled = regression_loss(asg, traces, [gt], LossWeights(lambda_iou=4.0), TINY)[0]
        iou_part, l1_part = regression_terms(pred(0.9), gt, W, TINY)
        assert base == pytest.approx(iou_part + l1_part, abs=1e-15)
        assert doubled - base == pytest.approx(iou_part, abs=1e-12)

    def test_no_overlap(self):
        gt = GroundTruthLane(LanePolyline(np.zeros(3), np.array([True, False, False])), 0.1, 0.0, math.pi / 2, 0.0)
        asg = [layer([PositiveRecord(0, 0, 1.0, 1.0, True)])]
        with pytest.raises(NoOverlapError, match="anchor 0"):
            regression_loss(asg, as_traces([[pred(0.9)]]), [gt], W, TINY)


class TestTotal:
    def test_examples(self):
        assert total_loss(0, 0, 0, W) == 0.0
        assert total_loss(1, 1, 1, W) == 4.0
        assert total_loss(0.3, 0.7, 0.0, W) == pytest.approx(2 * 0.3 + 0.7, abs=1e-15)

    def test_negative(self):
        with pytest.raises(LaneError):
            total_loss(-1, 0, 0, W)

    @given(st.floats(0, 10), st.floats(0, 10), st.floats(0, 10))
    def test_weighting(self, c, r, s):
        w = LossWeights(lambda_cls=2, lambda_iou=2, lambda_l1=0.3, lambda_seg=1)
        assert total_loss(c, r, s, w) == pytest.approx(2 * c + r + s, rel=1e-12, abs=1e-12)


def test_perfect_predictions_zero_loss():
    geo = GeometryConfig()
    for seed in range(5):
        gts = gen_scene(SceneSpec(seed, 1 + seed % 4))
        traces = as_traces(perfect_layers(gts, geo, 6))
        asg = one_to_several(traces, gts, OtaConfig(), geo)
        b = loss_breakdown(asg, traces, gts, W, geo)
        assert b.total < 1e-12 and b.reg < 1e-12 and b.cls < 1e-12


def test_breakdown_decomposes():
    geo = GeometryConfig()
    gts = gen_scene(SceneSpec(2, 3))
    layers = perfect_layers(gts, geo, 3)
    layers = [[Prediction(0.6, p.start_x, p.start_y, p.theta + 0.01, p.length, p.offsets, p.layer, p.anchor_index)
               for p in preds] for preds in layers]
    traces = as_traces(layers)
    asg = one_to_several(traces, gts, OtaConfig(), geo)
    b = loss_breakdown(asg, traces, gts, W, geo, seg=0.5)
    assert b.total == pytest.approx(2 * b.cls + b.reg + 0.5, abs=1e-12)
    assert b.cls == pytest.approx(sum(c for c, _ in b.per_layer), abs=1e-12)
    assert b.reg == pytest.approx(sum(r for _, r in b.per_layer), abs=1e-12)
    assert b.cls > 0 and b.reg > 0

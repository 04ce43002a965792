"""Acceptance checks, one per headline criterion.

Run with pytest (each check prints a PASS/FAIL line even under capture) or
directly: ``python3 -m tests.test_acceptance``.
"""
import io as _io
import json
import math
import statistics
import time
from contextlib import redirect_stderr, redirect_stdout

import numpy as np
import pytest

from o2slane.assignment import OtaConfig, layer_soft_labels, one_to_several
from o2slane.cli import main as cli_main
from o2slane.decoder import DecoderConfig, DecoderWeights, FeatureMap, cross_attention, decoder_forward, self_attention
from o2slane.encoding import positional_queries
from o2slane.evaluation import EvalConfig, EvalCounts, aggregate, f1, match_image
from o2slane.geometry import GeometryConfig, LanePolyline, anchor_to_polyline, default_anchors, line_iou
from o2slane.hungarian import hungarian
from o2slane.losses import LossWeights, focal_term, focal_term_grad, loss_breakdown, regression_loss, total_loss
from o2slane.simgen import SceneSpec, gen_scene, perfect_layers

from .conftest import as_traces, random_polyline, scene_traces
from .test_geometry import brute_line_iou, one_row
from .test_hungarian import brute
from .test_losses import TINY, layer, one_row_gt, pred

GEO = GeometryConfig()
OTA = OtaConfig()
SCENES = 100


def _scene(seed):
    return scene_traces(seed, lanes=1 + seed % 4)


def check_hungarian():
    rng = np.random.default_rng(99)
    t0 = time.perf_counter()
    for _ in range(200):
        n, m = (int(v) for v in rng.integers(1, 7, 2))
        cost = rng.uniform(-5, 5, (n, m))
        _, total = hungarian(cost)
        assert total == brute(cost)[0], f"total mismatch on {n}x{m}"
    elapsed = time.perf_counter() - t0
    assert elapsed < 5.0, f"took {elapsed:.2f}s"
    return f"200 matrices, {elapsed:.2f}s"


def check_ota_constraints():
    violations = 0
    for seed in range(SCENES):
        gts, traces = _scene(seed)
        assert len(traces[-1].predictions) == 192
        first = one_to_several(traces, gts, OTA, GEO)[0]
        anchors = [p.anchor_index for p in first.positives]
        violations += len(anchors) != len(set(anchors))
        for g in range(len(gts)):
            k = sum(p.gt_index == g for p in first.positives)
            violations += not 2 <= k <= OTA.k_max
    assert violations == 0, f"{violations} violations"
    return f"{SCENES} scenes, 0 violations"


def check_soft_labels():
    for r in range(1, 6):
        d = layer_soft_labels(r, 6, [0.7, 0.7], [0, 1], {1})
        assert abs(d[0] - (6 - r) / 5) <= 1e-12
        assert d[1] == 1.0
    for seed in range(20):
        gts, traces = _scene(seed)
        out = one_to_several(traces, gts, OTA, GEO)
        fully = set(out[-1].fully_positive.values())
        pairs = out[0].pairs()
        for a in out[:-1]:
            assert a.pairs() == pairs
            for p in a.positives:
                assert 0.0 <= p.soft_label <= 1.0
                if p.anchor_index in fully:
                    assert p.is_fully_positive and p.soft_label == 1.0
    return "factor exact for r=1..5, sets shared"


def check_liou():
    poly = anchor_to_polyline(default_anchors(8, GEO)[0], GEO)
    assert line_iou(poly, poly, 15.0) == 1.0
    rng = np.random.default_rng(7)
    n = 0
    while n < 1000:
        a, b = random_polyline(rng, 72), random_polyline(rng, 72)
        if not (a.valid & b.valid).any():
            continue
        v = line_iou(a, b, 15.0)
        assert abs(v - line_iou(b, a, 15.0)) <= 1e-12
        assert abs(v - brute_line_iou(a, b, 15.0)) <= 1e-9
        n += 1
    assert line_iou(one_row(10.0), one_row(14.0), 5.0) == 3 / 7
    assert line_iou(one_row(0.0), one_row(20.0), 5.0) == -1 / 3
    return "1000 oracle pairs"


def check_losses():
    w = LossWeights(2, 2, 0.3, 1)
    for seed in range(5):
        gts = gen_scene(SceneSpec(seed, 1 + seed % 4))
        traces = as_traces(perfect_layers(gts, GEO, 6))
        b = loss_breakdown(one_to_several(traces, gts, OTA, GEO), traces, gts, w, GEO)
        assert b.total < 1e-12, b.total
    assert abs(focal_term(0.5, 0.0) - 0.17329) < 1e-5 and abs(focal_term(0.5, 1.0) - 0.17329) < 1e-5
    rng = np.random.default_rng(3)
    for _ in range(50):
        p, q = rng.uniform(0.05, 0.95), rng.uniform(0, 1)
        h = 1e-6
        fd = (focal_term(p + h, q) - focal_term(p - h, q)) / (2 * h)
        assert abs(fd - focal_term_grad(p, q)) < 1e-5
    # weighting by decomposition
    assert total_loss(1, 1, 1, w) == 4.0
    from o2slane.assignment import PositiveRecord

    traces = as_traces([[pred(0.9)]])
    asg = [layer([PositiveRecord(0, 0, 1.0, 3 / 7, True)])]
    gt = one_row_gt(14.0, theta=math.pi / 2 - 0.5)
    reg = regression_loss(asg, traces, [gt], w, TINY)[0]
    assert abs(reg - (2 * (1 - 3 / 7) + 0.3 * 0.125)) < 1e-12
    return "perfect total < 1e-12, FD 50 points"


def check_decoder():
    cfg = DecoderConfig()
    weights = DecoderWeights.init(0, cfg)
    fmap = FeatureMap.random(1, 10, 25, cfg.dim)
    anchors = default_anchors(192, GEO)
    traces = decoder_forward(anchors, fmap, weights)
    assert len(traces) == 6 and all(len(t.predictions) == 192 for t in traces)
    assert all(p.offsets.shape == (72,) for t in traces for p in t.predictions)

    rng = np.random.default_rng(0)
    P, M = positional_queries(anchors, weights.encoding, cfg.encoding)
    content = rng.normal(size=(192, cfg.dim))
    for lw in weights.layers:
        _, w_sa = self_attention(content, P, lw, cfg.num_heads, return_weights=True)
        _, w_ca = cross_attention(content, M, fmap, lw, cfg, return_weights=True)
        assert np.abs(w_sa.sum(-1) - 1).max() <= 1e-9 and np.abs(w_ca.sum(-1) - 1).max() <= 1e-9

    fixed = decoder_forward(anchors, fmap, weights.with_zero_update())
    assert all(a == b for t in fixed for a, b in zip(anchors, t.anchors_after))

    perm = rng.permutation(192)
    permuted = decoder_forward([anchors[i] for i in perm], fmap, weights)
    for tb, tp in zip(traces, permuted):
        for new_k, old_k in enumerate(perm):
            p, q = tp.predictions[new_k], tb.predictions[old_k]
            assert p.params.tobytes() == q.params.tobytes() and p.score == q.score
            assert p.offsets.tobytes() == q.offsets.tobytes()
    return "6 x 192 x 72, bitwise equivariant"


def check_one_to_one():
    for seed in range(SCENES):
        gts, traces = _scene(seed)
        last = one_to_several(traces, gts, OTA, GEO)[-1]
        assert len(last.positives) == min(len(gts), 192)
        assert all(p.is_fully_positive for p in last.positives)
        assert len(last.fully_positive) == len(gts)
        assert len({p.anchor_index for p in last.positives}) == len(gts)
    return f"{SCENES} scenes"


def check_evaluation():
    cfg = EvalConfig()
    for seed in range(20):
        G = 1 + seed % 4
        gts = [g.polyline for g in gen_scene(SceneSpec(seed, G))]
        c = match_image([(1.0, g) for g in gts], gts, cfg, GEO)
        assert f1(c)[2] == 1.0
        c = match_image([(1.0, g) for g in gts[1:]], gts, cfg, GEO)
        assert f1(c)[1] == (G - 1) / G
        c = match_image([(1.0, gts[0]), (0.9, gts[0])], gts, cfg, GEO)
        assert c.fp == 1
    items = [EvalCounts(i % 3, i % 2, (i * 7) % 5) for i in range(12)]
    rng = np.random.default_rng(0)
    assert all(aggregate([items[i] for i in rng.permutation(12)]) == aggregate(items) for _ in range(20))
    return "F1, recall, duplicates, aggregation"


def check_performance():
    gts, traces = scene_traces(0, lanes=4, anchors=192, layers=6)
    one_to_several(traces, gts, OTA, GEO)
    samples = []
    for _ in range(30):
        t0 = time.perf_counter()
        one_to_several(traces, gts, OTA, GEO)
        samples.append((time.perf_counter() - t0) * 1e3)
    median = statistics.median(samples)
    out = _io.StringIO()
    with redirect_stdout(out), redirect_stderr(_io.StringIO()):
        code = cli_main(["bench", "--iters", "5"])
    doc = json.loads(out.getvalue())
    assert code == 0 and doc["phases"]["total"]["median_ms"] > 0
    assert median < 50.0, f"median {median:.1f} ms"
    return f"median {median:.1f} ms, bench total {doc['phases']['total']['median_ms']:.1f} ms"


CHECKS = [
    ("Hungarian oracle equivalence", check_hungarian),
    ("OTA constraints", check_ota_constraints),
    ("Soft-label suite", check_soft_labels),
    ("LIOU suite", check_liou),
    ("Loss suite", check_losses),
    ("Decoder suite", check_decoder),
    ("End-to-end one-to-one property", check_one_to_one),
    ("Evaluation suite", check_evaluation),
    ("Performance smoke", check_performance),
]


def run_check(name, fn):
    try:
        detail = fn()
    except AssertionError as exc:
        return False, f"FAIL  {name}: {exc}"
    return True, f"PASS  {name} ({detail})"


@pytest.mark.parametrize("name, fn", CHECKS, ids=[c[0] for c in CHECKS])
def test_criterion(name, fn, capsys):
    ok, line = run_check(name, fn)
    with capsys.disabled():
        print(f"\n[acceptance] {line}")
    assert ok, line


if __name__ == "__main__":
    results = [run_check(n, f) for n, f in CHECKS]
    for _, line in results:
        print(line)
    raise SystemExit(0 if all(ok for ok, _ in results) else 1)

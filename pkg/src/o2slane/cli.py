"""``o2slane`` command line: gen, forward, assign, loss, eval, bench.

Exit codes: 0 success, 1 usage, 2 input/schema, 3 internal invariant breach.
"""
from __future__ import annotations

import argparse
import json
import os
import statistics
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import io
from .assignment import OtaConfig, layer_soft_labels, one_to_several, ota_assign, ota_matrices, select_fully_positive
from .decoder import DecoderConfig, DecoderWeights, FeatureMap, LayerTrace, decoder_forward
from .errors import LaneError, SchemaError
from .evaluation import EvalConfig, EvalCounts, aggregate, match_image, report
from .geometry import GeometryConfig, anchor_to_polyline, default_anchors
from .losses import LossWeights, loss_breakdown
from .simgen import MAX_LANES, Noise, SceneSpec, gen_scene, perfect_layers, scene_layers

EXIT_USAGE, EXIT_INPUT, EXIT_INTERNAL = 1, 2, 3
THREADS_ENV = "O2SLANE_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _emit(doc, out):
    text = io.dumps(doc)
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _geometry(args) -> GeometryConfig:
    return GeometryConfig(args.width, args.height, args.num_points, args.liou_radius)


def _add_geometry(p):
    p.add_argument("--width", type=float, default=800.0)
    p.add_argument("--height", type=float, default=320.0)
    p.add_argument("--num-points", type=int, default=72)
    p.add_argument("--liou-radius", type=float, default=15.0)


def _add_decoder(p):
    p.add_argument("--weights-seed", type=int, default=0)
    p.add_argument("--weights-file", help="JSON (.json) or binary weights file; overrides --weights-seed")
    p.add_argument("--anchors", type=int, default=192)
    p.add_argument("--layers", type=int, default=6)
    p.add_argument("--dim", type=int, default=256)
    p.add_argument("--heads", type=int, default=8)
    p.add_argument("--feature-seed", type=int, default=0)
    p.add_argument("--feature-size", default="10x25", help="HxW of the synthetic feature map")
    p.add_argument("--feature-pattern", choices=["random", "analytic"], default="random")


def _add_ota(p):
    p.add_argument("--w-sim", type=float, default=3.0)
    p.add_argument("--w-cls", type=float, default=1.0)
    p.add_argument("--t-min", type=int, default=2)
    p.add_argument("--top-q", type=int, default=4)
    p.add_argument("--k-max", type=int, default=8)


def _ota(args) -> OtaConfig:
    return OtaConfig(w_sim=args.w_sim, w_cls=args.w_cls, t_min=args.t_min, top_q=args.top_q, k_max=args.k_max)


def _run_forward(args, geo: GeometryConfig) -> list[LayerTrace]:
    if args.weights_file:
        weights = io.load_weights(args.weights_file)
        if weights.config.num_points != geo.num_points:
            raise SchemaError(f"weights expect z={weights.config.num_points}, scene has z={geo.num_points}")
    else:
        cfg = DecoderConfig(num_layers=args.layers, dim=args.dim, num_heads=args.heads, num_points=geo.num_points)
        weights = DecoderWeights.init(args.weights_seed, cfg)
    try:
        h, w = (int(v) for v in args.feature_size.lower().split("x"))
    except ValueError:
        raise UsageError(f"--feature-size must look like HxW, got {args.feature_size!r}") from None
    D = weights.config.dim
    if args.feature_pattern == "random":
        fmap = FeatureMap.random(args.feature_seed, h, w, D)
    else:
        fmap = FeatureMap.patterned(h, w, D)
    return decoder_forward(default_anchors(args.anchors, geo), fmap, weights)


def _scene_traces(args):
    geo, gts, preds, category = io.read_scene(args.scene)
    if getattr(args, "trace", None):
        traces = io.traces_from_json(io.read_json(args.trace), geo.num_points)
    elif preds is not None:
        traces = [LayerTrace(layer, [p.anchor() for p in layer]) for layer in preds]
    else:
        traces = _run_forward(args, geo)
    return geo, gts, traces


# -- commands ------------------------------------------------------------------------

def cmd_gen(args):
    if not 1 <= args.lanes <= MAX_LANES:
        raise UsageError(f"--lanes must lie in [1, {MAX_LANES}], got {args.lanes}")
    geo = _geometry(args)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise SchemaError(f"cannot create {out}: {exc.strerror or exc}") from None
    written = []
    for i in range(args.count):
        seed = args.seed + i
        spec = SceneSpec(seed, args.lanes, tuple(args.curvature), geo,
                         Noise(args.x_sigma, args.theta_sigma, args.drop_prob, args.clutter))
        gts = gen_scene(spec)
        if args.perfect:
            preds = perfect_layers(gts, geo, args.layers)
        else:
            preds = scene_layers(gts, spec, args.anchors, args.layers) if args.anchors > 0 else None
        stem = out / f"scene_{seed:05d}"
        try:
            io.write_json(stem.with_suffix(".json"), io.scene_to_json(geo, gts, preds, args.category))
            if args.culane:
                name = f"scene_{seed:05d}.lines.txt"
                (out / "culane" / "gt").mkdir(parents=True, exist_ok=True)
                (out / "culane" / "gt" / name).write_text(io.format_lines_txt([g.polyline for g in gts], geo))
                if preds is not None:
                    kept = [anchor_to_polyline(p.anchor(), geo) for p in preds[-1] if p.score >= 0.5]
                    (out / "culane" / "pred").mkdir(exist_ok=True)
                    (out / "culane" / "pred" / name).write_text(io.format_lines_txt(kept, geo))
        except OSError as exc:
            raise SchemaError(f"cannot write under {out}: {exc.strerror or exc}") from None
        written.append(str(stem.with_suffix(".json")))
    print(json.dumps({"written": written}))


def cmd_forward(args):
    geo = io.read_scene(args.scene)[0] if args.scene else _geometry(args)
    traces = _run_forward(args, geo)
    _emit(io.traces_to_json(traces), args.out)


def cmd_assign(args):
    geo, gts, traces = _scene_traces(args)
    assignments = one_to_several(traces, gts, _ota(args), geo)
    _emit(io.assignments_to_json(assignments), args.out)


def cmd_loss(args):
    geo, gts, traces = _scene_traces(args)
    assignments = one_to_several(traces, gts, _ota(args), geo)
    w = LossWeights(args.lambda_cls, args.lambda_iou, args.lambda_l1, args.lambda_seg)
    _emit(io.loss_to_json(loss_breakdown(assignments, traces, gts, w, geo, seg=args.seg)), args.out)


def _eval_items(args):
    """Yield ``(name, category, preds, gt polylines, geo)`` per image."""
    if args.gt_dir:
        geo = _geometry(args)
        gt_dir, pred_dir = Path(args.gt_dir), Path(args.pred_dir or "")
        if not gt_dir.is_dir() or not args.pred_dir or not pred_dir.is_dir():
            raise SchemaError("--gt-dir and --pred-dir must both be existing directories")
        for gt_path in sorted(gt_dir.rglob("*.lines.txt")):
            rel = gt_path.relative_to(gt_dir)
            pred_path = pred_dir / rel
            gts = [g.polyline for g in io.read_lines_txt(gt_path, geo)]
            preds = [(1.0, g.polyline) for g in io.read_lines_txt(pred_path, geo)] if pred_path.exists() else []
            yield str(rel), None, preds, gts, geo
        return
    paths = []
    for s in args.scenes:
        p = Path(s)
        paths.extend(sorted(p.glob("*.json")) if p.is_dir() else [p])
    if not paths:
        raise SchemaError("no scene files given")
    for path in paths:
        geo, gts, preds, category = io.read_scene(path)
        if preds is None:
            raise SchemaError(f"{path}: scene has no predictions to evaluate")
        scored = [(p.score, anchor_to_polyline(p.anchor(), geo)) for p in preds[-1]]
        yield str(path), category or args.category, scored, [g.polyline for g in gts], geo


def cmd_eval(args):
    cfg = EvalConfig(args.liou_threshold, args.score_threshold)
    items = list(_eval_items(args))
    jobs = args.jobs or int(os.environ.get(THREADS_ENV, "1"))
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        counts = list(pool.map(lambda it: match_image(it[2], it[3], cfg, it[4]), items))
    per_category = {}
    for it, c in zip(items, counts):
        if it[1] is not None:
            per_category[it[1]] = per_category.get(it[1], EvalCounts()) + c
    doc = report(aggregate(counts), per_category or None)
    doc["images"] = len(items)
    _emit(doc, args.out)


def bench_assignment(num_anchors: int, num_gts: int, num_layers: int, iters: int, seed: int = 0) -> dict:
    """Median wall time per phase of one assignment pass on a synthetic scene."""
    geo = GeometryConfig()
    spec = SceneSpec(seed, num_gts, (-0.05, 0.05), geo, Noise(0.01, 0.02, 0.0, 0))
    gts = gen_scene(spec)
    traces = [LayerTrace(l, []) for l in scene_layers(gts, spec, num_anchors, num_layers)]
    cfg = OtaConfig()
    phases = {"cost_matrix": [], "ota": [], "hungarian": [], "soft_labels": [], "total": []}
    for _ in range(iters):
        t0 = time.perf_counter()
        scores, params, offsets = traces[-1].arrays()
        cost, liou = ota_matrices(scores, params, offsets, gts, cfg, geo)
        t1 = time.perf_counter()
        positives = ota_assign(cost, liou, cfg)
        t2 = time.perf_counter()
        fully = select_fully_positive(cost, positives)
        t3 = time.perf_counter()
        S = sorted(a for v in positives.values() for a in v)
        for r in range(1, num_layers):
            layer_soft_labels(r, num_layers, traces[r - 1].arrays()[0], S, fully.values())
        t4 = time.perf_counter()
        one_to_several(traces, gts, cfg, geo)
        t5 = time.perf_counter()
        for k, v in zip(phases, (t1 - t0, t2 - t1, t3 - t2, t4 - t3, t5 - t4)):
            phases[k].append(v * 1e3)
    stats = {}
    for k, v in phases.items():
        row = {"median_ms": statistics.median(v), "samples": len(v)}
        if len(v) > 1:
            row.update(min_ms=min(v), max_ms=max(v), stdev_ms=statistics.stdev(v))
        stats[k] = row
    return {"anchors": num_anchors, "gts": num_gts, "layers": num_layers, "iters": iters, "phases": stats}


def cmd_bench(args):
    for name in ("anchors", "gts", "layers", "iters"):
        if getattr(args, name) < 1:
            raise UsageError(f"--{name} must be positive")
    if args.gts > MAX_LANES:
        raise UsageError(f"--gts must be <= {MAX_LANES}")
    if args.layers < 2:
        raise UsageError("--layers must be >= 2")
    result = bench_assignment(args.anchors, args.gts, args.layers, args.iters, args.seed)
    lines = [f"assignment bench: {args.anchors} anchors x {args.gts} gts x {args.layers} layers, {args.iters} iters",
             f"{'phase':<12} {'median ms':>10}"]
    for k, row in result["phases"].items():
        lines.append(f"{k:<12} {row['median_ms']:>10.3f}")
    print("\n".join(lines), file=sys.stderr)
    _emit(result, args.out)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="o2slane", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="write synthetic scene files")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lanes", type=int, default=4)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--curvature", type=float, nargs=2, default=(-0.05, 0.05), metavar=("LO", "HI"))
    p.add_argument("--x-sigma", type=float, default=0.01, help="first-layer horizontal noise (width units)")
    p.add_argument("--theta-sigma", type=float, default=0.02)
    p.add_argument("--drop-prob", type=float, default=0.0)
    p.add_argument("--clutter", type=int, default=0)
    p.add_argument("--anchors", type=int, default=192, help="predictions per layer; 0 writes gts only")
    p.add_argument("--layers", type=int, default=6)
    p.add_argument("--perfect", action="store_true", help="write exact, zero-loss predictions instead of noisy ones")
    p.add_argument("--category")
    p.add_argument("--culane", action="store_true", help="also write culane/gt and culane/pred .lines.txt files")
    p.add_argument("--out", required=True)
    _add_geometry(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("forward", help="run the decoder and dump per-layer traces")
    p.add_argument("--scene")
    p.add_argument("--out")
    _add_geometry(p)
    _add_decoder(p)
    p.set_defaults(func=cmd_forward)

    for name, func, help_ in (("assign", cmd_assign, "one-to-several assignment report"),
                              ("loss", cmd_loss, "loss report")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--scene", required=True)
        p.add_argument("--trace", help="trace JSON from `forward`; default: scene predictions, else a forward pass")
        p.add_argument("--out")
        _add_decoder(p)
        _add_ota(p)
        if name == "loss":
            p.add_argument("--seg", type=float, default=0.0, help="externally computed segmentation loss")
            p.add_argument("--lambda-cls", type=float, default=2.0)
            p.add_argument("--lambda-iou", type=float, default=2.0)
            p.add_argument("--lambda-l1", type=float, default=0.3)
            p.add_argument("--lambda-seg", type=float, default=1.0)
        p.set_defaults(func=func)

    p = sub.add_parser("eval", help="precision / recall / F1 over a dataset")
    p.add_argument("scenes", nargs="*", help="scene JSON files or directories")
    p.add_argument("--gt-dir", help="CULane-style ground truth directory of .lines.txt files")
    p.add_argument("--pred-dir", help="prediction directory mirroring --gt-dir")
    p.add_argument("--liou-threshold", type=float, default=0.5)
    p.add_argument("--score-threshold", type=float, default=0.5)
    p.add_argument("--category", help="label applied to scenes without their own category")
    p.add_argument("--jobs", type=int, default=0, help=f"worker threads (default ${THREADS_ENV} or 1)")
    p.add_argument("--out")
    _add_geometry(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time one assignment pass per phase")
    p.add_argument("--anchors", type=int, default=192)
    p.add_argument("--gts", type=int, default=4)
    p.add_argument("--layers", type=int, default=6)
    p.add_argument("--iters", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "eval" and not args.gt_dir and not args.scenes:
            raise UsageError("eval needs scene files or --gt-dir/--pred-dir")
        args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SchemaError, LaneError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except AssertionError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return 0


if __name__ == "__main__":
    sys.exit(main())

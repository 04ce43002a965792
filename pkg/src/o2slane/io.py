"""File formats: scene JSON, trace/assignment/loss reports, weights files, CULane ``.lines.txt``.

Scene JSON (``"format": "o2slane.scene/1"``)::

    {"format": ..., "category": "normal",            # category optional
     "geometry": {"image_width", "image_height", "num_points", "liou_radius"},
     "gts": [{"start_x", "start_y", "theta", "length",
              "xs": [z numbers or null]}],            # xs normalized by width, null = invalid row
     "predictions": [[{"score", "start_x", "start_y", "theta", "length",
                       "offsets": [z], "layer", "anchor_index"}, ...], ...]}   # optional, one list per layer

Weights, JSON form (``"format": "o2slane.weights/1"``)::

    {"format": ..., "config": {DecoderConfig fields},
     "tensors": {"decoder.0.sa_q.weight": {"shape": [D, D], "data": [row-major floats]}, ...}}

Weights, binary form (little-endian throughout)::

    b"O2SW" | u32 version=1 | u32 n | n bytes config JSON | u32 tensor count
    then per tensor: u16 name length | utf-8 name | u8 ndim | ndim x u32 dims | float64 data (C order)
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .decoder import DecoderConfig, DecoderWeights, LayerTrace, Prediction
from .errors import SchemaError
from .geometry import GeometryConfig, GroundTruthLane, LaneAnchor, LanePolyline, sample_rows

SCENE_FORMAT = "o2slane.scene/1"
TRACE_FORMAT = "o2slane.trace/1"
ASSIGN_FORMAT = "o2slane.assignment/1"
LOSS_FORMAT = "o2slane.loss/1"
WEIGHTS_FORMAT = "o2slane.weights/1"
WEIGHTS_MAGIC = b"O2SW"


def _num(v):
    v = float(v)
    return None if math.isnan(v) else v


def _require(doc, key, where, kind=None):
    if not isinstance(doc, dict) or key not in doc:
        raise SchemaError(f"{where}: missing field {key!r}")
    value = doc[key]
    if kind is not None and not isinstance(value, kind):
        raise SchemaError(f"{where}.{key}: expected {getattr(kind, '__name__', kind)}, got {type(value).__name__}")
    return value


def _real(doc, key, where):
    v = _require(doc, key, where)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaError(f"{where}.{key}: expected a number")
    return float(v)


def _reals(doc, key, where, n):
    v = _require(doc, key, where, list)
    if len(v) != n:
        raise SchemaError(f"{where}.{key}: expected {n} entries, got {len(v)}")
    for i, x in enumerate(v):
        if isinstance(x, bool) or not isinstance(x, (int, float)):
            raise SchemaError(f"{where}.{key}[{i}]: expected a number")
    return np.array(v, dtype=np.float64)


# -- geometry / lanes --------------------------------------------------------

def geometry_to_json(geo: GeometryConfig) -> dict:
    return asdict(geo)


def geometry_from_json(doc, where="geometry") -> GeometryConfig:
    try:
        return GeometryConfig(
            image_width=_real(doc, "image_width", where),
            image_height=_real(doc, "image_height", where),
            num_points=int(_real(doc, "num_points", where)),
            liou_radius=_real(doc, "liou_radius", where) if isinstance(doc, dict) and "liou_radius" in doc else 15.0,
        )
    except ValueError as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError(f"{where}: {exc}") from None


def gt_to_json(gt: GroundTruthLane, geo: GeometryConfig) -> dict:
    xs = [float(x) / geo.image_width if v else None for x, v in zip(gt.polyline.xs, gt.polyline.valid)]
    return {"start_x": gt.start_x, "start_y": gt.start_y, "theta": gt.theta, "length": gt.length, "xs": xs}


def gt_from_json(doc, geo: GeometryConfig, where: str) -> GroundTruthLane:
    xs = _require(doc, "xs", where, list)
    if len(xs) != geo.num_points:
        raise SchemaError(f"{where}.xs: expected {geo.num_points} entries, got {len(xs)}")
    valid = np.array([x is not None for x in xs])
    for i, x in enumerate(xs):
        if x is not None and (isinstance(x, bool) or not isinstance(x, (int, float))):
            raise SchemaError(f"{where}.xs[{i}]: expected a number or null")
    px = np.array([x * geo.image_width if x is not None else 0.0 for x in xs])
    return GroundTruthLane(
        LanePolyline(px, valid),
        _real(doc, "start_x", where), _real(doc, "start_y", where),
        _real(doc, "theta", where), _real(doc, "length", where),
    )


def prediction_to_json(p: Prediction) -> dict:
    return {
        "score": p.score, "start_x": p.start_x, "start_y": p.start_y, "theta": p.theta,
        "length": p.length, "offsets": [float(o) for o in p.offsets],
        "layer": p.layer, "anchor_index": p.anchor_index,
    }


def prediction_from_json(doc, z: int, where: str) -> Prediction:
    score = _real(doc, "score", where)
    if not 0.0 < score < 1.0:
        raise SchemaError(f"{where}.score: must lie in (0, 1)")
    return Prediction(
        score, _real(doc, "start_x", where), _real(doc, "start_y", where), _real(doc, "theta", where),
        _real(doc, "length", where), _reals(doc, "offsets", where, z),
        int(doc.get("layer", 0)), int(doc.get("anchor_index", 0)),
    )


def anchor_to_json(a: LaneAnchor) -> dict:
    return {"start_x": a.start_x, "start_y": a.start_y, "theta": a.theta, "length": a.length,
            "offsets": [float(o) for o in a.offsets]}


# -- scenes -------------------------------------------------------------------

def scene_to_json(geo: GeometryConfig, gts, predictions=None, category=None) -> dict:
    doc = {"format": SCENE_FORMAT, "geometry": geometry_to_json(geo), "gts": [gt_to_json(g, geo) for g in gts]}
    if category is not None:
        doc["category"] = category
    if predictions is not None:
        doc["predictions"] = [[prediction_to_json(p) for p in layer] for layer in predictions]
    return doc


def scene_from_json(doc):
    """Returns ``(geo, gts, predictions or None, category or None)``."""
    if not isinstance(doc, dict):
        raise SchemaError("scene: expected a JSON object")
    if doc.get("format", SCENE_FORMAT) != SCENE_FORMAT:
        raise SchemaError(f"scene.format: expected {SCENE_FORMAT!r}, got {doc.get('format')!r}")
    geo = geometry_from_json(_require(doc, "geometry", "scene", dict))
    gts = [gt_from_json(g, geo, f"gts[{i}]") for i, g in enumerate(_require(doc, "gts", "scene", list))]
    preds = None
    if doc.get("predictions") is not None:
        layers = _require(doc, "predictions", "scene", list)
        preds = [
            [prediction_from_json(p, geo.num_points, f"predictions[{r}][{k}]") for k, p in enumerate(layer)]
            for r, layer in enumerate(layers)
        ]
        if len({len(l) for l in preds}) > 1:
            raise SchemaError("predictions: every layer must list the same number of predictions")
    category = doc.get("category")
    return geo, gts, preds, category


def read_json(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise SchemaError(f"{path}: {exc.strerror or exc}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def read_scene(path):
    try:
        return scene_from_json(read_json(path))
    except SchemaError as exc:
        if str(exc).startswith(str(path)):
            raise
        raise SchemaError(f"{path}: {exc}") from None


def dumps(doc) -> str:
    return json.dumps(doc, indent=1, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, doc):
    Path(path).write_text(dumps(doc))


# -- reports ----------------------------------------------------------------------

def traces_to_json(traces) -> dict:
    return {
        "format": TRACE_FORMAT,
        "layers": [
            {"layer": r, "predictions": [prediction_to_json(p) for p in t.predictions],
             "anchors": [anchor_to_json(a) for a in t.anchors_after]}
            for r, t in enumerate(traces, start=1)
        ],
    }


def traces_from_json(doc, z: int) -> list[LayerTrace]:
    layers = _require(doc, "layers", "trace", list)
    out = []
    for r, layer in enumerate(layers):
        preds = [prediction_from_json(p, z, f"layers[{r}].predictions[{k}]")
                 for k, p in enumerate(_require(layer, "predictions", f"layers[{r}]", list))]
        anchors = [
            LaneAnchor(_real(a, "start_x", w), _real(a, "start_y", w), _real(a, "theta", w), _real(a, "length", w),
                       _reals(a, "offsets", w, z))
            for k, a in enumerate(layer.get("anchors") or [])
            for w in [f"layers[{r}].anchors[{k}]"]
        ] or [p.anchor() for p in preds]
        out.append(LayerTrace(preds, anchors))
    return out


def assignments_to_json(assignments) -> dict:
    return {
        "format": ASSIGN_FORMAT,
        "layers": [
            {
                "layer": a.layer,
                "positives": [
                    {"anchor": p.anchor_index, "gt": p.gt_index, "d": p.soft_label,
                     "liou": _num(p.liou), "fully": p.is_fully_positive}
                    for p in a.positives
                ],
                "negatives": len(a.negatives),
            }
            for a in assignments
        ],
    }


def loss_to_json(breakdown) -> dict:
    return {
        "format": LOSS_FORMAT,
        "cls": breakdown.cls, "reg": breakdown.reg, "seg": breakdown.seg, "total": breakdown.total,
        "per_layer": [{"layer": r, "cls": c, "reg": g} for r, (c, g) in enumerate(breakdown.per_layer, start=1)],
    }


# -- weights ------------------------------------------------------------------------

def _config_doc(cfg: DecoderConfig) -> dict:
    return {f.name: getattr(cfg, f.name) for f in fields(cfg)}


def _config_from_doc(doc) -> DecoderConfig:
    try:
        return DecoderConfig(**doc)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"weights config: {exc}") from None


def save_weights(path, weights: DecoderWeights):
    """Write weights; ``.json`` suffix selects the JSON form, anything else the binary form."""
    path = Path(path)
    tensors = weights.to_tensor_map()
    if path.suffix == ".json":
        doc = {
            "format": WEIGHTS_FORMAT,
            "config": _config_doc(weights.config),
            "tensors": {k: {"shape": list(v.shape), "data": [float(x) for x in np.ravel(v)]} for k, v in tensors.items()},
        }
        # repr round-trips float64 exactly
        path.write_text(json.dumps(doc))
        return
    cfg = json.dumps(_config_doc(weights.config), sort_keys=True).encode()
    parts = [WEIGHTS_MAGIC, struct.pack("<II", 1, len(cfg)), cfg, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    path.write_bytes(b"".join(parts))


def load_weights(path) -> DecoderWeights:
    path = Path(path)
    if path.suffix == ".json":
        doc = read_json(path)
        if doc.get("format") != WEIGHTS_FORMAT:
            raise SchemaError(f"{path}: not an {WEIGHTS_FORMAT} document")
        cfg = _config_from_doc(_require(doc, "config", "weights", dict))
        tensors = {}
        for name, t in _require(doc, "tensors", "weights", dict).items():
            shape = tuple(_require(t, "shape", name, list))
            data = np.array(_require(t, "data", name, list), dtype=np.float64)
            if data.size != int(np.prod(shape)):
                raise SchemaError(f"{path}: tensor {name} has {data.size} values for shape {shape}")
            tensors[name] = data.reshape(shape)
        return DecoderWeights.from_tensor_map(tensors, cfg)

    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise SchemaError(f"{path}: {exc.strerror or exc}") from None
    try:
        if buf[:4] != WEIGHTS_MAGIC:
            raise SchemaError(f"{path}: bad magic, not an o2slane weights file")
        version, n = struct.unpack_from("<II", buf, 4)
        if version != 1:
            raise SchemaError(f"{path}: unsupported weights version {version}")
        pos = 12
        cfg = _config_from_doc(json.loads(buf[pos:pos + n]))
        pos += n
        (count,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        tensors = {}
        for _ in range(count):
            (ln,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos:pos + ln].decode()
            pos += ln
            (ndim,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", buf, pos)
            pos += 4 * ndim
            size = int(np.prod(shape)) * 8
            if pos + size > len(buf):
                raise SchemaError(f"{path}: truncated tensor {name}")
            tensors[name] = np.frombuffer(buf, dtype="<f8", count=size // 8, offset=pos).reshape(shape).astype(np.float64)
            pos += size
    except struct.error:
        raise SchemaError(f"{path}: truncated weights file") from None
    return DecoderWeights.from_tensor_map(tensors, cfg)


# -- CULane ---------------------------------------------------------------------------

def parse_lines_txt(text: str) -> list[np.ndarray]:
    """Lanes as (n, 2) arrays of ``(x, y)`` pixels, y measured from the image top."""
    lanes = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        tokens = line.split()
        if not tokens:
            continue
        try:
            vals = [float(t) for t in tokens]
        except ValueError:
            raise SchemaError(f"line {lineno}: non-numeric token") from None
        if len(vals) % 2:
            raise SchemaError(f"line {lineno}: odd number of coordinates")
        lanes.append(np.array(vals).reshape(-1, 2))
    return lanes


def points_to_lane(points: np.ndarray, geo: GeometryConfig) -> GroundTruthLane | None:
    """Resample a CULane point list onto the sampling rows.  ``None`` if fewer than 2 rows are covered."""
    W, H = geo.image_width, geo.image_height
    y_up = H - points[:, 1]  # bottom-up height
    order = np.argsort(y_up, kind="stable")
    y_up, px = y_up[order], points[order, 0]
    y_up, keep = np.unique(y_up, return_index=True)
    px = px[keep]
    if y_up.size < 2:
        return None
    rows = sample_rows(geo)
    # text files carry ~1e-3 px precision; don't lose end rows to it
    tol = 1e-2
    inside = (rows >= y_up[0] - tol) & (rows <= y_up[-1] + tol)
    xs = np.interp(rows, y_up, px)
    valid = inside & (xs >= 0.0) & (xs <= W)
    idx = np.flatnonzero(valid)
    if idx.size < 2:
        return None
    lo, hi = idx[0], idx[-1]
    dy, dx = rows[hi] - rows[lo], xs[hi] - xs[lo]
    theta = math.atan2(dy, -dx)
    z = geo.num_points
    return GroundTruthLane(
        LanePolyline(np.where(valid, xs, 0.0), valid),
        float(xs[lo] / W), float(lo / (z - 1)), theta, float((hi - lo) / (z - 1)),
    )


def read_lines_txt(path, geo: GeometryConfig) -> list[GroundTruthLane]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise SchemaError(f"{path}: {exc.strerror or exc}") from None
    try:
        lanes = parse_lines_txt(text)
    except SchemaError as exc:
        raise SchemaError(f"{path}: {exc}") from None
    return [lane for lane in (points_to_lane(p, geo) for p in lanes) if lane is not None]


def format_lines_txt(polylines, geo: GeometryConfig) -> str:
    """One lane per line, ``x y`` pairs bottom to top, y measured from the image top."""
    rows = sample_rows(geo)
    out = []
    for poly in polylines:
        pairs = [f"{x:.3f} {geo.image_height - y:.3f}" for x, y, v in zip(poly.xs, rows, poly.valid) if v]
        if pairs:
            out.append(" ".join(pairs))
    return "\n".join(out) + ("\n" if out else "")

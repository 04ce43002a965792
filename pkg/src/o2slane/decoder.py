"""Forward-only lane decoder with layer-wise anchor refinement.

Each layer runs self-attention (content + positional query on queries and
keys), conditional cross-attention over a feature map, a rectifier FFN, then
the prediction heads and the anchor-update MLP.  Residual + LayerNorm wrap
every block.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .encoding import (
    EncodingConfig,
    EncodingWeights,
    Linear,
    canonical_order,
    feature_pe,
    mlp,
    pe_anchor,
    positional_queries,
)
from .errors import ShapeError
from .geometry import LaneAnchor

THETA_MARGIN = 1e-3
SCORE_EPS = 1e-9
LOGIT_EPS = 1e-6


@dataclass(frozen=True)
class DecoderConfig:
    num_layers: int = 6
    dim: int = 256
    num_heads: int = 8
    num_points: int = 72
    ffn_hidden: int | None = None
    temperature: float = 10000.0

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.dim % self.num_heads:
            raise ValueError("dim must be divisible by num_heads")
        EncodingConfig(self.dim, self.temperature)

    @property
    def encoding(self) -> EncodingConfig:
        return EncodingConfig(self.dim, self.temperature)

    @property
    def hidden(self) -> int:
        return self.ffn_hidden or 4 * self.dim


@dataclass(frozen=True)
class FeatureMap:
    features: np.ndarray  # (H, W, D)

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        if f.ndim != 3:
            raise ShapeError("features must be (height, width, D)")
        object.__setattr__(self, "features", f)

    @property
    def height(self) -> int:
        return self.features.shape[0]

    @property
    def width(self) -> int:
        return self.features.shape[1]

    @classmethod
    def random(cls, seed: int, height: int, width: int, dim: int) -> "FeatureMap":
        rng = np.random.default_rng(seed)
        return cls(rng.standard_normal((height, width, dim)))

    @classmethod
    def patterned(cls, height: int, width: int, dim: int) -> "FeatureMap":
        """Smooth analytic pattern: channel c holds ``cos(c*i/H) * sin(c*j/W)``."""
        i = np.arange(height)[:, None, None] / height
        j = np.arange(width)[None, :, None] / width
        c = np.arange(1, dim + 1)[None, None, :]
        return cls(np.cos(c * i) * np.sin(c * j + 0.5))


@dataclass(frozen=True)
class LayerNorm:
    gamma: np.ndarray
    beta: np.ndarray
    eps: float = 1e-5

    def __call__(self, x):
        mu = x.mean(axis=-1, keepdims=True)
        var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
        return (x - mu) / np.sqrt(var + self.eps) * self.gamma + self.beta

    @classmethod
    def init(cls, dim: int) -> "LayerNorm":
        return cls(np.ones(dim), np.zeros(dim))


@dataclass(frozen=True)
class LayerWeights:
    sa_q: Linear
    sa_k: Linear
    sa_v: Linear
    sa_out: Linear
    ca_qpos: Linear  # PE(M) (2D) -> D
    ca_q: Linear  # 2D -> 2D
    ca_k: Linear  # 2D -> 2D
    ca_v: Linear
    ca_out: Linear
    norm1: LayerNorm
    norm2: LayerNorm
    norm3: LayerNorm
    ffn: tuple
    cls_head: tuple
    reg_head: tuple
    offset_head: tuple
    update_mlp: tuple

    @classmethod
    def init(cls, rng: np.random.Generator, cfg: DecoderConfig) -> "LayerWeights":
        D, z = cfg.dim, cfg.num_points

        def lin(n_in, n_out, scale=1.0):
            return Linear.init(rng, n_in, n_out, scale)

        cls_last = lin(D, 1)
        # foreground prior of 0.01 at initialization
        cls_last = Linear(cls_last.weight, np.full(1, -math.log(99.0)))
        return cls(
            sa_q=lin(D, D), sa_k=lin(D, D), sa_v=lin(D, D), sa_out=lin(D, D),
            ca_qpos=lin(2 * D, D), ca_q=lin(2 * D, 2 * D), ca_k=lin(2 * D, 2 * D),
            ca_v=lin(D, D), ca_out=lin(D, D),
            norm1=LayerNorm.init(D), norm2=LayerNorm.init(D), norm3=LayerNorm.init(D),
            ffn=(lin(D, cfg.hidden), lin(cfg.hidden, D)),
            cls_head=(lin(D, D), lin(D, D), cls_last),
            reg_head=(lin(D, D), lin(D, D), lin(D, 4, 0.01)),
            offset_head=(lin(D, D), lin(D, D), lin(D, z, 0.01)),
            update_mlp=(lin(D, D), lin(D, 3 + z, 0.01)),
        )


@dataclass(frozen=True)
class DecoderWeights:
    config: DecoderConfig
    encoding: EncodingWeights
    content_init: np.ndarray  # (D,), shared by every anchor
    layers: tuple

    @classmethod
    def init(cls, seed: int, cfg: DecoderConfig | None = None) -> "DecoderWeights":
        cfg = cfg or DecoderConfig()
        rng = np.random.default_rng(seed)
        enc = EncodingWeights.init(rng, cfg.num_points, cfg.encoding)
        content = rng.uniform(-1.0, 1.0, cfg.dim)
        layers = tuple(LayerWeights.init(rng, cfg) for _ in range(cfg.num_layers))
        return cls(cfg, enc, content, layers)

    def with_zero_update(self) -> "DecoderWeights":
        layers = tuple(
            replace(lw, update_mlp=tuple(Linear.zeros(l.in_features, l.out_features) for l in lw.update_mlp))
            for lw in self.layers
        )
        return replace(self, layers=layers)

    def to_tensor_map(self) -> dict[str, np.ndarray]:
        out = {"decoder.content_init": self.content_init}
        _flatten(self.encoding, "encoding", out)
        for r, lw in enumerate(self.layers):
            _flatten(lw, f"decoder.{r}", out)
        return out

    @classmethod
    def from_tensor_map(cls, tensors: dict[str, np.ndarray], cfg: DecoderConfig) -> "DecoderWeights":
        enc = _unflatten(EncodingWeights, "encoding", tensors)
        layers = tuple(_unflatten(LayerWeights, f"decoder.{r}", tensors) for r in range(cfg.num_layers))
        weights = cls(cfg, enc, np.asarray(tensors["decoder.content_init"]), layers)
        weights.check()
        return weights

    def check(self):
        cfg = self.config
        self.encoding.check(cfg.num_points, cfg.encoding)
        if self.content_init.shape != (cfg.dim,) or len(self.layers) != cfg.num_layers:
            raise ShapeError("decoder weights do not match the configuration")
        for lw in self.layers:
            if lw.sa_q.weight.shape != (cfg.dim, cfg.dim) or lw.offset_head[-1].out_features != cfg.num_points:
                raise ShapeError("layer weights do not match the configuration")
            if lw.update_mlp[-1].out_features != 3 + cfg.num_points:
                raise ShapeError("update MLP must emit 3 + z deltas")


def _flatten(obj, prefix, out):
    if isinstance(obj, Linear):
        out[f"{prefix}.weight"] = obj.weight
        out[f"{prefix}.bias"] = obj.bias
    elif isinstance(obj, LayerNorm):
        out[f"{prefix}.gamma"] = obj.gamma
        out[f"{prefix}.beta"] = obj.beta
    elif isinstance(obj, tuple):
        for i, item in enumerate(obj):
            _flatten(item, f"{prefix}.{i}", out)
    else:
        for f in fields(obj):
            _flatten(getattr(obj, f.name), f"{prefix}.{f.name}", out)


def _unflatten(kind, prefix, tensors):
    def get(name):
        try:
            return np.asarray(tensors[name], dtype=np.float64)
        except KeyError:
            raise ShapeError(f"missing tensor {name!r}") from None

    def linear(p):
        return Linear(get(f"{p}.weight"), get(f"{p}.bias"))

    def stack(p):
        n = 0
        while f"{p}.{n}.weight" in tensors:
            n += 1
        if n == 0:
            raise ShapeError(f"missing tensor {p + '.0.weight'!r}")
        return tuple(linear(f"{p}.{i}") for i in range(n))

    kwargs = {}
    for f in fields(kind):
        p = f"{prefix}.{f.name}"
        if f.name.startswith("norm"):
            kwargs[f.name] = LayerNorm(get(f"{p}.gamma"), get(f"{p}.beta"))
        elif f.type in ("Linear",):
            kwargs[f.name] = linear(p)
        else:
            kwargs[f.name] = stack(p)
    return kind(**kwargs)


@dataclass(frozen=True, eq=False)
class Prediction:
    score: float
    start_x: float
    start_y: float
    theta: float
    length: float
    offsets: np.ndarray = field(repr=False)
    layer: int = 0
    anchor_index: int = 0

    def anchor(self) -> LaneAnchor:
        return LaneAnchor(self.start_x, self.start_y, self.theta, self.length, self.offsets)

    @property
    def params(self) -> np.ndarray:
        return np.array([self.start_x, self.start_y, self.theta, self.length])


@dataclass(frozen=True, eq=False)
class LayerTrace:
    predictions: list
    anchors_after: list

    def arrays(self):
        """``(scores (K,), params (K, 4), offsets (K, z))`` for vectorized consumers."""
        return prediction_arrays(self.predictions)


def prediction_arrays(preds):
    scores = np.array([p.score for p in preds], dtype=np.float64)
    params = np.array([[p.start_x, p.start_y, p.theta, p.length] for p in preds], dtype=np.float64).reshape(-1, 4)
    offsets = np.array([p.offsets for p in preds], dtype=np.float64)
    return scores, params, offsets


def softmax(logits):
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def multi_head_attention(q, k, v, num_heads: int):
    """Scaled dot-product attention over already-projected q (Lq, Dq), k (Lk, Dq), v (Lk, Dv).

    Returns ``(out (Lq, Dv), weights (heads, Lq, Lk))``.
    """
    Lq, Dq = q.shape
    Lk, Dv = v.shape
    if k.shape != (Lk, Dq) or Dq % num_heads or Dv % num_heads:
        raise ShapeError(f"incompatible attention shapes q{q.shape} k{k.shape} v{v.shape}")
    dh = Dq // num_heads
    qh = q.reshape(Lq, num_heads, dh).transpose(1, 0, 2)
    kh = k.reshape(Lk, num_heads, dh).transpose(1, 0, 2)
    vh = v.reshape(Lk, num_heads, Dv // num_heads).transpose(1, 0, 2)
    w = softmax(qh @ kh.transpose(0, 2, 1) / math.sqrt(dh))
    out = (w @ vh).transpose(1, 0, 2).reshape(Lq, Dv)
    return out, w


def _canonical_order(*arrays):
    # keys/values in lexicographic row order make every key-axis reduction
    # independent of the anchor listing order
    stacked = np.concatenate(arrays, axis=1)
    return np.lexsort(stacked.T[::-1])


def self_attention(content, pos_query, lw: LayerWeights, num_heads: int, return_weights: bool = False):
    """Query = Key = content + pos_query, Value = content."""
    content = np.asarray(content, dtype=np.float64)
    pos_query = np.asarray(pos_query, dtype=np.float64)
    if content.shape != pos_query.shape or content.ndim != 2:
        raise ShapeError(f"content {content.shape} and pos_query {pos_query.shape} must be equal (K, D)")
    x = content + pos_query
    order = _canonical_order(x, content)
    out, w = multi_head_attention(lw.sa_q(x), lw.sa_k(x[order]), lw.sa_v(content[order]), num_heads)
    out = lw.sa_out(out)
    if return_weights:
        inverse = np.empty_like(order)
        inverse[order] = np.arange(order.size)
        return out, w[:, :, inverse]
    return out


def cross_attention(content, M, fmap: FeatureMap, lw: LayerWeights, cfg: DecoderConfig, return_weights: bool = False):
    """Query = Cat(C, PE(M)) projected, Key = Cat(F, PE(F)), Value = F over all cells."""
    content = np.asarray(content, dtype=np.float64)
    M = np.asarray(M, dtype=np.float64)
    D = cfg.dim
    if content.ndim != 2 or content.shape[1] != D or M.shape != (content.shape[0], 4):
        raise ShapeError(f"content {content.shape} / anchor embedding {M.shape} do not match D={D}")
    if fmap.features.shape[2] != D:
        raise ShapeError(f"feature map width {fmap.features.shape[2]} != D={D}")
    F = fmap.features.reshape(-1, D)
    pe_f = feature_pe(fmap.height, fmap.width, cfg.encoding).reshape(-1, D)
    q_in = np.concatenate([content, lw.ca_qpos(pe_anchor(M, cfg.encoding))], axis=1)
    k_in = np.concatenate([F, pe_f], axis=1)
    out, w = multi_head_attention(lw.ca_q(q_in), lw.ca_k(k_in), lw.ca_v(F), cfg.num_heads)
    out = lw.ca_out(out)
    return (out, w) if return_weights else out


def update_anchor(anchor: LaneAnchor, delta) -> LaneAnchor:
    """Add ``(dx, dy, dtheta, *doffsets)`` to the anchor; length is left alone."""
    delta = np.asarray(delta, dtype=np.float64)
    z = anchor.offsets.shape[0]
    if delta.shape != (3 + z,):
        raise ShapeError(f"delta must have 3 + {z} entries, got {delta.shape}")
    return LaneAnchor(
        anchor.start_x + delta[0],
        anchor.start_y + delta[1],
        anchor.theta + delta[2],
        anchor.length,
        anchor.offsets + delta[3:],
    )


def _clip_anchor(a: LaneAnchor) -> LaneAnchor:
    sx = min(max(a.start_x, 0.0), 1.0)
    sy = min(max(a.start_y, 0.0), 1.0)
    th = min(max(a.theta, THETA_MARGIN), math.pi - THETA_MARGIN)
    if (sx, sy, th) == (a.start_x, a.start_y, a.theta):
        return a
    return LaneAnchor(sx, sy, th, a.length, a.offsets)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _logit(p):
    p = np.clip(p, LOGIT_EPS, 1.0 - LOGIT_EPS)
    return np.log(p) - np.log1p(-p)


def _heads(content, anchors, lw: LayerWeights, layer: int):
    scores = np.clip(_sigmoid(mlp(lw.cls_head, content)[:, 0]), SCORE_EPS, 1.0 - SCORE_EPS)
    reg = mlp(lw.reg_head, content)
    off = mlp(lw.offset_head, content)
    params = np.array([[a.start_x, a.start_y, a.theta / math.pi] for a in anchors])
    refined = _sigmoid(_logit(params) + reg[:, :3])
    length = _sigmoid(reg[:, 3])
    preds = []
    for k, a in enumerate(anchors):
        preds.append(Prediction(
            score=float(scores[k]),
            start_x=float(refined[k, 0]),
            start_y=float(refined[k, 1]),
            theta=float(np.clip(refined[k, 2] * math.pi, THETA_MARGIN, math.pi - THETA_MARGIN)),
            length=float(length[k]),
            offsets=a.offsets + off[k],
            layer=layer,
            anchor_index=k,
        ))
    return preds


def decoder_forward(anchors, fmap: FeatureMap, weights: DecoderWeights) -> list[LayerTrace]:
    """Run every decoder layer; layer r+1 consumes the anchors refined by layer r."""
    cfg = weights.config
    anchors = list(anchors)
    if not anchors:
        raise ShapeError("need at least one anchor")
    for a in anchors:
        if a.offsets.shape[0] != cfg.num_points:
            raise ShapeError(f"anchor has {a.offsets.shape[0]} offsets, decoder expects {cfg.num_points}")
    # run in canonical anchor order, report in caller order
    order = canonical_order(anchors)
    anchors = [anchors[i] for i in order]
    K = len(anchors)
    content = np.tile(weights.content_init, (K, 1))
    traces = []
    for r, lw in enumerate(weights.layers, start=1):
        P, M = positional_queries(anchors, weights.encoding, cfg.encoding)
        content = lw.norm1(content + self_attention(content, P, lw, cfg.num_heads))
        content = lw.norm2(content + cross_attention(content, M, fmap, lw, cfg))
        content = lw.norm3(content + mlp(lw.ffn, content))
        deltas = mlp(lw.update_mlp, content)
        anchors = [_clip_anchor(update_anchor(a, d)) for a, d in zip(anchors, deltas)]
        traces.append(LayerTrace(_heads(content, anchors, lw, r), anchors))
    inverse = np.empty_like(order)
    inverse[order] = np.arange(K)
    return [
        LayerTrace([replace(t.predictions[i], anchor_index=k) for k, i in enumerate(inverse)],
                   [t.anchors_after[i] for i in inverse])
        for t in traces
    ]

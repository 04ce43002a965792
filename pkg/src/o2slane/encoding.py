"""Sinusoidal encodings and the dynamic anchor-based positional query."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .geometry import LaneAnchor

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class EncodingConfig:
    dim: int = 256
    temperature: float = 10000.0

    def __post_init__(self):
        if self.dim <= 0 or self.dim % 8:
            raise ValueError(f"dim must be a positive multiple of 8, got {self.dim}")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")

    @property
    def half_dim(self) -> int:
        return self.dim // 2


@dataclass(frozen=True)
class Linear:
    """Affine map ``x @ weight.T + bias``; weight is (out, in)."""

    weight: np.ndarray
    bias: np.ndarray

    def __call__(self, x):
        return x @ self.weight.T + self.bias

    @property
    def in_features(self) -> int:
        return self.weight.shape[1]

    @property
    def out_features(self) -> int:
        return self.weight.shape[0]

    @classmethod
    def init(cls, rng: np.random.Generator, n_in: int, n_out: int, scale: float = 1.0) -> "Linear":
        bound = scale / math.sqrt(n_in)
        return cls(rng.uniform(-bound, bound, (n_out, n_in)), rng.uniform(-bound, bound, n_out))

    @classmethod
    def zeros(cls, n_in: int, n_out: int) -> "Linear":
        return cls(np.zeros((n_out, n_in)), np.zeros(n_out))


def mlp(layers, x):
    """Apply ``layers`` with a rectifier between consecutive layers (none after the last)."""
    for i, layer in enumerate(layers):
        x = layer(x)
        if i < len(layers) - 1:
            x = np.maximum(x, 0.0)
    return x


@dataclass(frozen=True)
class EncodingWeights:
    loe_mlp: tuple  # z -> hidden -> 1
    query_mlp: tuple  # 2D -> D -> D

    @classmethod
    def init(cls, rng: np.random.Generator, num_points: int, cfg: EncodingConfig, loe_hidden: int | None = None):
        hidden = loe_hidden or num_points
        D = cfg.dim
        return cls(
            loe_mlp=(Linear.init(rng, num_points, hidden), Linear.init(rng, hidden, 1)),
            query_mlp=(Linear.init(rng, 2 * D, D), Linear.init(rng, D, D)),
        )

    def check(self, num_points: int, cfg: EncodingConfig):
        if self.loe_mlp[0].in_features != num_points or self.loe_mlp[-1].out_features != 1:
            raise ShapeError("loe_mlp must map z offsets to one scalar")
        if self.query_mlp[0].in_features != 2 * cfg.dim or self.query_mlp[-1].out_features != cfg.dim:
            raise ShapeError("query_mlp must map 2*D to D")


def pe_scalar(v, half_dim: int, temperature: float) -> np.ndarray:
    """Interleaved ``[sin(v w_0), cos(v w_0), sin(v w_1), ...]`` with ``w_k = T^(-2k/half_dim)``.

    ``v`` may be an array; the encoding is appended as a trailing axis.
    """
    if half_dim % 2:
        raise ValueError("half_dim must be even")
    k = np.arange(half_dim // 2, dtype=np.float64)
    freqs = temperature ** (-2.0 * k / half_dim)
    arg = np.asarray(v, dtype=np.float64)[..., None] * freqs
    out = np.empty(arg.shape[:-1] + (half_dim,))
    out[..., 0::2] = np.sin(arg)
    out[..., 1::2] = np.cos(arg)
    return out


def lane_offset_embedding(offsets, weights: EncodingWeights):
    """Scalar LOE per anchor.  Accepts a (z,) vector or a (K, z) batch."""
    offsets = np.asarray(offsets, dtype=np.float64)
    z = weights.loe_mlp[0].in_features
    if offsets.shape[-1] != z:
        raise ShapeError(f"expected {z} offsets, got {offsets.shape[-1]}")
    out = mlp(weights.loe_mlp, offsets)[..., 0]
    return float(out) if out.ndim == 0 else out


def anchor_embedding(anchors, weights: EncodingWeights) -> np.ndarray:
    """(K, 4) matrix of ``(start_x, start_y, theta, LOE)`` rows."""
    anchors = list(anchors)
    params = np.array([[a.start_x, a.start_y, a.theta] for a in anchors]).reshape(-1, 3)
    offsets = np.array([a.offsets for a in anchors])
    loe = lane_offset_embedding(offsets, weights)
    return np.concatenate([params, np.reshape(loe, (-1, 1))], axis=1)


def pe_anchor(M: np.ndarray, cfg: EncodingConfig) -> np.ndarray:
    """Concatenated encodings of the four anchor-embedding fields: (K, 4) -> (K, 2D)."""
    pe = pe_scalar(TWO_PI * np.asarray(M), cfg.half_dim, cfg.temperature)  # K x 4 x D/2
    return pe.reshape(pe.shape[0], -1)


def canonical_order(anchors) -> np.ndarray:
    """Lexicographic order of anchors by (params, offsets).

    BLAS kernels may round a row differently depending on its position in the
    batch, so batched work runs in this order to stay bitwise equivariant.
    """
    rows = np.array([np.concatenate([[a.start_x, a.start_y, a.theta, a.length], a.offsets]) for a in anchors])
    return np.lexsort(rows.T[::-1])


def positional_queries(anchors, weights: EncodingWeights, cfg: EncodingConfig):
    """Batched positional queries; returns ``(P, M)`` with P (K, D) and M (K, 4)."""
    anchors = list(anchors)
    order = canonical_order(anchors)
    M = anchor_embedding([anchors[i] for i in order], weights)
    P = mlp(weights.query_mlp, pe_anchor(M, cfg))
    inverse = np.empty_like(order)
    inverse[order] = np.arange(order.size)
    return P[inverse], M[inverse]


def positional_query(anchor: LaneAnchor, weights: EncodingWeights, cfg: EncodingConfig) -> np.ndarray:
    weights.check(anchor.offsets.shape[0], cfg)
    P, _ = positional_queries([anchor], weights, cfg)
    return P[0]


def feature_pe(height: int, width: int, cfg: EncodingConfig) -> np.ndarray:
    """(height, width, D) grid; each cell is ``pe(2*pi*i/height) || pe(2*pi*j/width)``."""
    if height < 1 or width < 1:
        raise ValueError("feature map must be at least 1x1")
    pe_y = pe_scalar(TWO_PI * np.arange(height) / height, cfg.half_dim, cfg.temperature)
    pe_x = pe_scalar(TWO_PI * np.arange(width) / width, cfg.half_dim, cfg.temperature)
    out = np.empty((height, width, cfg.dim))
    out[:, :, : cfg.half_dim] = pe_y[:, None, :]
    out[:, :, cfg.half_dim :] = pe_x[None, :, :]
    return out

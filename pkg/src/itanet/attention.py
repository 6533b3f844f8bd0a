"""Context-augmentation blocks: spatial, channel and temporal attention.

Feature maps use frame-major axis order ``(..., t, h, w, c)``. Any leading
axes are treated as a batch of videos, so a whole episode is processed in one
pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Parameter, Tensor


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None, dtype=np.float32):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    shape = (fan_in, fan_out) if shape is None else shape
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


@dataclass
class MultiHeadParams:
    """Per-head projection triples plus the output projection."""

    heads: int
    w_q: list[Parameter]
    w_k: list[Parameter]
    w_v: list[Parameter]
    w_o: Parameter

    @classmethod
    def init(cls, n_c: int, heads: int, rng: np.random.Generator, dtype=np.float32, prefix: str = "mha"):
        if heads < 1 or n_c % heads:
            raise ValueError(f"n_c={n_c} is not divisible by heads={heads}")
        d = n_c // heads

        def proj(kind, i):
            return Parameter(glorot_uniform(rng, n_c, d, dtype=dtype), name=f"{prefix}.{kind}{i}")

        w_q = [proj("w_q", i) for i in range(heads)]
        w_k = [proj("w_k", i) for i in range(heads)]
        w_v = [proj("w_v", i) for i in range(heads)]
        w_o = Parameter(glorot_uniform(rng, heads * d, n_c, dtype=dtype), name=f"{prefix}.w_o")
        return cls(heads, w_q, w_k, w_v, w_o)

    @property
    def n_c(self) -> int:
        return self.w_o.shape[1]

    @property
    def head_dim(self) -> int:
        return self.w_q[0].shape[1]

    def parameters(self) -> list[Parameter]:
        return [*self.w_q, *self.w_k, *self.w_v, self.w_o]


@dataclass
class ChannelParams:
    """Squeeze-excite bottleneck: ``n_c -> n_c // r -> n_c``."""

    w1: Parameter  # (n_c // r, n_c)
    w2: Parameter  # (n_c, n_c // r)
    r: int

    @classmethod
    def init(cls, n_c: int, r: int, rng: np.random.Generator, dtype=np.float32, prefix: str = "channel"):
        if r < 1:
            raise ValueError("reduction ratio must be >= 1")
        hidden = max(n_c // r, 1)
        w1 = Parameter(glorot_uniform(rng, n_c, hidden, shape=(hidden, n_c), dtype=dtype), name=f"{prefix}.w1")
        w2 = Parameter(glorot_uniform(rng, hidden, n_c, shape=(n_c, hidden), dtype=dtype), name=f"{prefix}.w2")
        return cls(w1, w2, r)

    def parameters(self) -> list[Parameter]:
        return [self.w1, self.w2]


def sinusoidal_table(n_t: int, n_c: int, base: float = 10000.0) -> np.ndarray:
    """Even channels get sin, odd channels cos, over a geometric frequency ladder."""
    pos = np.arange(n_t, dtype=np.float64)[:, None]
    pair = np.arange(n_c, dtype=np.float64)[None, :] // 2
    angle = pos / np.power(base, 2.0 * pair / n_c)
    table = np.where(np.arange(n_c)[None, :] % 2 == 0, np.sin(angle), np.cos(angle))
    return table


@dataclass
class PositionalEncoder:
    mode: str
    table: Tensor = field(repr=False)

    @classmethod
    def init(cls, n_t: int, n_c: int, mode: str = "sinusoidal", rng=None, dtype=np.float32, scale: float = 1.0):
        if mode == "sinusoidal":
            return cls(mode, Tensor((scale * sinusoidal_table(n_t, n_c)).astype(dtype)))
        if mode == "learnable":
            rng = rng if rng is not None else np.random.default_rng(0)
            init = (scale * 0.02 * rng.standard_normal((n_t, n_c))).astype(dtype)
            return cls(mode, Parameter(init, name="pos.table"))
        raise ValueError(f"unknown positional encoding mode {mode!r}")

    def parameters(self) -> list[Parameter]:
        return [self.table] if isinstance(self.table, Parameter) else []


def scaled_dot_attention(q, k, v, weights_out: list | None = None, census=None) -> Tensor:
    """``softmax(q k^T / sqrt(d_k)) v`` over the last two axes.

    ``weights_out`` collects the attention matrices; ``census`` (an object with
    an ``add(n)`` method) counts the multiply-accumulates of both products.
    """
    q, k, v = ad.as_tensor(q), ad.as_tensor(k), ad.as_tensor(v)
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"query dim {q.shape[-1]} != key dim {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"{k.shape[-2]} keys but {v.shape[-2]} values")
    scores = ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / math.sqrt(q.shape[-1]))
    weights = ad.softmax(scores, axis=-1)
    if weights_out is not None:
        weights_out.append(weights.data)
    if census is not None:
        batch = int(np.prod(q.shape[:-2], dtype=np.int64))
        census.add(batch * q.shape[-2] * k.shape[-2] * (q.shape[-1] + v.shape[-1]))
    return ad.matmul(weights, v)


def multi_head_attention(f, p: MultiHeadParams, weights_out: list | None = None, census=None) -> Tensor:
    """Self-attention over the rows of ``f`` (shape ``(..., n, n_c)``)."""
    f = ad.as_tensor(f)
    if f.shape[-1] != p.n_c:
        raise DimensionError(f"input has {f.shape[-1]} channels, parameters expect {p.n_c}")
    heads = [
        scaled_dot_attention(
            ad.matmul(f, p.w_q[i]), ad.matmul(f, p.w_k[i]), ad.matmul(f, p.w_v[i]), weights_out, census
        )
        for i in range(p.heads)
    ]
    merged = heads[0] if p.heads == 1 else ad.concat(heads, axis=-1)
    return ad.matmul(merged, p.w_o)


def spatial_context_encode(F, p: MultiHeadParams) -> Tensor:
    """Per-frame self-attention over the ``h*w`` positions, plus residual."""
    F = ad.as_tensor(F)
    *lead, h, w, c = F.shape
    flat = ad.reshape(F, (*lead, h * w, c))
    out = ad.add(multi_head_attention(flat, p), flat)
    return ad.reshape(out, F.shape)


def channel_gate(F, p: ChannelParams) -> Tensor:
    """Gate vector ``s`` in (0, 1)^n_c for each video in the batch."""
    F = ad.as_tensor(F)
    z = ad.reduce_mean(F, (-4, -3, -2))
    hidden = ad.relu(ad.matmul(z if z.ndim >= 2 else ad.reshape(z, (1, -1)), ad.transpose(p.w1)))
    s = ad.sigmoid(ad.matmul(hidden, ad.transpose(p.w2)))
    return s if z.ndim >= 2 else ad.reshape(s, z.shape)


def channel_context_encode(F, p: ChannelParams) -> Tensor:
    """Rescale every channel of the whole video by its squeeze-excite gate."""
    F = ad.as_tensor(F)
    s = channel_gate(F, p)
    lead = F.shape[:-4]
    gate = ad.reshape(s, (*lead, 1, 1, 1, F.shape[-1]))
    return ad.multiply(F, gate)


def temporal_tokenize(F, enc: PositionalEncoder | None) -> Tensor:
    """Spatially average each frame, then add the positional table."""
    F = ad.as_tensor(F)
    Z = ad.reduce_mean(F, (-3, -2))
    if enc is None:
        return Z
    if enc.table.shape != Z.shape[-2:]:
        raise DimensionError(f"positional table {enc.table.shape} does not match {Z.shape[-2:]}")
    return ad.add(Z, enc.table)


def temporal_context_encode(Zp, p: MultiHeadParams, census=None) -> Tensor:
    """Self-attention across frames, plus residual."""
    Zp = ad.as_tensor(Zp)
    return ad.add(multi_head_attention(Zp, p, census=census), Zp)

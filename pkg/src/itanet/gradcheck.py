"""Finite-difference checks for every primitive and every composed block."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import autodiff as ad
from .attention import (
    ChannelParams,
    MultiHeadParams,
    PositionalEncoder,
    channel_context_encode,
    spatial_context_encode,
    temporal_context_encode,
    temporal_tokenize,
)
from .autodiff import Parameter, grad_check
from .model import EpisodeBatch, ITANet, ModelConfig, compute_total_loss

TOLERANCE = 1e-4
N_T, H_F, W_F, N_C, HEADS = 3, 2, 2, 8, 2


def _param(rng, shape, name, away_from_zero=False):
    x = rng.standard_normal(shape)
    if away_from_zero:
        x = np.where(np.abs(x) < 0.1, np.sign(x) * 0.1 + x, x)
    return Parameter(x, name=name)


def _weighted_sum(t: ad.Tensor, w: np.ndarray) -> ad.Tensor:
    # random linear read-out so every output coordinate carries gradient
    return ad.reduce_sum(ad.multiply(t, w), tuple(range(t.ndim)))


def primitive_cases(seed: int = 0) -> dict[str, tuple[Callable, list[Parameter]]]:
    rng = np.random.default_rng(seed)
    a = _param(rng, (3, 4), "a")
    b = _param(rng, (4, 2), "b")
    bias = _param(rng, (2,), "bias")
    x = _param(rng, (2, 3, 4), "x", away_from_zero=True)
    y = _param(rng, (2, 3, 4), "y")
    ch = _param(rng, (4,), "ch")
    logits = _param(rng, (5, 3), "logits")
    labels = np.array([0, 2, 1, 1, 0])
    w32 = rng.standard_normal((3, 2))
    w234 = rng.standard_normal((2, 3, 4))
    w24 = rng.standard_normal((2, 4))
    w43 = rng.standard_normal((2, 4, 3))
    w238 = rng.standard_normal((2, 3, 8))
    w233 = rng.standard_normal((2, 3, 3))
    c = _param(rng, (2, 3), "c")
    return {
        "matmul": (lambda: _weighted_sum(ad.matmul(a, b), w32), [a, b]),
        "batched_matmul": (lambda: _weighted_sum(ad.matmul(x, ad.transpose(y)), w233), [x, y]),
        "linear_map": (lambda: _weighted_sum(ad.linear_map(a, b, bias), w32), [a, b, bias]),
        "softmax": (lambda: _weighted_sum(ad.softmax(x, axis=-1), w234), [x]),
        "relu": (lambda: _weighted_sum(ad.relu(x), w234), [x]),
        "sigmoid": (lambda: _weighted_sum(ad.sigmoid(x), w234), [x]),
        "add": (lambda: _weighted_sum(ad.add(x, ch), w234), [x, ch]),
        "multiply": (lambda: _weighted_sum(ad.multiply(x, ch), w234), [x, ch]),
        "scale": (lambda: _weighted_sum(ad.scale(x, 0.37), w234), [x]),
        "reduce_mean": (lambda: _weighted_sum(ad.reduce_mean(x, (1,)), w24), [x]),
        "reduce_sum": (lambda: _weighted_sum(ad.reduce_sum(x, (1,)), w24), [x]),
        "transpose": (lambda: _weighted_sum(ad.transpose(x), w43), [x]),
        "reshape": (lambda: _weighted_sum(ad.reshape(x, (2, 4, 3)), w43), [x]),
        "concat": (lambda: _weighted_sum(ad.concat([x, y], axis=-1), w238), [x, y]),
        "l2_normalize": (lambda: _weighted_sum(ad.l2_normalize(x, axis=-1), w234), [x]),
        "cross_entropy": (lambda: ad.cross_entropy(logits, labels), [logits]),
        "composition": (
            lambda: ad.cross_entropy(ad.matmul(ad.sigmoid(ad.linear_map(a, b, bias)), c), np.array([0, 1, 2])),
            [a, b, bias, c],
        ),
    }


def block_cases(seed: int = 0) -> dict[str, tuple[Callable, list[Parameter]]]:
    rng = np.random.default_rng(seed)
    F = rng.standard_normal((N_T, H_F, W_F, N_C))
    Fb = rng.standard_normal((2, N_T, H_F, W_F, N_C))
    mha = MultiHeadParams.init(N_C, HEADS, rng, np.float64, prefix="spatial")
    temporal = MultiHeadParams.init(N_C, HEADS, rng, np.float64, prefix="temporal")
    channel = ChannelParams.init(N_C, 2, rng, np.float64)
    pos = PositionalEncoder.init(N_T, N_C, "learnable", rng, np.float64, scale=10.0)
    readout = rng.standard_normal(F.shape)
    readout_b = rng.standard_normal(Fb.shape)
    readout_z = rng.standard_normal((N_T, N_C))
    return {
        "spatial_block": (lambda: _weighted_sum(spatial_context_encode(F, mha), readout), mha.parameters()),
        "channel_block": (lambda: _weighted_sum(channel_context_encode(Fb, channel), readout_b), channel.parameters()),
        "temporal_block": (
            lambda: _weighted_sum(temporal_context_encode(temporal_tokenize(F, pos), temporal), readout_z),
            temporal.parameters() + pos.parameters(),
        ),
        "full_loss": _full_loss_case(seed),
    }


def _full_loss_case(seed: int):
    rng = np.random.default_rng(seed + 7)
    cfg = ModelConfig(n_t=N_T, H_f=H_F, W_f=W_F, n_c=N_C, heads=HEADS, reduction=2,
                      num_train_classes=3, init_seed=seed)
    model = ITANet(cfg, class_ids=[10, 11, 12], dtype=np.float64)
    batch = EpisodeBatch(
        support=rng.standard_normal((2, N_T, H_F, W_F, N_C)),
        query=rng.standard_normal((2, N_T, H_F, W_F, N_C)),
        support_labels=np.array([0, 1]),
        query_labels=np.array([1, 0]),
        support_global=[10, 12],
        query_global=[12, 10],
        way=2,
    )
    return (lambda: compute_total_loss(model, batch, beta=0.5, tau=2.0).total), model.parameters()


def run_all(seed: int = 0, eps: float = 1e-6) -> list[tuple[str, float, bool]]:
    rows = []
    for name, (fn, params) in {**primitive_cases(seed), **block_cases(seed)}.items():
        err = grad_check(fn, params, eps)
        rows.append((name, float(err), bool(err < TOLERANCE)))
    return rows

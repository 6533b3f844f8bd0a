"""The full matching network: forward pipeline, losses, training and evaluation."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, fields
from typing import Callable, Iterable

import numpy as np

from . import autodiff as ad
from .attention import (
    ChannelParams,
    MultiHeadParams,
    PositionalEncoder,
    channel_context_encode,
    glorot_uniform,
    spatial_context_encode,
    temporal_context_encode,
    temporal_tokenize,
)
from .autodiff import Parameter, Tape, Tensor
from .episodes import Episode
from .metrics import METRICS, one_hot, pairwise_frame_similarity, pairwise_mean_similarity, predict

log = logging.getLogger(__name__)

DTYPES = {"f32": np.float32, "f64": np.float64}


class TrainingError(RuntimeError):
    pass


@dataclass
class ModelConfig:
    n_t: int = 8
    H_f: int = 3
    W_f: int = 3
    n_c: int = 64
    heads: int = 4
    reduction: int = 4
    pos_mode: str = "sinusoidal"
    pos_scale: float = 1.0
    num_train_classes: int = 8
    spatial: bool = True
    channel: bool = True
    temporal: bool = True
    pos: bool = True
    framewise: bool = True
    multitask: bool = True
    init_seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


# One toggle set per row of the component and alignment ablation tables.
ABLATIONS = {
    "baseline": dict(spatial=False, channel=False, temporal=False, pos=False, framewise=False, multitask=False),
    "spatial": dict(spatial=True, channel=False, temporal=False, pos=False, framewise=False, multitask=False),
    "channel": dict(spatial=False, channel=True, temporal=False, pos=False, framewise=False, multitask=False),
    "multitask": dict(spatial=False, channel=False, temporal=False, pos=False, framewise=False, multitask=True),
    "temporal_relation": dict(spatial=False, channel=False, temporal=True, pos=False, framewise=False, multitask=False),
    "temporal_relation_pos": dict(spatial=False, channel=False, temporal=True, pos=True, framewise=False, multitask=False),
    "implicit_alignment": dict(spatial=False, channel=False, temporal=True, pos=True, framewise=True, multitask=False),
    "no_alignment": dict(spatial=True, channel=True, temporal=False, pos=False, framewise=False, multitask=True),
    "full": dict(spatial=True, channel=True, temporal=True, pos=True, framewise=True, multitask=True),
}


@dataclass
class TrainConfig:
    lr: float = 0.05
    momentum: float = 0.9
    episodes: int = 2000
    way: int = 5
    shot: int = 1
    queries: int = 5
    beta: float = 1.0
    tau: float = 10.0
    seed: int = 0
    precision: str = "f32"
    paradigm: str = "multitask"  # multitask | meta | semantic | two_stage
    stage1_episodes: int = 0

    def validate(self) -> None:
        if self.lr < 0 or self.beta < 0 or self.tau <= 0:
            raise ValueError("need lr >= 0, beta >= 0, tau > 0")
        if self.precision not in DTYPES:
            raise ValueError(f"precision must be one of {sorted(DTYPES)}")
        if self.paradigm not in ("multitask", "meta", "semantic", "two_stage"):
            raise ValueError(f"unknown paradigm {self.paradigm!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


class ITANet:
    """Spatial -> channel -> pool + position -> temporal, then frame matching."""

    def __init__(self, config: ModelConfig, class_ids: Iterable[int] | None = None, dtype=np.float32):
        self.config = cfg = config
        rng = np.random.default_rng(cfg.init_seed)
        self.spatial = MultiHeadParams.init(cfg.n_c, cfg.heads, rng, dtype, prefix="spatial")
        self.channel = ChannelParams.init(cfg.n_c, cfg.reduction, rng, dtype)
        self.temporal = MultiHeadParams.init(cfg.n_c, cfg.heads, rng, dtype, prefix="temporal")
        self.pos = PositionalEncoder.init(cfg.n_t, cfg.n_c, cfg.pos_mode, rng, dtype, cfg.pos_scale)
        k = cfg.num_train_classes
        self.sem_w = Parameter(glorot_uniform(rng, cfg.n_c, k, dtype=dtype), name="semantic.w")
        self.sem_b = Parameter(np.zeros(k, dtype=dtype), name="semantic.b")
        ids = sorted(class_ids) if class_ids is not None else list(range(k))
        if len(ids) != k:
            raise ValueError(f"{len(ids)} training classes given, semantic head has {k} outputs")
        self.class_index = {c: i for i, c in enumerate(ids)}

    @property
    def dtype(self):
        return self.sem_w.dtype

    def named_parameters(self) -> dict[str, Parameter]:
        params = [
            *self.spatial.parameters(),
            *self.channel.parameters(),
            *self.temporal.parameters(),
            *self.pos.parameters(),
            self.sem_w,
            self.sem_b,
        ]
        return {p.name: p for p in params}

    def parameters(self) -> list[Parameter]:
        """Parameters used by the enabled blocks."""
        cfg = self.config
        out = []
        if cfg.spatial:
            out += self.spatial.parameters()
        if cfg.channel:
            out += self.channel.parameters()
        if cfg.temporal:
            out += self.temporal.parameters()
        if cfg.pos:
            out += self.pos.parameters()
        if cfg.multitask:
            out += [self.sem_w, self.sem_b]
        return out

    def astype(self, dtype) -> "ITANet":
        for p in self.named_parameters().values():
            p.astype(dtype)
        if not isinstance(self.pos.table, Parameter):
            self.pos.table = Tensor(self.pos.table.data.astype(dtype))
        return self

    def embed(self, F) -> tuple[Tensor, Tensor]:
        """Enriched frame sequences ``(..., n_t, n_c)`` and the pooled context features."""
        cfg = self.config
        F = ad.as_tensor(F)
        if cfg.spatial:
            F = spatial_context_encode(F, self.spatial)
        if cfg.channel:
            F = channel_context_encode(F, self.channel)
        pooled = ad.reduce_mean(F, (-4, -3, -2))
        Z = temporal_tokenize(F, self.pos if cfg.pos else None)
        if cfg.temporal:
            Z = temporal_context_encode(Z, self.temporal)
        return Z, pooled

    def embed_video(self, F) -> np.ndarray:
        return self.embed(F)[0].data

    def similarity(self, Zq, Zs) -> Tensor:
        if self.config.framewise:
            return pairwise_frame_similarity(Zq, Zs)
        return pairwise_mean_similarity(Zq, Zs)

    def semantic_logits(self, pooled) -> Tensor:
        return ad.linear_map(pooled, self.sem_w, self.sem_b)

    def semantic_targets(self, global_labels) -> np.ndarray:
        try:
            return np.array([self.class_index[g] for g in global_labels], dtype=np.int64)
        except KeyError as exc:
            raise ValueError(f"global label {exc.args[0]} is not a training class") from None


@dataclass
class EpisodeBatch:
    """Feature tensors and labels for one episode."""

    support: np.ndarray
    query: np.ndarray
    support_labels: np.ndarray
    query_labels: np.ndarray
    support_global: list[int]
    query_global: list[int]
    way: int

    @classmethod
    def from_episode(cls, episode: Episode, store) -> "EpisodeBatch":
        return cls(
            store.batch([it.video_id for it in episode.support]),
            store.batch([it.video_id for it in episode.query]),
            np.array([it.episode_label for it in episode.support]),
            np.array([it.episode_label for it in episode.query]),
            [it.global_label for it in episode.support],
            [it.global_label for it in episode.query],
            episode.way,
        )


@dataclass
class EpisodeForward:
    Zs: Tensor
    Zq: Tensor
    pooled_s: Tensor
    pooled_q: Tensor


def forward_episode(model: ITANet, batch: EpisodeBatch) -> EpisodeForward:
    n_s = batch.support.shape[0]
    both = np.concatenate([batch.support, batch.query]).astype(model.dtype, copy=False)
    Z, pooled = model.embed(both)
    n = both.shape[0]
    return EpisodeForward(_rows(Z, 0, n_s), _rows(Z, n_s, n), _rows(pooled, 0, n_s), _rows(pooled, n_s, n))


def _rows(x: Tensor, start: int, stop: int) -> Tensor:
    """Differentiable slice along the first axis."""
    shape = x.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[start:stop] = g
        return (full,)

    return ad._record(x.data[start:stop], (x,), backward)


def episode_logits(model: ITANet, fwd: EpisodeForward, batch: EpisodeBatch, tau: float) -> Tensor:
    sims = model.similarity(fwd.Zq, fwd.Zs)  # (Q, S)
    onehot = one_hot(batch.support_labels, batch.way, dtype=model.dtype)
    scores = ad.matmul(sims, onehot)  # (Q, C): summed similarity per class
    return ad.scale(scores, tau)


def compute_meta_loss(model: ITANet, batch: EpisodeBatch, tau: float, fwd: EpisodeForward | None = None) -> Tensor:
    fwd = fwd or forward_episode(model, batch)
    return ad.cross_entropy(episode_logits(model, fwd, batch, tau), batch.query_labels)


def compute_semantic_loss(model: ITANet, batch: EpisodeBatch, fwd: EpisodeForward | None = None) -> Tensor:
    """Mean cross-entropy over support plus mean cross-entropy over query."""
    fwd = fwd or forward_episode(model, batch)
    ys = model.semantic_targets(batch.support_global)
    yq = model.semantic_targets(batch.query_global)
    loss_s = ad.cross_entropy(model.semantic_logits(fwd.pooled_s), ys)
    loss_q = ad.cross_entropy(model.semantic_logits(fwd.pooled_q), yq)
    return ad.add(loss_s, loss_q)


@dataclass
class LossBreakdown:
    total: Tensor
    meta: float
    semantic: float


def compute_total_loss(model: ITANet, batch: EpisodeBatch, beta: float, tau: float) -> LossBreakdown:
    """``L_meta + beta * L_sem``; with ``beta == 0`` or multitask off the total is ``L_meta``."""
    fwd = forward_episode(model, batch)
    meta = compute_meta_loss(model, batch, tau, fwd)
    if not model.config.multitask:
        return LossBreakdown(meta, float(meta.data), 0.0)
    sem = compute_semantic_loss(model, batch, fwd)
    if beta == 0:
        # still reported, but the total is the meta node itself
        return LossBreakdown(meta, float(meta.data), float(sem.data))
    total = ad.add(meta, ad.scale(sem, beta))
    return LossBreakdown(total, float(meta.data), float(sem.data))


class SGD:
    """Plain SGD with a momentum buffer per parameter."""

    def __init__(self, params: list[Parameter], lr: float, momentum: float = 0.9):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.velocity = {id(p): np.zeros_like(p.data) for p in params}

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        for p in self.params:
            v = self.velocity[id(p)]
            v *= self.momentum
            v += p.grad
            p.data -= (self.lr * v).astype(p.data.dtype)


def _loss_for_stage(model, batch, config: TrainConfig, episode_index: int) -> LossBreakdown:
    paradigm = config.paradigm
    if paradigm == "two_stage":
        paradigm = "semantic" if episode_index < config.stage1_episodes else "meta"
    if paradigm == "meta":
        return compute_total_loss(model, batch, 0.0, config.tau)
    if paradigm == "semantic":
        sem = compute_semantic_loss(model, batch)
        return LossBreakdown(sem, float("nan"), float(sem.data))
    return compute_total_loss(model, batch, config.beta, config.tau)


def train_step(model: ITANet, batch: EpisodeBatch, optimizer: SGD, config: TrainConfig,
               episode_index: int = 0) -> LossBreakdown:
    """Forward, backward and one SGD update. Returns the pre-update losses."""
    optimizer.zero_grad()
    with Tape() as tape:
        losses = _loss_for_stage(model, batch, config, episode_index)
    value = float(losses.total.data)
    if not math.isfinite(value):
        raise TrainingError(
            f"non-finite loss {value} at episode {episode_index} (meta={losses.meta}, semantic={losses.semantic})"
        )
    tape.backward(losses.total)
    optimizer.step()
    return losses


def make_optimizer(model: ITANet, config: TrainConfig) -> SGD:
    params = model.parameters()
    if config.paradigm in ("semantic", "two_stage"):
        params = params + [p for p in (model.sem_w, model.sem_b) if p not in params]
    return SGD(params, config.lr, config.momentum)


def train(model: ITANet, stream, store, config: TrainConfig,
          on_step: Callable[[int, LossBreakdown], None] | None = None,
          optimizer: SGD | None = None, start: int = 0) -> list[tuple[int, float, float, float]]:
    """Run ``config.episodes`` episodes from ``stream``; returns the loss log rows."""
    config.validate()
    optimizer = optimizer or make_optimizer(model, config)
    rows = []
    for i in range(start, config.episodes):
        batch = EpisodeBatch.from_episode(next(stream), store)
        losses = train_step(model, batch, optimizer, config, i)
        rows.append((i, losses.meta, losses.semantic, float(losses.total.data)))
        if on_step is not None:
            on_step(i, losses)
        if i % 250 == 0:
            log.debug("episode %d loss %.4f", i, float(losses.total.data))
    return rows


# ---------------------------------------------------------------- evaluation

@dataclass
class EvalReport:
    runs: list[float]
    episodes_per_run: int
    mean: float
    ci95: float

    def to_json(self) -> dict:
        return asdict(self)


def confidence_interval(run_means) -> tuple[float, float]:
    """Mean and 95% half-width ``1.96 * s / sqrt(n)`` with the sample std."""
    x = np.asarray(run_means, dtype=np.float64)
    if x.size == 0:
        raise ValueError("no runs to summarize")
    if x.size == 1 or np.all(x == x[0]):
        return float(x.mean()), 0.0
    return float(x.mean()), float(1.96 * x.std(ddof=1) / math.sqrt(x.size))


def episode_accuracy(model: ITANet, batch: EpisodeBatch, metric: str | None = None) -> float:
    """Fraction of queries whose top class score is the true class.

    ``metric`` overrides the model's own matching rule ("frame", "mean" or
    "dtw"); the override runs the scalar metric on every pair.
    """
    if metric is None:
        fwd = forward_episode(model, batch)
        scores = episode_logits(model, fwd, batch, 1.0).data
    else:
        both = np.concatenate([batch.support, batch.query]).astype(model.dtype, copy=False)
        Z = model.embed(both)[0].data
        n_s = batch.support.shape[0]
        fn = METRICS[metric]
        scores = np.zeros((batch.query.shape[0], batch.way))
        for qi, zq in enumerate(Z[n_s:]):
            for si, zs in enumerate(Z[:n_s]):
                scores[qi, batch.support_labels[si]] += fn(zs, zq)
    return float(np.mean(predict(scores) == batch.query_labels))


def evaluate(model: ITANet, stream, store, runs: int = 5, episodes_per_run: int = 1000,
             metric: str | None = None) -> EvalReport:
    """Mean accuracy per run over fresh episodes, with a 95% confidence interval."""
    if runs < 1 or episodes_per_run < 1:
        raise ValueError("evaluate needs at least one run and one episode")
    run_means = []
    for _ in range(runs):
        accs = [episode_accuracy(model, EpisodeBatch.from_episode(next(stream), store), metric)
                for _ in range(episodes_per_run)]
        run_means.append(float(np.mean(accs)))
    mean, ci = confidence_interval(run_means)
    return EvalReport(run_means, episodes_per_run, mean, ci)

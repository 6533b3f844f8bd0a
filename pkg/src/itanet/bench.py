"""Matching-stage cost: analytic operation counts, op census and timed scaling in T."""

from __future__ import annotations

import csv
import json
import math
import threading
import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .attention import MultiHeadParams, scaled_dot_attention, temporal_context_encode
from .metrics import OpCensus, dtw_path_cost, frame_similarity

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover - optional
    threadpool_limits = None

METHODS = ("implicit", "explicit-dtw")
STAGES = ("implicit_pairwise", "implicit_one_time", "dtw_pairwise")
MIN_SAMPLE_NS = 100_000

_RUN_LOCK = threading.Lock()


@dataclass(frozen=True)
class CostModel:
    way: int = 5     # N
    shot: int = 1    # K
    queries: int = 25  # Q
    dim: int = 64    # C
    frames: int = 8  # T

    def __post_init__(self):
        if min(self.way, self.shot, self.queries, self.dim, self.frames) < 1:
            raise ValueError(f"cost model fields must be >= 1: {self}")

    @property
    def supports(self) -> int:
        return self.way * self.shot


def analytic_match_cost(method: str, cm: CostModel) -> int:
    """Operation count of the temporal-alignment stage.

    implicit: one temporal attention per video plus a linear frame-wise
    comparison per support-query pair. explicit-dtw: a dense T x T frame
    comparison per pair.
    """
    nk, q, c, t = cm.supports, cm.queries, cm.dim, cm.frames
    if method == "implicit":
        return (nk + q) * c * t * t + nk * q * c * t
    if method == "explicit-dtw":
        return nk * q * c * t * t
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def _episode_features(cm: CostModel, seed: int = 0):
    rng = np.random.default_rng(seed)
    return (rng.standard_normal((cm.supports, cm.frames, cm.dim)),
            rng.standard_normal((cm.queries, cm.frames, cm.dim)))


def census_match_cost(method: str, cm: CostModel, heads: int = 1, seed: int = 0) -> dict[str, int]:
    """Count multiply-accumulates by running the instrumented kernels."""
    support, query = _episode_features(cm, seed)
    if method == "implicit":
        one_time, pairwise = OpCensus(), OpCensus()
        params = MultiHeadParams.init(cm.dim, heads, np.random.default_rng(seed), np.float64)
        enrich = lambda x: temporal_context_encode(x, params, census=one_time).data
        zs, zq = enrich(support), enrich(query)
        for a in zs:
            for b in zq:
                frame_similarity(a, b, census=pairwise)
        return {"one_time": one_time.macs, "pairwise": pairwise.macs,
                "total": one_time.macs + pairwise.macs}
    if method == "explicit-dtw":
        pairwise = OpCensus()
        for a in support:
            for b in query:
                dtw_path_cost(a, b, census=pairwise)
        return {"one_time": 0, "pairwise": pairwise.macs, "total": pairwise.macs}
    raise ValueError(f"unknown method {method!r}")


@dataclass
class ScalingReport:
    stage: str
    sizes: list[int]
    median_ns: list[float]
    slope: float
    residual: float
    repetitions: int
    inner_loops: list[int]

    def to_json(self) -> dict:
        return asdict(self)


def fit_loglog(sizes, times) -> tuple[float, float]:
    """Least-squares slope of log(time) on log(size) and the RMS residual."""
    x, y = np.log(np.asarray(sizes, float)), np.log(np.asarray(times, float))
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    return float(slope), float(np.sqrt(np.mean(resid ** 2)))


def _stage_kernel(stage: str, cm: CostModel, seed: int = 0):
    """A zero-argument callable doing one unit of the stage's work."""
    support, query = _episode_features(cm, seed)
    if stage == "implicit_pairwise":
        # Frames are unit-normalized during enrichment, so matching every
        # support-query pair is a single (Q, T*C) x (T*C, NK) product.
        def unit(x):
            return x / np.maximum(np.linalg.norm(x, axis=-1, keepdims=True), 1e-8)
        us = unit(support).reshape(cm.supports, -1)
        uq = unit(query).reshape(cm.queries, -1)
        inv_t = 1.0 / cm.frames
        return lambda: (uq @ us.T) * inv_t
    if stage == "implicit_one_time":
        # attention core over every video of the episode; projections are
        # part of feature enrichment and excluded
        both = np.concatenate([support, query])
        return lambda: scaled_dot_attention(both, both, both).data
    if stage == "dtw_pairwise":
        pairs = [(support[i % cm.supports], query[i % cm.queries]) for i in range(4)]
        return lambda: [dtw_path_cost(a, b) for a, b in pairs]
    raise ValueError(f"unknown stage {stage!r}; expected one of {STAGES}")


def _time_kernel(fn, repetitions: int, warmup: int) -> tuple[float, int]:
    for _ in range(warmup):
        fn()
    inner = 1
    while True:
        t0 = time.perf_counter_ns()
        for _ in range(inner):
            fn()
        if time.perf_counter_ns() - t0 >= MIN_SAMPLE_NS or inner >= 1 << 20:
            break
        inner *= 2
    samples = []
    for _ in range(repetitions):
        t0 = time.perf_counter_ns()
        for _ in range(inner):
            fn()
        samples.append((time.perf_counter_ns() - t0) / inner)
    return float(np.median(samples)), inner


def measure_scaling(stage: str, sizes=(8, 16, 32, 64, 128), template: CostModel | None = None,
                    repetitions: int = 5, warmup: int = 2, seed: int = 0) -> ScalingReport:
    """Median wall time of one stage at each T and the fitted log-log slope."""
    sizes = list(sizes)
    if len(sizes) < 4:
        raise ValueError("need at least four sizes")
    if repetitions < 5:
        raise ValueError("need at least five repetitions per size")
    template = template or default_template(stage)
    if not _RUN_LOCK.acquire(blocking=False):
        raise RuntimeError("another benchmark is already running in this process")
    try:
        limiter = threadpool_limits(limits=1) if threadpool_limits is not None else None
        try:
            medians, inners = [], []
            for t in sizes:
                med, inner = _time_kernel(_stage_kernel(stage, replace(template, frames=t), seed), repetitions, warmup)
                medians.append(med)
                inners.append(inner)
        finally:
            if limiter is not None:
                limiter.unregister()
    finally:
        _RUN_LOCK.release()
    slope, resid = fit_loglog(sizes, medians)
    if not math.isfinite(slope):
        raise RuntimeError(f"non-finite slope for stage {stage}")
    return ScalingReport(stage, sizes, medians, slope, resid, repetitions, inners)


def default_template(stage: str) -> CostModel:
    """Episode shapes large enough that arithmetic, not call overhead, dominates."""
    if stage == "implicit_pairwise":
        return CostModel(way=20, shot=5, queries=400, dim=256)
    if stage == "implicit_one_time":
        return CostModel(way=5, shot=5, queries=100, dim=64)
    return CostModel(way=5, shot=1, queries=25, dim=64)


def write_reports(reports: list[ScalingReport], out_dir) -> None:
    """``scaling.csv`` (stage, size, median_ns, slope) plus ``scaling.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "scaling.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stage", "size", "median_ns", "slope"])
        for r in reports:
            for size, ns in zip(r.sizes, r.median_ns):
                w.writerow([r.stage, size, f"{ns:.1f}", f"{r.slope:.4f}"])
    (out / "scaling.json").write_text(json.dumps([r.to_json() for r in reports], indent=1) + "\n")

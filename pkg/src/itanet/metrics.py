"""Video-to-video similarity: frame-wise cosine, mean-pooled cosine, plain DTW.

The scalar functions take frame sequences of shape ``(n_t, n_c)`` and return
floats. ``pairwise_*`` variants run on the tape for training and score every
query against every support video at once.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad

EPS = 1e-8

__all__ = [
    "OpCensus",
    "cosine",
    "frame_similarity",
    "mean_pooled_similarity",
    "dtw_similarity",
    "dtw_path_cost",
    "class_scores",
    "one_hot",
    "predict",
    "pairwise_frame_similarity",
    "pairwise_mean_similarity",
    "METRICS",
]


class OpCensus:
    """Multiply-accumulate counter threaded through the metric kernels."""

    def __init__(self):
        self.macs = 0

    def add(self, n: int) -> None:
        self.macs += int(n)


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.ndim != 2 or a.shape != b.shape:
        raise ValueError(f"frame sequences must have equal (n_t, n_c) shapes, got {a.shape} and {b.shape}")


def _cos_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # sqrt(|a|^2 |b|^2) rounds to |a|^2 exactly when a == b, so cos(x, x) == 1.
    dot = (a * b).sum(axis=-1)
    denom = np.sqrt((a * a).sum(axis=-1) * (b * b).sum(axis=-1))
    return np.clip(dot / np.maximum(denom, EPS), -1.0, 1.0)


def cosine(u, v) -> float:
    """Cosine with the denominator floored at EPS, so a zero vector scores 0."""
    return float(_cos_rows(np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64)))


def _exact_mean(x: np.ndarray) -> np.ndarray:
    # correctly rounded column sums: any frame order yields the same bits
    return np.array([math.fsum(col) for col in x.T]) / x.shape[0]


def frame_similarity(a, b, census: OpCensus | None = None) -> float:
    """Mean cosine between frames at the same time index."""
    a, b = np.asarray(a), np.asarray(b)
    _check_pair(a, b)
    if census is not None:
        census.add(3 * a.size)  # dot product and both squared norms
    per_frame = _cos_rows(a.astype(np.float64), b.astype(np.float64))
    return float(per_frame.mean())


def mean_pooled_similarity(a, b, census: OpCensus | None = None) -> float:
    a, b = np.asarray(a), np.asarray(b)
    _check_pair(a, b)
    if census is not None:
        census.add(2 * a.size + 3 * a.shape[1])
    return cosine(_exact_mean(a.astype(np.float64)), _exact_mean(b.astype(np.float64)))


def dtw_path_cost(a, b, census: OpCensus | None = None) -> tuple[float, int]:
    """Minimal (cost, length) monotone path under ``d = 1 - cos``.

    Steps are (1,0), (0,1), (1,1) from cell (0,0) to (n-1,m-1). Ties in cost
    are broken by the shorter path; costs accumulate from the start cell so
    the summation order matches a forward walk of the path.
    """
    a, b = np.asarray(a), np.asarray(b)
    _check_pair(a, b)
    n, m = a.shape[0], b.shape[0]
    if census is not None:
        census.add(3 * n * m * a.shape[1])  # dot and both norms per cell
    a, b = a.astype(np.float64), b.astype(np.float64)
    dist = (1.0 - _cos_rows(a[:, None, :], b[None, :, :])).tolist()
    cost = [[0.0] * m for _ in range(n)]
    length = [[0] * m for _ in range(n)]
    for i in range(n):
        row_d, row_c, row_l = dist[i], cost[i], length[i]
        for j in range(m):
            if i == 0 and j == 0:
                row_c[0], row_l[0] = row_d[0], 1
                continue
            best = None
            if i > 0 and j > 0:
                best = (cost[i - 1][j - 1], length[i - 1][j - 1])
            if i > 0:
                cand = (cost[i - 1][j], length[i - 1][j])
                if best is None or cand < best:
                    best = cand
            if j > 0:
                cand = (row_c[j - 1], row_l[j - 1])
                if best is None or cand < best:
                    best = cand
            row_c[j] = best[0] + row_d[j]
            row_l[j] = best[1] + 1
    return cost[n - 1][m - 1], length[n - 1][m - 1]


def dtw_similarity(a, b, census: OpCensus | None = None) -> float:
    """``1 - cost / length`` of the best warping path (evaluation only)."""
    cost, length = dtw_path_cost(a, b, census)
    return 1.0 - cost / length


METRICS = {
    "frame": frame_similarity,
    "mean": mean_pooled_similarity,
    "dtw": dtw_similarity,
}


def one_hot(labels, num_classes: int, dtype=np.float64) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, num_classes), dtype=dtype)
    out[np.arange(labels.size), labels] = 1
    return out


def _check_support(labels, num_classes: int) -> None:
    labels = np.asarray(labels)
    counts = np.bincount(labels, minlength=num_classes) if labels.size else np.zeros(num_classes)
    if labels.size == 0 or labels.min() < 0 or labels.max() >= num_classes or len(set(counts)) != 1:
        raise ValueError(f"support must hold the same number of items for each of {num_classes} classes")


def class_scores(query, support, num_classes: int, metric="frame") -> np.ndarray:
    """Sum of similarities to each class's support videos.

    ``support`` is a sequence of ``(frames, episode_label)`` pairs.
    """
    fn = METRICS[metric] if isinstance(metric, str) else metric
    labels = [lab for _, lab in support]
    _check_support(labels, num_classes)
    scores = np.zeros(num_classes)
    for frames, lab in support:
        scores[lab] += fn(frames, query)
    return scores


def predict(scores: np.ndarray) -> np.ndarray:
    """Arg-max over the last axis; ties go to the lowest class index."""
    return np.argmax(scores, axis=-1)


def pairwise_frame_similarity(Zq, Zs) -> ad.Tensor:
    """Frame-wise similarity of every query ``(Q, t, c)`` to every support ``(S, t, c)``."""
    Zq, Zs = ad.as_tensor(Zq), ad.as_tensor(Zs)
    q, t, c = Zq.shape
    s = Zs.shape[0]
    uq = ad.reshape(ad.l2_normalize(Zq, axis=-1, eps=EPS), (q, t * c))
    us = ad.reshape(ad.l2_normalize(Zs, axis=-1, eps=EPS), (s, t * c))
    return ad.scale(ad.matmul(uq, ad.transpose(us)), 1.0 / t)


def pairwise_mean_similarity(Zq, Zs) -> ad.Tensor:
    """Cosine between temporal means, every query against every support."""
    mq = ad.l2_normalize(ad.reduce_mean(Zq, 1), axis=-1, eps=EPS)
    ms = ad.l2_normalize(ad.reduce_mean(Zs, 1), axis=-1, eps=EPS)
    return ad.matmul(mq, ad.transpose(ms))

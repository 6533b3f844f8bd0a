import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from itanet import autodiff as ad
from itanet.metrics import (
    METRICS,
    OpCensus,
    class_scores,
    cosine,
    dtw_path_cost,
    dtw_similarity,
    frame_similarity,
    mean_pooled_similarity,
    pairwise_frame_similarity,
    pairwise_mean_similarity,
    predict,
)
from oracles import brute_force_dtw, cos_matrix


def seq(rng, n=5, c=4):
    return rng.standard_normal((n, c))


def test_frame_similarity_examples():
    x = seq(np.random.default_rng(0))
    assert frame_similarity(x, x) == 1.0
    e = np.eye(4)
    assert frame_similarity(e[:2], e[2:]) == 0.0
    a = np.array([[1.0, 0.0], [1.0, 0.0]])
    b = np.array([[2.0, 0.0], [0.0, 3.0]])
    assert frame_similarity(a, b) == 0.5
    with pytest.raises(ValueError):
        frame_similarity(np.ones((3, 4)), np.ones((4, 4)))


def test_mean_pooled_examples():
    rng = np.random.default_rng(1)
    a = seq(rng, 6)
    assert mean_pooled_similarity(a, a) == 1.0
    assert mean_pooled_similarity(a, a[::-1]) == 1.0
    assert frame_similarity(a, a[::-1]) < 1.0
    e = np.eye(4)
    assert mean_pooled_similarity(e[[0, 0]], e[[1, 1]]) == 0.0


def test_dtw_examples():
    rng = np.random.default_rng(2)
    a = seq(rng)
    assert dtw_path_cost(a, a) == (0.0, 5)
    assert dtw_similarity(a, a) == 1.0
    u, v = rng.standard_normal((1, 4)), rng.standard_normal((1, 4))
    assert dtw_similarity(u, v) == pytest.approx(cosine(u[0], v[0]), abs=1e-15)


@pytest.mark.parametrize("seed", range(20))
def test_dtw_matches_path_enumeration(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 6))
    a, b = seq(rng, n, 3), seq(rng, n, 3)
    sim, key = brute_force_dtw(a, b)
    assert dtw_path_cost(a, b) == key
    assert dtw_similarity(a, b) == sim


def test_zero_vector_cosine_is_zero():
    assert cosine(np.zeros(3), np.ones(3)) == 0.0


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 2**31), st.sampled_from(sorted(METRICS)))
def test_metrics_symmetric_and_bounded(n, c, seed, name):
    rng = np.random.default_rng(seed)
    a, b = seq(rng, n, c), seq(rng, n, c)
    fn = METRICS[name]
    s = fn(a, b)
    assert abs(s - fn(b, a)) <= 1e-9
    assert -1 - 1e-6 <= s <= 1 + 1e-6


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**31), st.sampled_from(sorted(METRICS)))
def test_metrics_invariant_to_positive_frame_scaling(n, seed, name):
    rng = np.random.default_rng(seed)
    a, b = seq(rng, n, 4), seq(rng, n, 4)
    fn = METRICS[name]
    if name == "mean":
        # rescaling individual frames moves the mean, so only a global factor applies
        sa, sb = a * rng.uniform(0.1, 10), b * rng.uniform(0.1, 10)
    else:
        sa = a * rng.uniform(0.1, 10, size=(n, 1))
        sb = b * rng.uniform(0.1, 10, size=(n, 1))
    assert abs(fn(sa, sb) - fn(a, b)) <= 1e-6


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**31))
def test_frame_permutation(n, seed):
    rng = np.random.default_rng(seed)
    a = seq(rng, n, 4)
    perm = rng.permutation(n)
    assert mean_pooled_similarity(a, a[perm]) == 1.0
    if not np.array_equal(perm, np.arange(n)):
        assert frame_similarity(a, a[perm]) < 1.0


def test_class_scores_and_prediction():
    rng = np.random.default_rng(3)
    q = seq(rng)
    sup = [(seq(rng), lab) for lab in (0, 1, 2)]
    np.testing.assert_array_equal(class_scores(q, sup, 3), [frame_similarity(s, q) for s, _ in sup])
    sup2 = [(seq(rng), lab) for lab in (0, 1, 0, 1)]
    scores = class_scores(q, sup2, 2, "dtw")
    assert scores[0] == dtw_similarity(sup2[0][0], q) + dtw_similarity(sup2[2][0], q)
    assert np.all(np.abs(scores) <= 2 + 1e-6)
    assert predict(np.array([0.3, 0.7, 0.7])) == 1
    with pytest.raises(ValueError):
        class_scores(q, [(seq(rng), 0), (seq(rng), 0), (seq(rng), 1)], 2)
    with pytest.raises(ValueError):
        class_scores(q, [(seq(rng), 0)], 2)


def test_census_counts():
    a = np.ones((4, 6))
    c = OpCensus()
    frame_similarity(a, a, census=c)
    assert c.macs == 3 * 4 * 6
    c = OpCensus()
    dtw_similarity(a, a, census=c)
    assert c.macs == 3 * 4 * 4 * 6


def test_pairwise_tensors_match_scalar_metrics():
    rng = np.random.default_rng(4)
    Zq, Zs = rng.standard_normal((3, 5, 4)), rng.standard_normal((2, 5, 4))
    S = pairwise_frame_similarity(Zq, Zs).data
    M = pairwise_mean_similarity(Zq, Zs).data
    for i in range(3):
        for j in range(2):
            assert abs(S[i, j] - frame_similarity(Zq[i], Zs[j])) < 1e-12
            assert abs(M[i, j] - mean_pooled_similarity(Zq[i], Zs[j])) < 1e-12


def test_pairwise_frame_similarity_gradient():
    rng = np.random.default_rng(5)
    Zq, Zs = ad.Parameter(rng.standard_normal((2, 3, 4))), ad.Parameter(rng.standard_normal((2, 3, 4)))
    w = rng.standard_normal((2, 2))
    f = lambda: ad.reduce_sum(ad.multiply(pairwise_frame_similarity(Zq, Zs), w), (0, 1))
    assert ad.grad_check(f, [Zq, Zs]) < 1e-4


def test_cos_oracle_agrees():
    rng = np.random.default_rng(6)
    a, b = seq(rng), seq(rng)
    assert abs(cos_matrix(a, b).diagonal().mean() - frame_similarity(a, b)) < 1e-12

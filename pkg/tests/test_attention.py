import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from itanet import autodiff as ad
from itanet.attention import (
    ChannelParams,
    MultiHeadParams,
    PositionalEncoder,
    channel_context_encode,
    channel_gate,
    multi_head_attention,
    scaled_dot_attention,
    sinusoidal_table,
    spatial_context_encode,
    temporal_context_encode,
    temporal_tokenize,
)


def mha(n_c=16, heads=4, seed=0):
    return MultiHeadParams.init(n_c, heads, np.random.default_rng(seed), np.float64)


def test_single_key_returns_value_row():
    rng = np.random.default_rng(0)
    q, k, v = rng.standard_normal((5, 3)), rng.standard_normal((1, 3)), rng.standard_normal((1, 4))
    np.testing.assert_allclose(scaled_dot_attention(q, k, v).data, np.tile(v, (5, 1)), atol=1e-15)


def test_identical_keys_average_values():
    rng = np.random.default_rng(1)
    q = rng.standard_normal((3, 2))
    k = np.tile(rng.standard_normal((1, 2)), (4, 1))
    v = rng.standard_normal((4, 5))
    np.testing.assert_allclose(scaled_dot_attention(q, k, v).data, np.tile(v.mean(0), (3, 1)), atol=1e-12)


def test_two_by_two_direct_evaluation():
    q = np.array([[1.0, 0.0], [0.0, 2.0]])
    k = np.array([[1.0, 1.0], [-1.0, 0.5]])
    v = np.array([[3.0, -1.0], [0.0, 2.0]])
    out = scaled_dot_attention(q, k, v).data
    for i in range(2):
        s = [sum(q[i, t] * k[j, t] for t in range(2)) / math.sqrt(2) for j in range(2)]
        e = [math.exp(x) for x in s]
        w = [x / sum(e) for x in e]
        expected = [w[0] * v[0, c] + w[1] * v[1, c] for c in range(2)]
        np.testing.assert_allclose(out[i], expected, rtol=1e-13)


def test_attention_weights_row_stochastic():
    rng = np.random.default_rng(2)
    weights = []
    multi_head_attention(rng.standard_normal((2, 9, 16)), mha(), weights_out=weights)
    assert len(weights) == 4
    for w in weights:
        assert np.all(w >= 0)
        np.testing.assert_allclose(w.sum(-1), 1.0, atol=1e-6)


def test_heads_must_divide_channels():
    with pytest.raises(ValueError):
        MultiHeadParams.init(10, 4, np.random.default_rng(0))


def test_zero_output_projection_gives_zero():
    p = mha()
    p.w_o.data[:] = 0
    out = multi_head_attention(np.random.default_rng(3).standard_normal((6, 16)), p)
    np.testing.assert_array_equal(out.data, 0.0)


def test_single_head_is_attention_then_projection():
    p = mha(8, 1, seed=4)
    f = np.random.default_rng(4).standard_normal((5, 8))
    head = scaled_dot_attention(f @ p.w_q[0].data, f @ p.w_k[0].data, f @ p.w_v[0].data)
    expected = ad.linear_map(head, p.w_o).data
    np.testing.assert_allclose(multi_head_attention(f, p).data, expected, rtol=1e-13)


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 9), st.integers(0, 2**31))
def test_multi_head_permutation_equivariant(n, seed):
    rng = np.random.default_rng(seed)
    f = rng.standard_normal((n, 16))
    perm = rng.permutation(n)
    p = mha(seed=seed % 1000)
    np.testing.assert_allclose(multi_head_attention(f[perm], p).data, multi_head_attention(f, p).data[perm],
                               atol=1e-5)


def test_spatial_residual_identity_bitwise():
    p = mha()
    p.w_o.data[:] = 0
    F = np.random.default_rng(5).standard_normal((3, 2, 2, 16))
    out = spatial_context_encode(F, p).data
    assert out.shape == F.shape
    assert np.array_equal(out, F)


def test_spatial_shape_at_desk_scale():
    p = MultiHeadParams.init(64, 4, np.random.default_rng(0), np.float32)
    F = np.random.default_rng(0).standard_normal((8, 7, 7, 64)).astype(np.float32)
    assert spatial_context_encode(F, p).shape == (8, 7, 7, 64)


def test_spatial_frames_are_independent():
    p = mha()
    F = np.random.default_rng(6).standard_normal((4, 2, 3, 16))
    G = F.copy()
    G[2] = 0.0
    a, b = spatial_context_encode(F, p).data, spatial_context_encode(G, p).data
    for t in (0, 1, 3):
        np.testing.assert_array_equal(a[t], b[t])


def test_channel_gate_of_ones_squeezes_to_ones():
    p = ChannelParams.init(8, 2, np.random.default_rng(0), np.float64)
    s = channel_gate(np.ones((3, 2, 2, 8)), p).data
    hidden = np.maximum(p.w1.data @ np.ones(8), 0)
    np.testing.assert_allclose(s, 1 / (1 + np.exp(-(p.w2.data @ hidden))), rtol=1e-14)


def test_channel_zero_w2_halves_input():
    p = ChannelParams.init(8, 2, np.random.default_rng(0), np.float64)
    p.w2.data[:] = 0
    F = np.random.default_rng(7).standard_normal((3, 2, 2, 8))
    np.testing.assert_array_equal(channel_context_encode(F, p).data, F / 2)


def test_channel_bottleneck_shapes():
    p = ChannelParams.init(64, 4, np.random.default_rng(0))
    assert p.w1.shape == (16, 64) and p.w2.shape == (64, 16)
    assert ChannelParams.init(3, 8, np.random.default_rng(0)).w1.shape == (1, 3)


def test_channel_matches_loop_oracle_and_gate_in_open_interval():
    rng = np.random.default_rng(8)
    p = ChannelParams.init(6, 2, rng, np.float64)
    F = rng.standard_normal((2, 3, 2, 2, 6))
    out = channel_context_encode(F, p).data
    for b in range(2):
        z = F[b].mean(axis=(0, 1, 2))
        s = 1 / (1 + np.exp(-(p.w2.data @ np.maximum(p.w1.data @ z, 0))))
        assert np.all((s > 0) & (s < 1))
        for t in range(3):
            for i in range(2):
                for j in range(2):
                    for c in range(6):
                        assert abs(out[b, t, i, j, c] - F[b, t, i, j, c] * s[c]) < 1e-13


def test_sinusoidal_first_row_and_determinism():
    table = sinusoidal_table(8, 6)
    np.testing.assert_array_equal(table[0], [0, 1, 0, 1, 0, 1])
    np.testing.assert_array_equal(table, sinusoidal_table(8, 6))
    assert abs(table[3, 0] - math.sin(3)) < 1e-15 and abs(table[3, 1] - math.cos(3)) < 1e-15


def test_temporal_tokenize():
    rng = np.random.default_rng(9)
    const = rng.standard_normal((8, 1, 1, 4))
    F = np.broadcast_to(const, (8, 3, 3, 4)).copy()
    np.testing.assert_allclose(temporal_tokenize(F, None).data, const[:, 0, 0], rtol=1e-14)
    enc = PositionalEncoder.init(8, 4, "sinusoidal", dtype=np.float64)
    Zp = temporal_tokenize(F, enc).data
    assert Zp.shape == (8, 4)
    np.testing.assert_allclose(Zp[0], const[0, 0, 0] + [0, 1, 0, 1], rtol=1e-14)
    with pytest.raises(ad.DimensionError):
        temporal_tokenize(np.ones((5, 3, 3, 4)), enc)


def test_temporal_residual_identity_bitwise():
    p = mha()
    p.w_o.data[:] = 0
    Z = np.random.default_rng(10).standard_normal((8, 16))
    out = temporal_context_encode(Z, p).data
    assert out.shape == (8, 16) and np.array_equal(out, Z)


def test_temporal_without_positions_is_equivariant():
    rng = np.random.default_rng(11)
    p = mha(seed=11)
    F = rng.standard_normal((8, 2, 2, 16))
    perm = rng.permutation(8)
    run = lambda x: temporal_context_encode(temporal_tokenize(x, None), p).data
    np.testing.assert_allclose(run(F[perm]), run(F)[perm], atol=1e-5)


def test_temporal_with_sinusoidal_positions_is_order_sensitive():
    rng = np.random.default_rng(12)
    p = mha(seed=12)
    enc = PositionalEncoder.init(8, 16, "sinusoidal", dtype=np.float64)
    F = rng.standard_normal((8, 2, 2, 16))
    perm = rng.permutation(8)
    assert not np.array_equal(perm, np.arange(8))
    run = lambda x: temporal_context_encode(temporal_tokenize(x, enc), p).data
    assert np.max(np.abs(run(F[perm]) - run(F)[perm])) > 1e-3


def test_learnable_encoder_is_a_parameter():
    enc = PositionalEncoder.init(4, 8, "learnable", np.random.default_rng(0), np.float64)
    assert enc.parameters() and enc.parameters()[0].shape == (4, 8)
    assert PositionalEncoder.init(4, 8).parameters() == []
    with pytest.raises(ValueError):
        PositionalEncoder.init(4, 8, "rotary")

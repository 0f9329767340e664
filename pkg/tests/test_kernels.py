import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from splatforge import kernels
from splatforge.errors import ShapeMismatch


def _rel_err(got, want):
    scale = max(np.abs(want).max(), 1e-9)
    return np.abs(got - want).max() / scale


# ---------------------------------------------------------------------------
# pointwise
# ---------------------------------------------------------------------------


def test_gelu_zero_and_asymptote():
    assert kernels.gelu(np.array(0.0)) == 0.0
    assert abs(kernels.gelu(np.array(10.0)) - 10.0) < 1e-6
    assert abs(kernels.gelu(np.array(-10.0))) < 1e-6


def test_softmax_uniform():
    assert np.allclose(kernels.softmax(np.zeros(3)), [1 / 3] * 3, atol=1e-15)


def test_softmax_known_triple():
    got = kernels.softmax(np.array([1.0, 2.0, 3.0]))
    assert np.allclose(got, [0.09003057, 0.24472847, 0.66524096], atol=1e-7)


def test_softmax_shift_invariance(rng):
    v = rng.standard_normal(17)
    assert np.allclose(kernels.softmax(v), kernels.softmax(v + 123.456), atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(min_value=0, max_value=2**31), st.integers(min_value=1, max_value=8))
def test_softmax_simplex_property(seed, n):
    v = np.random.default_rng(seed).uniform(-30, 30, size=n)
    p = kernels.softmax(v)
    assert np.all(p > 0) and np.all(p < 1 + 1e-15)
    assert abs(p.sum() - 1.0) < 1e-12


def test_mlp_zero_weights_gives_bias(rng):
    w1 = np.zeros((5, 7)); b1 = np.zeros(5)
    w2 = np.zeros((3, 5)); b2 = np.array([1.0, -2.0, 0.5])
    assert np.allclose(kernels.mlp(rng.standard_normal(7), w1, b1, w2, b2), b2)


def test_mlp_matches_oracle():
    rng = np.random.default_rng(7)
    for _ in range(200):
        din, dh, dout = rng.integers(1, 9, size=3)
        v = rng.standard_normal(din)
        w1 = rng.standard_normal((dh, din)); b1 = rng.standard_normal(dh)
        w2 = rng.standard_normal((dout, dh)); b2 = rng.standard_normal(dout)
        got = kernels.mlp(v, w1, b1, w2, b2)
        want = oracles.mlp_oracle(v, w1, b1, w2, b2)
        assert _rel_err(got, want) < 1e-6


def test_layer_norm_matches_oracle():
    rng = np.random.default_rng(8)
    for _ in range(50):
        c, h, w = rng.integers(2, 9, size=3)
        x = rng.standard_normal((c, h, w)) * rng.uniform(0.1, 10)
        gamma = rng.standard_normal(c)
        beta = rng.standard_normal(c)
        got = kernels.layer_norm(x, gamma, beta)
        want = oracles.layer_norm_oracle(x, gamma, beta)
        assert _rel_err(got, want) < 1e-6


# ---------------------------------------------------------------------------
# convolutions
# ---------------------------------------------------------------------------


def test_conv_identity_kernel(rng):
    x = rng.standard_normal((3, 6, 6))
    w = np.zeros((3, 3, 1, 1))
    for i in range(3):
        w[i, i, 0, 0] = 1.0
    assert np.allclose(kernels.conv2d(x, w, np.zeros(3)), x, atol=1e-15)


def test_conv_constant_preservation(rng):
    w = rng.standard_normal((2, 3, 3, 3))
    b = rng.standard_normal(2)
    x = np.full((3, 5, 5), 0.7)
    out = kernels.conv2d(x, w, b, padding="reflect")
    want = w.sum(axis=(1, 2, 3)) * 0.7 + b
    assert np.allclose(out, want[:, None, None], atol=1e-12)


def test_conv_matches_six_loop_oracle():
    rng = np.random.default_rng(9)
    for case in range(200):
        c_in = int(rng.integers(1, 5))
        c_out = int(rng.integers(1, 5))
        h, w = rng.integers(2, 9, size=2)
        k = int(rng.choice([1, 3]))
        stride = int(rng.choice([1, 2]))
        padding = str(rng.choice(["zero", "reflect"]))
        if padding == "reflect" and (h <= k // 2 or w <= k // 2):
            padding = "zero"
        x = rng.standard_normal((c_in, int(h), int(w)))
        wgt = rng.standard_normal((c_out, c_in, k, k))
        b = rng.standard_normal(c_out)
        got = kernels.conv2d(x, wgt, b, stride=stride, padding=padding)
        want = oracles.conv2d_oracle(x, wgt, b, stride=stride, padding=padding)
        assert got.shape == want.shape
        assert _rel_err(got, want) < 1e-6


def test_conv_stride2_output_dims(rng):
    x = rng.standard_normal((1, 7, 10))
    w = rng.standard_normal((2, 1, 3, 3))
    out = kernels.conv2d(x, w, None, stride=2, padding="zero")
    assert out.shape == (2, 4, 5)


def test_depthwise_matches_oracle():
    rng = np.random.default_rng(10)
    for _ in range(100):
        c = int(rng.integers(1, 6))
        h, w = rng.integers(3, 9, size=2)
        k = int(rng.choice([3, 5]))
        dil = int(rng.choice([1, 2]))
        x = rng.standard_normal((c, int(h), int(w)))
        wgt = rng.standard_normal((c, k, k))
        b = rng.standard_normal(c)
        span = (k - 1) * dil + 1
        pad = (span - 1) // 2
        padding = "zero" if (h <= pad or w <= pad) else "reflect"
        got = kernels.depthwise_conv2d(x, wgt, b, dilation=dil, padding=padding)
        want = oracles.depthwise_oracle(x, wgt, b, dilation=dil, padding=padding)
        assert _rel_err(got, want) < 1e-6


def test_conv_rejects_even_kernel(rng):
    with pytest.raises(ShapeMismatch):
        kernels.conv2d(rng.standard_normal((1, 4, 4)), rng.standard_normal((1, 1, 2, 2)))


def test_conv_rejects_channel_mismatch(rng):
    with pytest.raises(ShapeMismatch):
        kernels.conv2d(rng.standard_normal((2, 4, 4)), rng.standard_normal((1, 3, 3, 3)))


@settings(max_examples=100, deadline=None)
@given(st.integers(min_value=0, max_value=2**31))
def test_conv_linearity_property(seed):
    rng = np.random.default_rng(seed)
    x1 = rng.standard_normal((2, 5, 5))
    x2 = rng.standard_normal((2, 5, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    a = float(rng.uniform(-2, 2))
    lhs = kernels.conv2d(x1 + a * x2, w, None, padding="zero")
    rhs = kernels.conv2d(x1, w, None, padding="zero") + a * kernels.conv2d(
        x2, w, None, padding="zero")
    assert np.allclose(lhs, rhs, atol=1e-9)


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------


def test_resize_constant(rng):
    x = np.full((3, 4, 4), 0.37)
    for oh, ow in ((1, 1), (3, 5), (9, 2), (16, 16)):
        assert np.allclose(kernels.bilinear_resize(x, oh, ow), 0.37, atol=1e-12)


def test_resize_hand_case():
    x = np.array([[[0.0, 1.0], [2.0, 3.0]]])
    out = kernels.bilinear_resize(x, 3, 3)
    assert np.isclose(out[0, 1, 1], 1.5)


def test_resize_matches_oracle():
    rng = np.random.default_rng(11)
    for _ in range(200):
        c = int(rng.integers(1, 5))
        h, w = rng.integers(1, 9, size=2)
        oh, ow = rng.integers(1, 9, size=2)
        x = rng.standard_normal((c, int(h), int(w)))
        got = kernels.bilinear_resize(x, int(oh), int(ow))
        want = oracles.bilinear_resize_oracle(x, int(oh), int(ow))
        assert _rel_err(got, want) < 1e-6


def test_sample_matches_oracle():
    rng = np.random.default_rng(12)
    for _ in range(100):
        c = int(rng.integers(1, 4))
        h, w = rng.integers(2, 9, size=2)
        x = rng.standard_normal((c, int(h), int(w)))
        xs = rng.uniform(-2, w + 2, size=(3, 4))
        ys = rng.uniform(-2, h + 2, size=(3, 4))
        got = kernels.bilinear_sample(x, xs, ys)
        want = oracles.bilinear_sample_oracle(x, xs, ys)
        assert _rel_err(got, want) < 1e-6


def test_sample_at_integer_coords_is_exact(rng):
    x = rng.standard_normal((2, 5, 7))
    ys, xs = np.meshgrid(np.arange(5.0), np.arange(7.0), indexing="ij")
    assert np.allclose(kernels.bilinear_sample(x, xs, ys), x, atol=1e-15)


# ---------------------------------------------------------------------------
# attention
# ---------------------------------------------------------------------------


def _attn_weights(rng, c):
    mk = lambda: (rng.standard_normal((c, c)) / np.sqrt(c), rng.standard_normal(c) * 0.1)
    wq, bq = mk(); wk, bk = mk(); wv, bv = mk()
    return wq, bq, wk, bk, wv, bv


def test_attention_1x1_window_is_value_projection(rng):
    c, h, w = 4, 3, 5
    q_src = rng.standard_normal((c, h, w))
    kv_src = rng.standard_normal((c, h, w))
    wq, bq, wk, bk, wv, bv = _attn_weights(rng, c)
    out = kernels.window_attention(q_src, kv_src, wq, bq, wk, bk, wv, bv,
                                   window=1, heads=2)
    want = kernels.conv1x1(kv_src, wv, bv)
    assert np.allclose(out, want, atol=1e-12)


def test_attention_matches_dense_oracle():
    rng = np.random.default_rng(13)
    for _ in range(200):
        heads = int(rng.choice([1, 2]))
        c = int(rng.choice([2, 4, 6])) * heads
        h, w = rng.integers(1, 9, size=2)
        window = int(rng.choice([1, 2, 3, 4]))
        q_src = rng.standard_normal((c, int(h), int(w)))
        kv_src = rng.standard_normal((c, int(h), int(w)))
        args = _attn_weights(rng, c)
        got = kernels.window_attention(q_src, kv_src, *args, window=window, heads=heads)
        want = oracles.window_attention_oracle(q_src, kv_src, *args,
                                               window=window, heads=heads)
        assert _rel_err(got, want) < 1e-6


def test_attention_4x4_window2_single_head():
    rng = np.random.default_rng(14)
    c = 4
    q_src = rng.standard_normal((c, 4, 4))
    args = _attn_weights(rng, c)
    got = kernels.window_attention(q_src, q_src, *args, window=2, heads=1)
    want = oracles.window_attention_oracle(q_src, q_src, *args, window=2, heads=1)
    assert _rel_err(got, want) < 1e-6


def test_attention_output_in_value_hull(rng):
    # with one head and no padding, each output is a convex combination of
    # projected values in its window
    c, h, w = 2, 4, 4
    q_src = rng.standard_normal((c, h, w))
    kv_src = rng.standard_normal((c, h, w))
    wq, bq, wk, bk, wv, bv = _attn_weights(rng, c)
    out = kernels.window_attention(q_src, kv_src, wq, bq, wk, bk, wv, bv,
                                   window=4, heads=1)
    v = kernels.conv1x1(kv_src, wv, bv)
    assert np.all(out.max(axis=(1, 2)) <= v.max(axis=(1, 2)) + 1e-12)
    assert np.all(out.min(axis=(1, 2)) >= v.min(axis=(1, 2)) - 1e-12)


def test_attention_rejects_bad_heads(rng):
    x = rng.standard_normal((5, 4, 4))
    args = _attn_weights(rng, 5)
    with pytest.raises(ShapeMismatch):
        kernels.window_attention(x, x, *args, window=2, heads=2)

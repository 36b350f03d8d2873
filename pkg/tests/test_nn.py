import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import conv3x3_loops, matmul_loops
from saot import tensor as T
from saot.errors import ConfigurationError, DimensionError, NumericError
from saot.gradcheck import grad_check
from saot.nn import (
    LinearParams,
    MLPParams,
    ParameterStore,
    block_linear,
    complex_block_linear,
    conv3x3_same,
    layer_norm,
    linear_forward,
    mlp_forward,
)

finite = st.floats(-10, 10, allow_nan=False)


# -- linear ----------------------------------------------------------------

def test_linear_identity_input():
    W = np.array([[1.0, 2.0], [3.0, 4.0]])
    y = linear_forward(np.eye(2), W, np.zeros(2)).data
    np.testing.assert_array_equal(y, W)


def test_linear_identity_weight_plus_bias():
    y = linear_forward(np.array([[1.0, 1.0]]), np.eye(2), np.array([5.0, 5.0])).data
    np.testing.assert_array_equal(y, [[6.0, 6.0]])


@pytest.mark.parametrize("seed", range(5))
def test_linear_matches_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    x, W = rng.standard_normal((4, 3)), rng.standard_normal((3, 2))
    np.testing.assert_allclose(linear_forward(x, W).data, matmul_loops(x, W), atol=1e-12)


@given(arrays(np.float64, (3, 4), elements=finite), arrays(np.float64, (3, 4), elements=finite),
       finite, finite)
def test_linear_is_affine(x, y, a, b):
    rng = np.random.default_rng(0)
    W, bias = rng.standard_normal((4, 2)), rng.standard_normal(2)
    lhs = linear_forward(a * x + b * y, W, bias).data
    rhs = a * linear_forward(x, W, bias).data + b * linear_forward(y, W, bias).data
    rhs -= (a + b - 1) * bias
    np.testing.assert_allclose(lhs, rhs, atol=1e-9 * (1 + np.abs(rhs).max()))


# -- layer norm --------------------------------------------------------------

def test_layer_norm_constant_row_is_zero():
    out = layer_norm(np.full((1, 5), 3.7), np.ones(5), np.zeros(5)).data
    np.testing.assert_array_equal(out, np.zeros((1, 5)))


def test_layer_norm_normalized_row_unchanged():
    out = layer_norm(np.array([[1.0, -1.0]]), np.ones(2), np.zeros(2), eps=1e-14).data
    np.testing.assert_allclose(out, [[1.0, -1.0]], atol=1e-12)


def test_layer_norm_moments(rng):
    out = layer_norm(rng.standard_normal((3, 5)) * 4 + 2, np.ones(5), np.zeros(5), eps=1e-6).data
    assert np.abs(out.mean(axis=1)).max() <= 1e-12
    assert np.abs(out.var(axis=1) - 1).max() <= 1e-6


def test_layer_norm_rejects_non_finite():
    with pytest.raises(NumericError):
        layer_norm(np.array([[1.0, np.nan]]), np.ones(2), np.zeros(2))


# -- conv ------------------------------------------------------------------

def test_conv_delta_kernel_is_identity(rng):
    x = rng.standard_normal((5, 6, 3))
    k = np.zeros((3, 3, 3, 3))
    k[1, 1] = np.eye(3)
    np.testing.assert_array_equal(conv3x3_same(x, k, np.zeros(3)).data, x)


def test_conv_ones_kernel_counts_taps():
    out = conv3x3_same(np.ones((5, 5, 1)), np.ones((3, 3, 1, 1)), np.zeros(1)).data[..., 0]
    assert np.all(out[1:-1, 1:-1] == 9)
    assert out[0, 0] == out[0, -1] == out[-1, 0] == out[-1, -1] == 4
    assert np.all(out[0, 1:-1] == 6)


@pytest.mark.parametrize("seed", range(3))
def test_conv_matches_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    x, k, b = rng.standard_normal((6, 6, 2)), rng.standard_normal((3, 3, 2, 3)), rng.standard_normal(3)
    np.testing.assert_allclose(conv3x3_same(x, k, b).data, conv3x3_loops(x, k, b), atol=1e-12)


def test_conv_channel_mismatch():
    with pytest.raises(DimensionError):
        conv3x3_same(np.ones((4, 4, 2)), np.ones((3, 3, 3, 1)))


# -- mlp ---------------------------------------------------------------------

def _mlp(width=4, ratio=2, activation="gelu", seed=0):
    store = ParameterStore(seed)
    return store, MLPParams.init(store, "mlp", width, ratio, activation)


def test_mlp_zero_weights_give_zero(rng):
    store, p = _mlp()
    for _, t in store.items():
        t.data[...] = 0.0
    assert not mlp_forward(rng.standard_normal((3, 4)), p).data.any()


def test_mlp_constructed_identity(rng):
    store, p = _mlp(width=4, ratio=2, activation="identity")
    p.fc1.weight.data[...] = np.hstack([np.eye(4), np.zeros((4, 4))])
    p.fc2.weight.data[...] = np.vstack([np.eye(4), np.zeros((4, 4))])
    x = rng.standard_normal((3, 4))
    np.testing.assert_array_equal(mlp_forward(x, p).data, x)


def test_mlp_is_composition_of_linears(rng):
    store, p = _mlp(seed=3)
    p.fc1.bias.data[...] = rng.standard_normal(8)
    x = rng.standard_normal((3, 4))
    h = T.gelu(linear_forward(x, p.fc1.weight, p.fc1.bias))
    expected = linear_forward(h, p.fc2.weight, p.fc2.bias).data
    np.testing.assert_array_equal(mlp_forward(x, p).data, expected)


# -- parameter store ---------------------------------------------------------

def test_store_is_deterministic_and_ordered():
    def build():
        s = ParameterStore(7)
        LinearParams.init(s, "a", 3, 4)
        LinearParams.init(s, "b", 4, 2)
        return s

    s1, s2 = build(), build()
    assert s1.names() == s2.names() == ["a.weight", "a.bias", "b.weight", "b.bias"]
    for k in s1:
        np.testing.assert_array_equal(s1[k].data, s2[k].data)
        assert s1[k].requires_grad


def test_store_init_bounds():
    s = ParameterStore(0)
    w = s.uniform("w", (400, 10), fan_in=400)
    assert np.abs(w.data).max() <= 1 / 20
    assert not LinearParams.init(s, "l", 3, 3).bias.data.any()


def test_store_rejects_duplicates_and_bad_state():
    s = ParameterStore(0)
    s.zeros("w", (2,))
    with pytest.raises(ConfigurationError):
        s.zeros("w", (2,))
    with pytest.raises(ConfigurationError):
        s.load_state_dict({"w": np.zeros(3)})
    with pytest.raises(ConfigurationError):
        s.load_state_dict({"v": np.zeros(2)})


# -- block-diagonal maps -------------------------------------------------------

def test_block_linear_matches_dense(rng):
    w = rng.standard_normal((3, 2, 4))
    x = rng.standard_normal((5, 6))
    dense = np.zeros((6, 12))
    for i in range(3):
        dense[2 * i:2 * i + 2, 4 * i:4 * i + 4] = w[i]
    np.testing.assert_allclose(block_linear(x, w).data, x @ dense, atol=1e-12)


def test_complex_block_linear_matches_complex_arithmetic(rng):
    k, b, m = 2, 3, 5
    wr, wi = rng.standard_normal((k, b, m)), rng.standard_normal((k, b, m))
    z = rng.standard_normal((4, k * b)) + 1j * rng.standard_normal((4, k * b))
    packed = np.concatenate([z.real, z.imag], axis=-1)
    out = complex_block_linear(packed, wr, wi).data
    w = wr + 1j * wi
    expected = np.concatenate([z[:, i * b:(i + 1) * b] @ w[i] for i in range(k)], axis=-1)
    np.testing.assert_allclose(out[:, :k * m] + 1j * out[:, k * m:], expected, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_block_op_gradients(seed):
    rng = np.random.default_rng(seed)
    s = ParameterStore(seed)
    s.add("x", rng.standard_normal((2, 3, 8)))
    s.add("w", rng.standard_normal((2, 4, 3)))
    s.add("wr", rng.standard_normal((2, 4, 3)))
    s.add("wi", rng.standard_normal((2, 4, 3)))
    c = rng.standard_normal((2, 3, 6))
    c2 = rng.standard_normal((2, 3, 12))
    rep = grad_check(lambda p: T.tsum(block_linear(p["x"], p["w"]) * c), s, names=["x", "w"])
    assert rep.passed(1e-6), rep.errors
    s2 = ParameterStore(seed)
    s2.add("z", rng.standard_normal((2, 3, 16)))
    s2.add("wr", s["wr"].data)
    s2.add("wi", s["wi"].data)
    rep = grad_check(lambda p: T.tsum(complex_block_linear(p["z"], p["wr"], p["wi"]) * c2), s2)
    assert rep.passed(1e-6), rep.errors


@pytest.mark.parametrize("seed", range(5))
def test_layer_norm_and_conv_gradients(seed):
    rng = np.random.default_rng(seed)
    s = ParameterStore(seed)
    s.add("x", rng.standard_normal((2, 4, 5, 3)))
    s.add("g", rng.standard_normal(3))
    s.add("b", rng.standard_normal(3))
    s.add("k", rng.standard_normal((3, 3, 3, 2)))
    s.add("kb", rng.standard_normal(2))
    c = rng.standard_normal((2, 4, 5, 2))

    def f(p):
        return T.tsum(conv3x3_same(layer_norm(p["x"], p["g"], p["b"]), p["k"], p["kb"]) * c)

    rep = grad_check(f, s)
    assert rep.passed(1e-6), rep.errors

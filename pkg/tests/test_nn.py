import numpy as np
import pytest

from cellcast.errors import NumericError, ParseError, ShapeError, ValidationError
from cellcast.nn import (
    LSTM,
    AdamState,
    CausalConv1D,
    Dense,
    PointwiseConv1D,
    adam_step,
    add_backward,
    add_forward,
    causal_conv1d_backward,
    causal_conv1d_forward,
    clip_grad_norm,
    grad_check,
    load_weights,
    lstm_backward,
    lstm_forward,
    save_weights,
)
from cellcast.nn.gradcheck import relative_error

from oracles import conv_loop, lstm_loop, numeric_grad


class Wrap:
    """Expose a single layer through the grad_check model protocol."""

    def __init__(self, layer):
        self.layer = layer

    def forward(self, x):
        return self.layer.forward(x)

    def backward(self, g):
        return self.layer.backward(g)

    def zero_grad(self):
        self.layer.zero_grad()

    def parameters(self):
        return self.layer.params

    def gradients(self):
        return self.layer.grads


def projection_loss(shape, seed=0):
    r = np.random.default_rng(seed).normal(size=shape)

    def loss(out):
        return float(np.sum(out * r) + 0.25 * np.sum(out ** 2)), r + 0.5 * out

    return loss


# -- convolution ---------------------------------------------------------------


def test_conv_hand_examples():
    x = np.array([[1.0], [2.0], [3.0], [4.0]])
    w = np.ones((2, 1, 1))
    b = np.zeros(1)
    assert causal_conv1d_forward(x, w, b, 1).ravel().tolist() == [1, 3, 5, 7]
    assert causal_conv1d_forward(x, w, b, 2).ravel().tolist() == [1, 2, 4, 6]
    assert not causal_conv1d_forward(x, np.zeros((2, 1, 1)), b, 1).any()


def test_conv_matches_loop_oracle():
    rng = np.random.default_rng(1)
    for kernel, dilation in [(1, 1), (2, 3), (3, 2), (4, 1)]:
        x = rng.normal(size=(11, 3))
        w = rng.normal(size=(kernel, 3, 2))
        b = rng.normal(size=2)
        np.testing.assert_allclose(causal_conv1d_forward(x, w, b, dilation), conv_loop(x, w, b, dilation), atol=1e-12)


def test_conv_shape_errors():
    with pytest.raises(ShapeError):
        causal_conv1d_forward(np.zeros((5, 2)), np.zeros((2, 3, 1)), np.zeros(1))
    with pytest.raises(ShapeError):
        causal_conv1d_forward(np.zeros(5), np.zeros((2, 1, 1)), np.zeros(1))
    with pytest.raises(ValidationError):
        causal_conv1d_forward(np.zeros((5, 1)), np.zeros((2, 1, 1)), np.zeros(1), dilation=0)


def test_conv_backward_zero_and_scalar():
    x = np.array([[2.5]])
    w = np.array([[[-1.5]]])
    gx, gw, gb = causal_conv1d_backward(np.zeros((1, 1)), x, w, 1)
    assert not gx.any() and not gw.any() and not gb.any()
    gx, gw, gb = causal_conv1d_backward(np.ones((1, 1)), x, w, 1)
    assert gw.item() == 2.5 and gx.item() == -1.5 and gb.item() == 1.0


def test_conv_backward_before_forward():
    with pytest.raises(NumericError):
        CausalConv1D(1, 1).backward(np.zeros((3, 1)))


def test_conv_grad_check():
    rng = np.random.default_rng(2)
    layer = CausalConv1D(3, 4, kernel=3, dilation=2, rng=rng)
    layer.params["bias"][:] = rng.normal(size=4)
    x = rng.normal(size=(2, 10, 3))
    assert grad_check(Wrap(layer), x, projection_loss((2, 10, 4)), include_input=True) <= 1e-6


def test_conv_linearity():
    rng = np.random.default_rng(4)
    x1, x2 = rng.normal(size=(2, 9, 2))
    w1, w2 = rng.normal(size=(2, 3, 2, 3))
    zero = np.zeros(3)
    a, b = 0.7, -1.9
    lhs = causal_conv1d_forward(a * x1 + b * x2, w1, zero, 2)
    rhs = a * causal_conv1d_forward(x1, w1, zero, 2) + b * causal_conv1d_forward(x2, w1, zero, 2)
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)
    lhs = causal_conv1d_forward(x1, a * w1 + b * w2, zero, 2)
    rhs = a * causal_conv1d_forward(x1, w1, zero, 2) + b * causal_conv1d_forward(x1, w2, zero, 2)
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_pointwise_identity():
    layer = PointwiseConv1D(3, 3)
    layer.params["weight"][0] = np.eye(3)
    x = np.random.default_rng(0).normal(size=(7, 3))
    np.testing.assert_array_equal(layer.forward(x), x)


# -- LSTM ------------------------------------------------------------------------


def _lstm_params(rng, c_in, hidden, scale=0.5):
    return (
        rng.normal(size=(c_in, 4 * hidden)) * scale,
        rng.normal(size=(hidden, 4 * hidden)) * scale,
        rng.normal(size=4 * hidden) * scale,
    )


def test_lstm_zero_weights_give_zero():
    layer = LSTM(2, 3)
    for p in layer.params.values():
        p[...] = 0.0
    out = layer.forward(np.random.default_rng(0).normal(size=(6, 2)))
    assert out.shape == (6, 3) and not out.any()


def test_lstm_empty_sequence():
    out = LSTM(2, 3).forward(np.zeros((0, 2)))
    assert out.shape == (0, 3)


def test_lstm_bad_hidden():
    with pytest.raises(ValidationError):
        LSTM(2, 0)


def test_lstm_matches_recurrence_oracle():
    rng = np.random.default_rng(5)
    w_x, w_h, b = _lstm_params(rng, 2, 3)
    x = rng.normal(size=(9, 2))
    out, _ = lstm_forward(x, w_x, w_h, b)
    np.testing.assert_allclose(out, lstm_loop(x, w_x, w_h, b), rtol=0, atol=1e-12)
    layer = LSTM(2, 3)
    layer.params.update(w_x=w_x, w_h=w_h, bias=b)
    layer.forward(x)
    np.testing.assert_array_equal(layer.final_hidden, out[-1])


def test_lstm_backward_zero_grad():
    rng = np.random.default_rng(6)
    w_x, w_h, b = _lstm_params(rng, 2, 3)
    _, cache = lstm_forward(rng.normal(size=(4, 2)), w_x, w_h, b)
    for g in lstm_backward(np.zeros((4, 3)), cache, w_x, w_h):
        assert not np.any(g)


def test_lstm_single_step_hand_derivation():
    # one step from zero state: c = i*g, h = o*tanh(c); the recurrent weights get no gradient
    rng = np.random.default_rng(7)
    w_x, w_h, b = _lstm_params(rng, 1, 1)
    x = np.array([[0.8]])
    _, cache = lstm_forward(x, w_x, w_h, b)
    gx, gwx, gwh, gb = lstm_backward(np.ones((1, 1)), cache, w_x, w_h)
    z = x[0, 0] * w_x[0] + b
    sig = lambda v: 1 / (1 + np.exp(-v))  # noqa: E731
    i, f, g, o = sig(z[0]), sig(z[1]), np.tanh(z[2]), sig(z[3])
    c = i * g
    dc = o * (1 - np.tanh(c) ** 2)
    dz = np.array([dc * g * i * (1 - i), 0.0, dc * i * (1 - g * g), np.tanh(c) * o * (1 - o)])
    np.testing.assert_allclose(gb, dz, atol=1e-15)
    np.testing.assert_allclose(gwx[0], x[0, 0] * dz, atol=1e-15)
    assert not gwh.any()
    assert gx.item() == pytest.approx(float(dz @ w_x[0]), abs=1e-15)


def test_lstm_grad_check():
    rng = np.random.default_rng(8)
    layer = LSTM(3, 4, rng=rng)
    x = rng.normal(size=(2, 7, 3))
    assert grad_check(Wrap(layer), x, projection_loss((2, 7, 4)), include_input=True) <= 1e-6


def test_lstm_backward_matches_central_differences():
    rng = np.random.default_rng(9)
    w_x, w_h, b = _lstm_params(rng, 2, 3)
    x = rng.normal(size=(6, 2))
    r = rng.normal(size=(6, 3))
    f = lambda: float(np.sum(lstm_forward(x, w_x, w_h, b)[0] * r))  # noqa: E731
    _, cache = lstm_forward(x, w_x, w_h, b)
    gx, gwx, gwh, gb = lstm_backward(r, cache, w_x, w_h)
    for analytic, arr in ((gx, x), (gwx, w_x), (gwh, w_h), (gb, b)):
        assert relative_error(analytic, numeric_grad(f, arr)).max() <= 1e-5


def test_lstm_forget_bias_init():
    layer = LSTM(2, 3, rng=np.random.default_rng(0))
    np.testing.assert_array_equal(layer.params["bias"], [0, 0, 0, 1, 1, 1, 0, 0, 0, 0, 0, 0])


def test_init_is_seeded_glorot():
    a = CausalConv1D(2, 5, kernel=3, rng=np.random.default_rng(1))
    b = CausalConv1D(2, 5, kernel=3, rng=np.random.default_rng(1))
    np.testing.assert_array_equal(a.params["weight"], b.params["weight"])
    limit = np.sqrt(6.0 / (3 * 2 + 3 * 5))
    assert np.abs(a.params["weight"]).max() <= limit
    assert not a.params["bias"].any()


# -- dense, add --------------------------------------------------------------------


def test_dense_grad_check():
    rng = np.random.default_rng(10)
    layer = Dense(5, 3, rng=rng)
    layer.params["bias"][:] = rng.normal(size=3)
    assert grad_check(Wrap(layer), rng.normal(size=(4, 5)), projection_loss((4, 3)), include_input=True) <= 1e-6


def test_add():
    x = np.arange(6.0).reshape(3, 2)
    np.testing.assert_array_equal(add_forward(x, np.zeros_like(x)), x)
    g = np.ones((3, 2))
    ga, gb = add_backward(g)
    np.testing.assert_array_equal(ga, g)
    np.testing.assert_array_equal(gb, g)
    with pytest.raises(ShapeError):
        add_forward(x, np.zeros((2, 3)))


# -- adam ----------------------------------------------------------------------------


def test_adam_zero_gradient():
    p = {"w": np.array([1.0, -2.0])}
    state = AdamState()
    adam_step(state, p, {"w": np.zeros(2)})
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])
    assert state.step == 1


def test_adam_first_step_closed_form():
    # m_hat = g and v_hat = g^2 after one step, so the update is lr * g / (|g| + eps)
    g = np.array([0.3, -4.0, 1e-3])
    p = {"w": np.zeros(3)}
    state = AdamState(lr=0.01)
    adam_step(state, p, {"w": g.copy()})
    np.testing.assert_allclose(p["w"], -0.01 * g / (np.abs(g) + 1e-8), rtol=1e-12)
    np.testing.assert_allclose(p["w"], -0.01 * np.sign(g), rtol=1e-4)


def test_adam_deterministic_and_rejects_nan():
    def run():
        rng = np.random.default_rng(0)
        p = {"w": rng.normal(size=4)}
        s = AdamState()
        for _ in range(5):
            adam_step(s, p, {"w": rng.normal(size=4)})
        return p["w"]

    np.testing.assert_array_equal(run(), run())
    with pytest.raises(NumericError, match="'w'"):
        adam_step(AdamState(), {"w": np.zeros(2)}, {"w": np.array([1.0, np.nan])})
    with pytest.raises(ValidationError):
        AdamState(lr=0.0)


def test_clip_grad_norm():
    g = {"a": np.array([3.0, 0.0]), "b": np.array([4.0])}
    assert clip_grad_norm(g, 1.0) == 5.0
    np.testing.assert_allclose(np.sqrt(g["a"] @ g["a"] + g["b"] @ g["b"]), 1.0)
    g = {"a": np.array([0.1])}
    clip_grad_norm(g, 5.0)
    assert g["a"][0] == 0.1


# -- grad_check itself ----------------------------------------------------------------


def test_grad_check_linear_model_is_exact():
    rng = np.random.default_rng(11)
    layer = Dense(4, 1, rng=rng)
    x = rng.normal(size=(6, 4))
    y = rng.normal(size=(6, 1))

    def loss(out):
        return float(0.5 * np.sum((out - y) ** 2)), out - y

    assert grad_check(Wrap(layer), x, loss) <= 1e-9


def test_grad_check_detects_corruption():
    rng = np.random.default_rng(12)

    class Broken(Wrap):
        def backward(self, g):
            out = super().backward(g)
            self.layer.grads["weight"] *= 1.1
            return out

    layer = Dense(3, 2, rng=rng)
    assert grad_check(Broken(layer), rng.normal(size=(4, 3)), projection_loss((4, 2))) > 1e-2


def test_grad_check_non_finite_loss():
    layer = Dense(2, 1)
    with pytest.raises(NumericError):
        grad_check(Wrap(layer), np.ones((1, 2)), lambda out: (float("nan"), out))


# -- persistence ------------------------------------------------------------------------


def test_weights_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(13)
    params = {"block0.conv.weight": rng.normal(size=(3, 1, 4)), "head.bias": np.array([np.pi]), "x": rng.normal(size=7) * 1e-300}
    save_weights(params, tmp_path / "w.bin")
    loaded = load_weights(tmp_path / "w.bin")
    assert list(loaded) == list(params)
    for k in params:
        assert loaded[k].tobytes() == params[k].tobytes()
        assert loaded[k].shape == params[k].shape


def test_weights_bad_file(tmp_path):
    (tmp_path / "w.bin").write_bytes(b"NOTAWEIGHTFILE")
    with pytest.raises(ParseError):
        load_weights(tmp_path / "w.bin")
    save_weights({"a": np.ones(10)}, tmp_path / "t.bin")
    (tmp_path / "t.bin").write_bytes((tmp_path / "t.bin").read_bytes()[:-8])
    with pytest.raises(ParseError):
        load_weights(tmp_path / "t.bin")

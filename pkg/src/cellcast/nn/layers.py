"""Layers with explicit forward and backward passes.

Arrays are float64 and laid out ``[batch, time, channels]``; every layer
also accepts an unbatched ``[time, channels]`` input and returns the same
rank it was given. Functional ``*_forward``/``*_backward`` pairs carry the
math; the ``Layer`` classes own parameters, gradient buffers and the
activation cache of the most recent forward pass.
"""

from __future__ import annotations

import numpy as np

from ..errors import NumericError, ShapeError, ValidationError

DTYPE = np.float64


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(DTYPE)


def sigmoid(x):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _as_batch(x, name):
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim == 2:
        return x[None], True
    if x.ndim == 3:
        return x, False
    raise ShapeError(f"{name}: expected [time, channels] or [batch, time, channels], got shape {x.shape}")


# -- dilated causal convolution ----------------------------------------------


def _taps(kernel, dilation):
    """Backward shift of each kernel tap; tap ``kernel - 1`` reads time t itself."""
    return [(kernel - 1 - k) * dilation for k in range(kernel)]


def causal_conv1d_forward(x, weights, bias, dilation=1):
    """``out[t, o] = bias[o] + sum_{k,i} w[k, i, o] * x[t - (K-1-k)*dilation, i]``.

    Inputs before time 0 are zero, so the output has the input's length and
    never depends on later time steps.
    """
    xb, squeeze = _as_batch(x, "causal_conv1d")
    weights = np.asarray(weights, dtype=DTYPE)
    bias = np.asarray(bias, dtype=DTYPE)
    if weights.ndim != 3 or weights.shape[1] != xb.shape[2] or bias.shape != (weights.shape[2],):
        raise ShapeError(
            f"causal_conv1d: input channels {xb.shape[2]}, weights {weights.shape}, bias {bias.shape}"
        )
    if dilation < 1 or weights.shape[0] < 1:
        raise ValidationError("kernel and dilation must be at least 1")
    b, t, _ = xb.shape
    out = np.broadcast_to(bias, (b, t, weights.shape[2])).copy()
    for k, shift in enumerate(_taps(weights.shape[0], dilation)):
        if shift < t:
            out[:, shift:, :] += xb[:, : t - shift, :] @ weights[k]
    return out[0] if squeeze else out


def causal_conv1d_backward(grad_out, x, weights, dilation=1):
    """Gradients ``(grad_input, grad_weights, grad_bias)`` of the causal convolution."""
    xb, squeeze = _as_batch(x, "causal_conv1d")
    gb, _ = _as_batch(grad_out, "causal_conv1d grad")
    t = xb.shape[1]
    if gb.shape[:2] != xb.shape[:2] or gb.shape[2] != weights.shape[2]:
        raise ShapeError(f"causal_conv1d: grad shape {gb.shape} does not match output")
    gx = np.zeros_like(xb)
    gw = np.zeros_like(weights)
    for k, shift in enumerate(_taps(weights.shape[0], dilation)):
        if shift < t:
            xs = xb[:, : t - shift, :].reshape(-1, xb.shape[2])
            gs = gb[:, shift:, :].reshape(-1, gb.shape[2])
            gw[k] = xs.T @ gs
            gx[:, : t - shift, :] += gb[:, shift:, :] @ weights[k].T
    g_bias = gb.sum(axis=(0, 1))
    return (gx[0] if squeeze else gx), gw, g_bias


# -- LSTM ----------------------------------------------------------------------


def lstm_forward(x, w_x, w_h, bias):
    """Standard LSTM over the whole sequence from a zero state.

    Gate blocks in the ``4H`` axis are ordered input, forget, candidate,
    output. Returns the hidden sequence and a cache for ``lstm_backward``.
    """
    xb, squeeze = _as_batch(x, "lstm")
    hidden = w_h.shape[0]
    if w_x.shape != (xb.shape[2], 4 * hidden) or w_h.shape != (hidden, 4 * hidden) or bias.shape != (4 * hidden,):
        raise ShapeError(f"lstm: input channels {xb.shape[2]}, w_x {w_x.shape}, w_h {w_h.shape}")
    b, t, _ = xb.shape
    H = hidden
    # time-major buffers keep each step's slice contiguous
    xz = np.ascontiguousarray((xb @ w_x + bias).transpose(1, 0, 2))
    hs = np.zeros((t + 1, b, H))
    cs = np.zeros((t + 1, b, H))
    gates = np.empty((t, b, 4 * H))
    tanh_c = np.empty((t, b, H))
    for step in range(t):
        z = xz[step] + hs[step] @ w_h
        act = gates[step]
        act[:] = sigmoid(z)
        act[:, 2 * H : 3 * H] = np.tanh(z[:, 2 * H : 3 * H])
        cs[step + 1] = act[:, H : 2 * H] * cs[step] + act[:, :H] * act[:, 2 * H : 3 * H]
        np.tanh(cs[step + 1], out=tanh_c[step])
        np.multiply(act[:, 3 * H :], tanh_c[step], out=hs[step + 1])
    out = hs[1:].transpose(1, 0, 2)
    cache = (xb, hs, cs, gates, tanh_c)
    return (out[0] if squeeze else np.ascontiguousarray(out)), cache


def lstm_backward(grad_out, cache, w_x, w_h):
    """Backpropagation through time over the full sequence.

    Returns ``(grad_input, grad_w_x, grad_w_h, grad_bias)``.
    """
    xb, hs, cs, gates, tanh_c = cache
    gb, squeeze = _as_batch(grad_out, "lstm grad")
    b, t, _ = xb.shape
    H = w_h.shape[0]
    if gb.shape != (b, t, H):
        raise ShapeError(f"lstm: grad shape {gb.shape} does not match output {(b, t, H)}")
    gt = gb.transpose(1, 0, 2)
    i, f, g, o = (gates[..., k * H : (k + 1) * H] for k in range(4))
    # local derivatives that do not depend on the recursion
    dc_from_h = o * (1.0 - tanh_c * tanh_c)
    dz_from_c = np.concatenate([g * i * (1.0 - i), cs[:-1] * f * (1.0 - f), i * (1.0 - g * g)], axis=2)
    dz_from_h = tanh_c * o * (1.0 - o)
    dz = np.empty((t, b, 4 * H))
    dh_next = np.zeros((b, H))
    dc_next = np.zeros((b, H))
    w_h_t = np.ascontiguousarray(w_h.T)
    for step in reversed(range(t)):
        dh = gt[step] + dh_next
        dc = dh * dc_from_h[step] + dc_next
        d = dz[step]
        np.multiply(np.tile(dc, 3), dz_from_c[step], out=d[:, : 3 * H])
        np.multiply(dh, dz_from_h[step], out=d[:, 3 * H :])
        dc_next = dc * f[step]
        dh_next = d @ w_h_t
    flat_dz = dz.reshape(-1, 4 * H)
    g_wx = xb.transpose(1, 0, 2).reshape(-1, xb.shape[2]).T @ flat_dz
    g_wh = hs[:-1].reshape(-1, H).T @ flat_dz
    g_bias = flat_dz.sum(axis=0)
    gx = (dz @ w_x.T).transpose(1, 0, 2)
    return (gx[0] if squeeze else np.ascontiguousarray(gx)), g_wx, g_wh, g_bias


# -- dense and elementwise -------------------------------------------------------


def dense_forward(x, weights, bias):
    x = np.asarray(x, dtype=DTYPE)
    if x.shape[-1] != weights.shape[0] or bias.shape != (weights.shape[1],):
        raise ShapeError(f"dense: input width {x.shape[-1]}, weights {weights.shape}, bias {bias.shape}")
    return x @ weights + bias


def dense_backward(grad_out, x, weights):
    x = np.asarray(x, dtype=DTYPE)
    grad_out = np.asarray(grad_out, dtype=DTYPE)
    flat_x = x.reshape(-1, x.shape[-1])
    flat_g = grad_out.reshape(-1, grad_out.shape[-1])
    return grad_out @ weights.T, flat_x.T @ flat_g, flat_g.sum(axis=0)


def add_forward(a, b):
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    return a + b


def add_backward(grad_out):
    """The upstream gradient flows unchanged to both addends."""
    return grad_out, grad_out


# -- layer objects -----------------------------------------------------------------


class Layer:
    """Parameters, gradient buffers and the cache of the last forward pass."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def _add_param(self, name, value):
        self.params[name] = np.asarray(value, dtype=DTYPE)
        self.grads[name] = np.zeros_like(self.params[name])

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0.0)

    def _cached(self):
        if self._cache is None:
            raise NumericError(f"{type(self).__name__}.backward called before forward")
        return self._cache

    def forward(self, x):
        raise NotImplementedError

    def backward(self, grad_out):
        raise NotImplementedError

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())


class CausalConv1D(Layer):
    def __init__(self, in_channels, out_channels, kernel=3, dilation=1, rng=None):
        super().__init__()
        if min(in_channels, out_channels, kernel, dilation) < 1:
            raise ValidationError("conv channels, kernel and dilation must be positive")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.kernel, self.dilation = kernel, dilation
        shape = (kernel, in_channels, out_channels)
        self._add_param("weight", glorot_uniform(rng, shape, kernel * in_channels, kernel * out_channels))
        self._add_param("bias", np.zeros(out_channels))

    def forward(self, x):
        self._cache = np.asarray(x, dtype=DTYPE)
        return causal_conv1d_forward(self._cache, self.params["weight"], self.params["bias"], self.dilation)

    def backward(self, grad_out):
        x = self._cached()
        gx, gw, gb = causal_conv1d_backward(grad_out, x, self.params["weight"], self.dilation)
        self.grads["weight"] += gw
        self.grads["bias"] += gb
        return gx


class PointwiseConv1D(CausalConv1D):
    """Length-1 convolution: a per-time-step channel projection."""

    def __init__(self, in_channels, out_channels, rng=None):
        super().__init__(in_channels, out_channels, kernel=1, dilation=1, rng=rng)


class LSTM(Layer):
    def __init__(self, in_channels, hidden, rng=None, forget_bias=1.0):
        super().__init__()
        if hidden <= 0:
            raise ValidationError(f"hidden_size must be positive, got {hidden}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.hidden = hidden
        self._add_param("w_x", glorot_uniform(rng, (in_channels, 4 * hidden), in_channels, 4 * hidden))
        self._add_param("w_h", glorot_uniform(rng, (hidden, 4 * hidden), hidden, 4 * hidden))
        bias = np.zeros(4 * hidden)
        bias[hidden : 2 * hidden] = forget_bias
        self._add_param("bias", bias)
        self.final_hidden = None

    def forward(self, x):
        out, self._cache = lstm_forward(x, self.params["w_x"], self.params["w_h"], self.params["bias"])
        self.final_hidden = out[..., -1, :] if out.shape[-2] else None
        return out

    def backward(self, grad_out):
        cache = self._cached()
        gx, gwx, gwh, gb = lstm_backward(grad_out, cache, self.params["w_x"], self.params["w_h"])
        self.grads["w_x"] += gwx
        self.grads["w_h"] += gwh
        self.grads["bias"] += gb
        return gx


class Dense(Layer):
    def __init__(self, in_features, out_features, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self._add_param("weight", glorot_uniform(rng, (in_features, out_features), in_features, out_features))
        self._add_param("bias", np.zeros(out_features))

    def forward(self, x):
        self._cache = np.asarray(x, dtype=DTYPE)
        return dense_forward(self._cache, self.params["weight"], self.params["bias"])

    def backward(self, grad_out):
        gx, gw, gb = dense_backward(grad_out, self._cached(), self.params["weight"])
        self.grads["weight"] += gw
        self.grads["bias"] += gb
        return gx


class Tanh(Layer):
    def forward(self, x):
        self._cache = np.tanh(x)
        return self._cache

    def backward(self, grad_out):
        return grad_out * (1.0 - self._cached() ** 2)

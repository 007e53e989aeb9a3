"""The numpy layers behind the forecaster, checked against finite differences.

Every layer carries an explicit backward pass. ``grad_check`` perturbs each
parameter by +/- 1e-5 and compares the central difference with the analytic
gradient, reporting the worst relative error.

    python3 demos/layers_and_gradients.py
"""

import numpy as np

from cellcast.model import MultiTcnLstmConfig, build
from cellcast.nn import LSTM, CausalConv1D, Dense, causal_conv1d_forward, grad_check

# A dilated causal convolution only looks backwards in time.
x = np.array([[1.0], [2.0], [3.0], [4.0]])
kernel = np.ones((2, 1, 1))
for dilation in (1, 2):
    out = causal_conv1d_forward(x, kernel, np.zeros(1), dilation)
    print(f"taps [1, 1], dilation {dilation}: {x.ravel()} -> {out.ravel()}")


class Single:
    """Minimal model wrapper so grad_check can drive one layer."""

    def __init__(self, layer):
        self.layer = layer
        self.forward, self.backward, self.zero_grad = layer.forward, layer.backward, layer.zero_grad

    def parameters(self):
        return self.layer.params

    def gradients(self):
        return self.layer.grads


def half_square(out):
    return float(0.5 * np.sum(out * out)), out


rng = np.random.default_rng(0)
for layer, shape in (
    (CausalConv1D(2, 3, kernel=3, dilation=2, rng=rng), (2, 10, 2)),
    (LSTM(2, 4, rng=rng), (2, 10, 2)),
    (Dense(5, 2, rng=rng), (3, 5)),
):
    err = grad_check(Single(layer), rng.normal(size=shape), half_square, include_input=True)
    print(f"{type(layer).__name__:>13}: max relative error {err:.2e}")

model = build(MultiTcnLstmConfig(channels=(4, 8, 16)))
print(f"\nmulti TCN-LSTM [4, 8, 16]: {model.n_params} parameters")
err = grad_check(model, rng.normal(size=(2, 24, 1)), half_square)
print(f"whole-model max relative error {err:.2e}")

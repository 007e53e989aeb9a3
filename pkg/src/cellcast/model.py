"""The multi TCN-LSTM forecaster and the LSTM / MLP baselines.

A multi TCN-LSTM is a stack of blocks. Each block runs a dilated causal
convolution into an LSTM and adds a pointwise-convolution projection of the
block input to the LSTM output (the residual convolutional connection). A
dense head maps the last time step of the final block to the forecast.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import NumericError, ShapeError, ValidationError
from .nn import LSTM, CausalConv1D, Dense, PointwiseConv1D, Tanh, add_backward, add_forward

VARIANTS = ("multi-tcn-lstm", "lstm", "mlp")


@dataclass(frozen=True)
class MultiTcnLstmConfig:
    channels: tuple[int, ...] = (16, 32, 64)
    kernel: int = 3
    dilations: tuple[int, ...] = (1, 2, 4)
    lstm_hidden: tuple[int, ...] | None = None
    window: int = 24
    horizon: int = 1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))
        hidden = self.channels if self.lstm_hidden is None else tuple(int(h) for h in self.lstm_hidden)
        object.__setattr__(self, "lstm_hidden", hidden)
        self.validate()

    def validate(self):
        if not self.channels:
            raise ValidationError("channels must be non-empty")
        if len(self.dilations) != len(self.channels) or len(self.lstm_hidden) != len(self.channels):
            raise ValidationError("dilations and lstm_hidden need one entry per block")
        if min(self.channels) < 1 or min(self.lstm_hidden) < 1 or min(self.dilations) < 1:
            raise ValidationError("channels, lstm_hidden and dilations must be positive")
        if self.kernel < 1 or self.horizon < 1:
            raise ValidationError("kernel and horizon must be positive")
        if self.window < (self.kernel - 1) * max(self.dilations) + 1:
            raise ValidationError(
                f"window {self.window} shorter than the widest conv span {(self.kernel - 1) * max(self.dilations) + 1}"
            )

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def _check_finite(x, where):
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite activation in {where}")


class ModelGraph:
    """Common parameter plumbing for every forecaster.

    Subclasses list their layers in ``self.layers`` (name -> Layer) and
    implement ``_forward`` / ``_backward`` on batched arrays.
    """

    kind = "model"

    def __init__(self, window, horizon):
        self.window = window
        self.horizon = horizon
        self.layers: dict = {}
        self._squeeze = False

    def parameters(self) -> dict[str, np.ndarray]:
        return {f"{ln}.{pn}": p for ln, layer in self.layers.items() for pn, p in layer.params.items()}

    def gradients(self) -> dict[str, np.ndarray]:
        return {f"{ln}.{pn}": g for ln, layer in self.layers.items() for pn, g in layer.grads.items()}

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def zero_grad(self):
        for layer in self.layers.values():
            layer.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.copy() for name, p in self.parameters().items()}

    def load_state_dict(self, state) -> None:
        params = self.parameters()
        if set(state) != set(params):
            raise ValidationError(f"state keys do not match model parameters: {sorted(set(state) ^ set(params))}")
        for name, p in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ShapeError(f"{name}: shape {value.shape} != {p.shape}")
            p[...] = value

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        self._squeeze = x.ndim == 2
        xb = x[None] if self._squeeze else x
        if xb.ndim != 3 or xb.shape[1] != self.window or xb.shape[2] != 1:
            raise ShapeError(f"{self.kind}: expected window of shape [{self.window}, 1], got {x.shape}")
        out = self._forward(xb)
        _check_finite(out, f"{self.kind} output")
        return out[0] if self._squeeze else out

    def backward(self, grad_out):
        g = np.asarray(grad_out, dtype=np.float64)
        gb = g[None] if self._squeeze else g
        gx = self._backward(gb)
        return gx[0] if self._squeeze else gx

    __call__ = forward


class MultiTcnLstm(ModelGraph):
    kind = "multi-tcn-lstm"

    def __init__(self, config: MultiTcnLstmConfig):
        super().__init__(config.window, config.horizon)
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.n_blocks = len(config.channels)
        in_ch = 1
        for b, (ch, dil, hid) in enumerate(zip(config.channels, config.dilations, config.lstm_hidden)):
            self.layers[f"block{b}.conv"] = CausalConv1D(in_ch, ch, config.kernel, dil, rng=rng)
            self.layers[f"block{b}.lstm"] = LSTM(ch, hid, rng=rng)
            self.layers[f"block{b}.residual"] = PointwiseConv1D(in_ch, hid, rng=rng)
            in_ch = hid
        self.layers["head"] = Dense(in_ch, config.horizon, rng=rng)
        self._last_shape = None

    def block(self, b):
        return tuple(self.layers[f"block{b}.{part}"] for part in ("conv", "lstm", "residual"))

    def _forward(self, x):
        for b in range(self.n_blocks):
            conv, lstm, residual = self.block(b)
            x = add_forward(lstm.forward(conv.forward(x)), residual.forward(x))
            _check_finite(x, f"block {b}")
        self._last_shape = x.shape
        return self.layers["head"].forward(x[:, -1, :])

    def _backward(self, grad_out):
        g_last = self.layers["head"].backward(grad_out)
        g = np.zeros(self._last_shape)
        g[:, -1, :] = g_last
        for b in reversed(range(self.n_blocks)):
            conv, lstm, residual = self.block(b)
            g_main, g_skip = add_backward(g)
            g = conv.backward(lstm.backward(g_main)) + residual.backward(g_skip)
        return g


class LstmBaseline(ModelGraph):
    kind = "lstm"

    def __init__(self, hidden=64, window=24, horizon=1, seed=0):
        super().__init__(window, horizon)
        if window < 1 or horizon < 1:
            raise ValidationError("window and horizon must be positive")
        rng = np.random.default_rng(seed)
        self.config = {"hidden": hidden, "window": window, "horizon": horizon, "seed": seed}
        self.layers["lstm"] = LSTM(1, hidden, rng=rng)
        self.layers["head"] = Dense(hidden, horizon, rng=rng)
        self._t = None

    def _forward(self, x):
        h = self.layers["lstm"].forward(x)
        _check_finite(h, "lstm")
        self._t = h.shape
        return self.layers["head"].forward(h[:, -1, :])

    def _backward(self, grad_out):
        g = np.zeros(self._t)
        g[:, -1, :] = self.layers["head"].backward(grad_out)
        return self.layers["lstm"].backward(g)


class MlpBaseline(ModelGraph):
    """Flattened window through tanh hidden layers and a linear head."""

    kind = "mlp"

    def __init__(self, widths=(64, 64), window=24, horizon=1, seed=0):
        super().__init__(window, horizon)
        if window < 1 or horizon < 1 or any(w < 1 for w in widths):
            raise ValidationError("window, horizon and widths must be positive")
        rng = np.random.default_rng(seed)
        self.config = {"widths": list(widths), "window": window, "horizon": horizon, "seed": seed}
        self.n_hidden = len(widths)
        prev = window
        for i, w in enumerate(widths):
            self.layers[f"dense{i}"] = Dense(prev, w, rng=rng)
            self.layers[f"tanh{i}"] = Tanh()
            prev = w
        self.layers["head"] = Dense(prev, horizon, rng=rng)

    def _forward(self, x):
        h = x.reshape(x.shape[0], -1)
        for i in range(self.n_hidden):
            h = self.layers[f"tanh{i}"].forward(self.layers[f"dense{i}"].forward(h))
        return self.layers["head"].forward(h)

    def _backward(self, grad_out):
        g = self.layers["head"].backward(grad_out)
        for i in reversed(range(self.n_hidden)):
            g = self.layers[f"dense{i}"].backward(self.layers[f"tanh{i}"].backward(g))
        return g.reshape(g.shape[0], self.window, 1)


def build(config: MultiTcnLstmConfig | None = None) -> MultiTcnLstm:
    return MultiTcnLstm(config or MultiTcnLstmConfig())


def build_baseline_lstm(hidden=64, window=24, horizon=1, seed=0) -> LstmBaseline:
    return LstmBaseline(hidden, window, horizon, seed)


def build_baseline_mlp(widths=(64, 64), window=24, horizon=1, seed=0) -> MlpBaseline:
    return MlpBaseline(tuple(widths), window, horizon, seed)


@dataclass(frozen=True)
class ModelSpec:
    """Everything needed to rebuild a variant: its name and constructor settings."""

    variant: str
    tcn: MultiTcnLstmConfig = field(default_factory=MultiTcnLstmConfig)
    lstm_hidden: int = 64
    mlp_widths: tuple[int, ...] = (64, 64)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValidationError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")

    @property
    def window(self):
        return self.tcn.window

    @property
    def horizon(self):
        return self.tcn.horizon

    def build(self, seed=None) -> ModelGraph:
        seed = self.tcn.seed if seed is None else seed
        if self.variant == "multi-tcn-lstm":
            cfg = self.tcn if seed == self.tcn.seed else MultiTcnLstmConfig(**{**self.tcn.to_dict(), "seed": seed})
            return build(cfg)
        if self.variant == "lstm":
            return build_baseline_lstm(self.lstm_hidden, self.window, self.horizon, seed)
        return build_baseline_mlp(self.mlp_widths, self.window, self.horizon, seed)

    def to_dict(self):
        return {
            "variant": self.variant,
            "tcn": self.tcn.to_dict(),
            "lstm_hidden": self.lstm_hidden,
            "mlp_widths": list(self.mlp_widths),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["variant"], MultiTcnLstmConfig(**d["tcn"]), int(d["lstm_hidden"]), tuple(d["mlp_widths"]))

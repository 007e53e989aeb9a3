"""Minimal float64 neural-network core with hand-written gradients."""

from .gradcheck import grad_check, relative_error
from .io import load_weights, save_weights
from .layers import (
    LSTM,
    CausalConv1D,
    Dense,
    Layer,
    PointwiseConv1D,
    Tanh,
    add_backward,
    add_forward,
    causal_conv1d_backward,
    causal_conv1d_forward,
    dense_backward,
    dense_forward,
    glorot_uniform,
    lstm_backward,
    lstm_forward,
    sigmoid,
)
from .optim import AdamState, adam_step, clip_grad_norm, global_norm

__all__ = [
    "LSTM", "CausalConv1D", "Dense", "Layer", "PointwiseConv1D", "Tanh",
    "add_backward", "add_forward", "causal_conv1d_backward", "causal_conv1d_forward",
    "dense_backward", "dense_forward", "glorot_uniform", "lstm_backward", "lstm_forward",
    "sigmoid", "AdamState", "adam_step", "clip_grad_norm", "global_norm",
    "grad_check", "relative_error", "load_weights", "save_weights",
]

"""Central finite-difference check of analytic gradients."""

from __future__ import annotations

import numpy as np

from ..errors import NumericError

EPS = 1e-5
FLOOR = 1e-8


def relative_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), FLOOR)
    return np.abs(analytic - numeric) / scale


def grad_check(model, x, loss, eps=EPS, include_input=False):
    """Largest relative error between backprop and central differences.

    ``model`` exposes ``forward``, ``backward``, ``zero_grad``,
    ``parameters()`` and ``gradients()`` (name -> array, shared storage).
    ``loss(out)`` returns ``(value, d value / d out)``. Every parameter
    element is perturbed by ``+-eps``.
    """
    x = np.array(x, dtype=np.float64)

    def value():
        v, _ = loss(model.forward(x))
        v = float(v)
        if not np.isfinite(v):
            raise NumericError("grad_check: non-finite loss")
        return v

    model.zero_grad()
    out = model.forward(x)
    v0, dout = loss(out)
    if not np.isfinite(v0):
        raise NumericError("grad_check: non-finite loss")
    grad_x = model.backward(dout)
    analytic = {name: g.copy() for name, g in model.gradients().items()}

    worst = 0.0
    for name, p in model.parameters().items():
        numeric = np.zeros_like(p)
        flat, nflat = p.reshape(-1), numeric.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            up = value()
            flat[i] = old - eps
            down = value()
            flat[i] = old
            nflat[i] = (up - down) / (2 * eps)
        if p.size:
            worst = max(worst, float(relative_error(analytic[name], numeric).max()))

    if include_input:
        numeric = np.zeros_like(x)
        flat, nflat = x.reshape(-1), numeric.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            up = value()
            flat[i] = old - eps
            down = value()
            flat[i] = old
            nflat[i] = (up - down) / (2 * eps)
        worst = max(worst, float(relative_error(grad_x, numeric).max()))
    return worst

"""Central finite-difference gradient checks."""
from __future__ import annotations

import numpy as np

EPS = 1e-5


def rel_error(analytic, numeric, scale_floor: float = 1e-3, floor: float = 1e-10) -> float:
    """max |a - n| / max(|a|, |n|) over entries.

    Entries far below the tensor's largest gradient are dominated by
    finite-difference roundoff, so the denominator never drops below
    ``scale_floor`` times that largest magnitude.
    """
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    if not a.size:
        return 0.0
    big = max(np.abs(a).max(), np.abs(n).max())
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), max(scale_floor * big, floor))
    return float(np.max(np.abs(a - n) / denom))


def numeric_grad(f, x: np.ndarray, eps: float = EPS) -> np.ndarray:
    """Gradient of scalar ``f()`` w.r.t. ``x``, perturbing ``x`` in place."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + eps
        fp = f()
        x[idx] = old - eps
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * eps)
    return g


def check_layer(layer, x: np.ndarray, seed: int = 0, training: bool = False, eps: float = EPS) -> dict[str, float]:
    """Relative errors of input and parameter gradients for ``sum(R * layer(x))``."""
    rng = np.random.default_rng(seed)
    out = layer.forward(x, training, np.random.default_rng(seed + 1))
    R = rng.standard_normal(out.shape)

    def f():
        return float(np.sum(R * layer.forward(x, training, np.random.default_rng(seed + 1))))

    f()
    dx = layer.backward(R)
    analytic = {k: v.copy() for k, v in layer.grads.items()}
    errors = {"x": rel_error(dx, numeric_grad(f, x, eps))}
    for k, p in layer.params.items():
        errors[k] = rel_error(analytic[k], numeric_grad(f, p, eps))
    return errors


def check_network(net, x, y, loss_fn, seed: int = 0, training: bool = True, eps: float = EPS) -> dict[str, float]:
    """Relative errors of every parameter gradient of ``loss_fn(y, net(x))``; dropout masks are re-seeded per pass."""

    def f():
        net.reseed(seed)
        return loss_fn(y, net.forward(x, training))[0]

    net.reseed(seed)
    out = net.forward(x, training)
    _, dout = loss_fn(y, out)
    net.backward(dout)
    analytic = {k: g.copy() for k, g in net.named_grads().items()}
    errors = {}
    for k, p in net.named_params().items():
        errors[k] = rel_error(analytic[k], numeric_grad(f, p, eps))
    return errors


def kink_distance(net) -> float:
    """Smallest distance of any cached pre-activation from a non-differentiable point.

    Covers (leaky) ReLU inputs, ReLU-squashed LSTM cell states and max-pool
    runner-up gaps. Call after a forward pass.
    """
    from .layers import LSTM, MaxPool1D

    best = np.inf
    for layer in net.layers:
        act = getattr(layer, "activation", None) or getattr(layer, "name", None)
        if act in ("relu", "leaky_relu") and hasattr(layer, "z"):
            best = min(best, float(np.abs(layer.z).min()))
        if act in ("relu", "leaky_relu") and hasattr(layer, "x") and layer.kind == "activation":
            best = min(best, float(np.abs(layer.x).min()))
        if isinstance(layer, LSTM):
            if "relu" in (layer.h,):
                best = min(best, float(np.abs(layer.cs[:, 1:]).min()))
            if "relu" in (layer.g,):
                best = min(best, float(np.abs(layer.zg).min()))
        if isinstance(layer, MaxPool1D) and layer.size > 1 and hasattr(layer, "win"):
            srt = np.sort(layer.win, axis=2)
            best = min(best, float((srt[:, :, -1] - srt[:, :, -2]).min()))
    return best

"""Cross-entropy losses returning the loss and its gradient w.r.t. the predictions."""
from __future__ import annotations

import numpy as np

CLAMP = 1e-12


def _weights(n, sample_weight):
    if sample_weight is None:
        return np.full(n, 1.0 / n)
    w = np.asarray(sample_weight, dtype=np.float64)
    return w / w.sum()


def bce_loss(y_true, y_pred, sample_weight=None):
    """Weighted mean of -[y log p + (1-y) log(1-p)] with p clamped to [eps, 1-eps]."""
    y = np.asarray(y_true, dtype=np.float64).reshape(-1)
    p_raw = np.asarray(y_pred, dtype=np.float64)
    p = np.clip(p_raw.reshape(-1), CLAMP, 1 - CLAMP)
    w = _weights(len(y), sample_weight)
    loss = float(-np.sum(w * (y * np.log(p) + (1 - y) * np.log(1 - p))))
    inside = (p_raw.reshape(-1) > CLAMP) & (p_raw.reshape(-1) < 1 - CLAMP)
    grad = np.where(inside, w * (-(y / p) + (1 - y) / (1 - p)), 0.0)
    return loss, grad.reshape(p_raw.shape)


def categorical_ce(y_true, y_prob, sample_weight=None):
    """Weighted mean of -log p[class]; ``y_true`` holds integer classes."""
    y = np.asarray(y_true, dtype=np.int64).reshape(-1)
    q = np.asarray(y_prob, dtype=np.float64)
    rows = np.arange(len(y))
    picked = q[rows, y]
    p = np.clip(picked, CLAMP, 1.0)
    w = _weights(len(y), sample_weight)
    loss = float(-np.sum(w * np.log(p)))
    grad = np.zeros_like(q)
    grad[rows, y] = np.where(picked > CLAMP, -w / p, 0.0)
    return loss, grad

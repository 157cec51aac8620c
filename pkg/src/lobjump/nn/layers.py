"""Layers with explicit forward and backward passes.

Every layer works on a batch-first float64 array and caches what its backward
pass needs. Parameters live in ``self.params`` and their gradients in
``self.grads`` under the same keys.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

LEAKY_SLOPE = 0.01


class NNError(Exception):
    pass


class ShapeMismatch(NNError):
    pass


class KernelTooLarge(NNError):
    pass


class NonFinite(NNError):
    pass


# -- activations ----------------------------------------------------------------

def sigmoid(x):
    # tanh form cannot overflow
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def relu(x):
    return np.maximum(x, 0.0)


def leaky_relu(x, slope=LEAKY_SLOPE):
    return np.where(x > 0, x, slope * x)


def softmax(z, axis=-1):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def _act(name: str, x, slope=LEAKY_SLOPE):
    if name == "identity":
        return x
    if name == "relu":
        return relu(x)
    if name == "leaky_relu":
        return leaky_relu(x, slope)
    if name == "tanh":
        return np.tanh(x)
    if name == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {name!r}")


def _act_grad(name: str, x, y, slope=LEAKY_SLOPE):
    """Derivative given pre-activation ``x`` and output ``y``."""
    if name == "identity":
        return np.ones_like(x)
    if name == "relu":
        return (x > 0).astype(np.float64)
    if name == "leaky_relu":
        return np.where(x > 0, 1.0, slope)
    if name == "tanh":
        return 1.0 - y * y
    if name == "sigmoid":
        return y * (1.0 - y)
    raise ValueError(f"unknown activation {name!r}")


ACTIVATIONS = ("identity", "relu", "leaky_relu", "tanh", "sigmoid")


def glorot(rng, fan_in, fan_out, shape):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


# -- layers -----------------------------------------------------------------------

class Layer:
    kind = "layer"
    input_grad = True  # cleared on a network's first layer, whose input needs no gradient

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def init(self, rng):
        pass

    def output_shape(self, shape):
        return shape

    def forward(self, x, training=False, rng=None):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def config(self) -> dict:
        return {}

    def _zero_grads(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}


class Activation(Layer):
    kind = "activation"

    def __init__(self, name: str, slope: float = LEAKY_SLOPE):
        super().__init__()
        if name not in ACTIVATIONS:
            raise ValueError(f"unknown activation {name!r}")
        self.name, self.slope = name, slope

    def forward(self, x, training=False, rng=None):
        self.x = x
        self.y = _act(self.name, x, self.slope)
        return self.y

    def backward(self, dout):
        return dout * _act_grad(self.name, self.x, self.y, self.slope)

    def config(self):
        return {"activation": self.name, "slope": self.slope}


class Dense(Layer):
    """y = act(x @ W + b) on (batch, n_in) input."""

    kind = "dense"

    def __init__(self, n_in: int, n_out: int, activation: str = "identity", slope: float = LEAKY_SLOPE):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        self.activation, self.slope = activation, slope
        self.params = {"W": np.zeros((n_in, n_out)), "b": np.zeros(n_out)}

    def init(self, rng):
        self.params["W"] = glorot(rng, self.n_in, self.n_out, (self.n_in, self.n_out))
        self.params["b"] = np.zeros(self.n_out)

    def output_shape(self, shape):
        if tuple(shape) != (self.n_in,):
            raise ShapeMismatch(f"dense expects ({self.n_in},), got {tuple(shape)}")
        return (self.n_out,)

    def forward(self, x, training=False, rng=None):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeMismatch(f"dense expects (batch, {self.n_in}), got {x.shape}")
        self.x = x
        self.z = x @ self.params["W"] + self.params["b"]
        self.y = _act(self.activation, self.z, self.slope)
        return self.y

    def backward(self, dout):
        dz = dout * _act_grad(self.activation, self.z, self.y, self.slope)
        self.grads = {"W": self.x.T @ dz, "b": dz.sum(axis=0)}
        return dz @ self.params["W"].T

    def config(self):
        return {"units": self.n_out, "activation": self.activation}


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x, training=False, rng=None):
        self.shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self.shape)


class Reshape(Layer):
    kind = "reshape"

    def __init__(self, target: tuple[int, ...]):
        super().__init__()
        self.target = tuple(target)

    def output_shape(self, shape):
        if int(np.prod(shape)) != int(np.prod(self.target)):
            raise ShapeMismatch(f"cannot reshape {tuple(shape)} to {self.target}")
        return self.target

    def forward(self, x, training=False, rng=None):
        self.shape = x.shape
        return x.reshape((x.shape[0],) + self.target)

    def backward(self, dout):
        return dout.reshape(self.shape)

    def config(self):
        return {"target": "x".join(map(str, self.target))}


class Conv1D(Layer):
    """Valid cross-correlation over time: (batch, T, C_in) -> (batch, T-k+1, C_out)."""

    kind = "conv1d"

    def __init__(self, k: int, c_in: int, c_out: int, activation: str = "identity", slope: float = LEAKY_SLOPE):
        super().__init__()
        self.k, self.c_in, self.c_out = k, c_in, c_out
        self.activation, self.slope = activation, slope
        self.params = {"W": np.zeros((k, c_in, c_out)), "b": np.zeros(c_out)}

    def init(self, rng):
        self.params["W"] = glorot(rng, self.k * self.c_in, self.k * self.c_out, (self.k, self.c_in, self.c_out))
        self.params["b"] = np.zeros(self.c_out)

    def output_shape(self, shape):
        T, C = shape
        if C != self.c_in:
            raise ShapeMismatch(f"conv1d expects {self.c_in} channels, got {C}")
        if T < self.k:
            raise KernelTooLarge(f"kernel {self.k} longer than sequence {T}")
        return (T - self.k + 1, self.c_out)

    def forward(self, x, training=False, rng=None):
        B, T, C = x.shape
        Tp = self.output_shape((T, C))[0]
        self.x = x
        W = self.params["W"]
        z = np.broadcast_to(self.params["b"], (B, Tp, self.c_out)).copy()
        for j in range(self.k):
            z += x[:, j : j + Tp] @ W[j]
        self.z = z
        self.y = _act(self.activation, z, self.slope)
        return self.y

    def backward(self, dout):
        dz = dout * _act_grad(self.activation, self.z, self.y, self.slope)
        x, W = self.x, self.params["W"]
        B, T, C = x.shape
        Tp = T - self.k + 1
        xf = np.ascontiguousarray(x).reshape(-1, C)
        dW = np.empty_like(W)
        shifted = np.zeros((B, T, self.c_out))
        for j in range(self.k):
            shifted[:, j : j + Tp] = dz
            if j:
                shifted[:, j - 1] = 0.0
            dW[j] = xf.T @ shifted.reshape(-1, self.c_out)
        self.grads = {"W": dW, "b": dz.sum(axis=(0, 1))}
        if not self.input_grad:
            return None
        dx = np.zeros_like(x)
        for j in range(self.k):
            dx[:, j : j + Tp] += dz @ W[j].T
        return dx

    def config(self):
        return {"filters": self.c_out, "kernel": self.k, "activation": self.activation}


class Conv2D(Layer):
    """Valid 2-D cross-correlation: (batch, H, W, C_in) -> (batch, H-kh+1, W-kw+1, C_out)."""

    kind = "conv2d"

    def __init__(self, kh: int, kw: int, c_in: int, c_out: int, activation: str = "identity",
                 slope: float = LEAKY_SLOPE):
        super().__init__()
        self.kh, self.kw, self.c_in, self.c_out = kh, kw, c_in, c_out
        self.activation, self.slope = activation, slope
        self.params = {"W": np.zeros((kh, kw, c_in, c_out)), "b": np.zeros(c_out)}

    def init(self, rng):
        fan = self.kh * self.kw
        self.params["W"] = glorot(rng, fan * self.c_in, fan * self.c_out, self.params["W"].shape)
        self.params["b"] = np.zeros(self.c_out)

    def output_shape(self, shape):
        H, W, C = shape
        if C != self.c_in:
            raise ShapeMismatch(f"conv2d expects {self.c_in} channels, got {C}")
        if H < self.kh or W < self.kw:
            raise KernelTooLarge(f"kernel {(self.kh, self.kw)} larger than input {(H, W)}")
        return (H - self.kh + 1, W - self.kw + 1, self.c_out)

    def forward(self, x, training=False, rng=None):
        B, H, W, C = x.shape
        Hp, Wp, _ = self.output_shape((H, W, C))
        cols = sliding_window_view(x, (self.kh, self.kw), axis=(1, 2)).transpose(0, 1, 2, 4, 5, 3)
        self.cols = cols.reshape(B, Hp, Wp, -1)
        self.x_shape = x.shape
        self.z = self.cols @ self.params["W"].reshape(-1, self.c_out) + self.params["b"]
        self.y = _act(self.activation, self.z, self.slope)
        return self.y

    def backward(self, dout):
        dz = dout * _act_grad(self.activation, self.z, self.y, self.slope)
        B, H, W, C = self.x_shape
        Hp, Wp = H - self.kh + 1, W - self.kw + 1
        W2 = self.params["W"].reshape(-1, self.c_out)
        dW = self.cols.reshape(-1, W2.shape[0]).T @ dz.reshape(-1, self.c_out)
        self.grads = {"W": dW.reshape(self.params["W"].shape), "b": dz.sum(axis=(0, 1, 2))}
        dcols = (dz @ W2.T).reshape(B, Hp, Wp, self.kh, self.kw, C)
        dx = np.zeros(self.x_shape)
        for i in range(self.kh):
            for j in range(self.kw):
                dx[:, i : i + Hp, j : j + Wp] += dcols[:, :, :, i, j]
        return dx

    def config(self):
        return {"filters": self.c_out, "kernel": f"{self.kh}x{self.kw}", "activation": self.activation}


class MaxPool1D(Layer):
    """Non-overlapping max over time with stride = size; the remainder is dropped."""

    kind = "maxpool1d"

    def __init__(self, size: int = 2):
        super().__init__()
        self.size = size

    def output_shape(self, shape):
        T, C = shape
        if T < self.size:
            raise KernelTooLarge(f"pool {self.size} longer than sequence {T}")
        return (T // self.size, C)

    def forward(self, x, training=False, rng=None):
        B, T, C = x.shape
        n = T // self.size
        self.x_shape = x.shape
        win = x[:, : n * self.size].reshape(B, n, self.size, C)
        self.win = win
        self.arg = win.argmax(axis=2)  # first index on ties
        return np.take_along_axis(win, self.arg[:, :, None, :], axis=2)[:, :, 0, :]

    def backward(self, dout):
        B, T, C = self.x_shape
        n = T // self.size
        dwin = np.zeros((B, n, self.size, C))
        np.put_along_axis(dwin, self.arg[:, :, None, :], dout[:, :, None, :], axis=2)
        dx = np.zeros(self.x_shape)
        dx[:, : n * self.size] = dwin.reshape(B, n * self.size, C)
        return dx

    def config(self):
        return {"size": self.size}


class Softmax(Layer):
    """Row-wise softmax over the last axis."""

    kind = "softmax"

    def forward(self, x, training=False, rng=None):
        self.y = softmax(x, axis=-1)
        return self.y

    def backward(self, dout):
        y = self.y
        return y * (dout - np.sum(dout * y, axis=-1, keepdims=True))


class Dropout(Layer):
    """Inverted dropout; identity outside training."""

    kind = "dropout"

    def __init__(self, p: float):
        super().__init__()
        if not 0 <= p < 1:
            raise ValueError("dropout p must lie in [0, 1)")
        self.p = p

    def forward(self, x, training=False, rng=None):
        if not training or self.p == 0:
            self.mask = None
            return x
        self.mask = (rng.random(x.shape) >= self.p) / (1.0 - self.p)
        return x * self.mask

    def backward(self, dout):
        return dout if self.mask is None else dout * self.mask

    def config(self):
        return {"p": self.p}


def dropout(x, p, training, rng):
    return Dropout(p).forward(np.asarray(x, dtype=np.float64), training, rng)


class LSTM(Layer):
    """Gated recurrence over (batch, T, C) with input, forget and output gates.

    ``c_t = f * c_{t-1} + i * g(z_g)`` and ``h_t = o * h(c_t)``. Dropout masks on
    the input and on the recurrent state are drawn once per sequence and reused
    at every step.
    """

    kind = "lstm"

    def __init__(self, c_in: int, units: int, cell_activation: str = "tanh", hidden_activation: str = "tanh",
                 return_sequences: bool = False, dropout: float = 0.0, recurrent_dropout: float = 0.0):
        super().__init__()
        self.c_in, self.units = c_in, units
        self.g, self.h = cell_activation, hidden_activation
        self.return_sequences = return_sequences
        self.dropout, self.recurrent_dropout = dropout, recurrent_dropout
        H = units
        self.params = {"Wx": np.zeros((c_in, 4 * H)), "Wh": np.zeros((H, 4 * H)), "b": np.zeros(4 * H)}

    def init(self, rng):
        H = self.units
        self.params["Wx"] = glorot(rng, self.c_in, 4 * H, (self.c_in, 4 * H))
        self.params["Wh"] = glorot(rng, H, 4 * H, (H, 4 * H))
        b = np.zeros(4 * H)
        b[H : 2 * H] = 1.0  # forget gate
        self.params["b"] = b

    def output_shape(self, shape):
        T, C = shape
        if C != self.c_in:
            raise ShapeMismatch(f"lstm expects {self.c_in} channels, got {C}")
        if T < 1:
            raise ShapeMismatch("lstm needs at least one time step")
        return (T, self.units) if self.return_sequences else (self.units,)

    def _mask(self, shape, p, training, rng):
        if not training or p == 0:
            return None
        return (rng.random(shape) >= p) / (1.0 - p)

    def forward(self, x, training=False, rng=None):
        B, T, C = x.shape
        self.output_shape((T, C))
        H = self.units
        Wx, Wh, b = self.params["Wx"], self.params["Wh"], self.params["b"]
        self.mx = self._mask((B, C), self.dropout, training, rng)
        self.mh = self._mask((B, H), self.recurrent_dropout, training, rng)
        xin = x if self.mx is None else x * self.mx[:, None, :]
        self.xin = xin
        zx = xin @ Wx + b
        hs = np.zeros((B, T + 1, H))
        cs = np.zeros((B, T + 1, H))
        gates = np.zeros((B, T, 4 * H))
        zg = np.zeros((B, T, H))
        for t in range(T):
            hprev = hs[:, t] if self.mh is None else hs[:, t] * self.mh
            z = zx[:, t] + hprev @ Wh
            a = sigmoid(z[:, : 3 * H])
            zg[:, t] = z[:, 3 * H :]
            gg = _act(self.g, zg[:, t])
            gates[:, t, : 3 * H] = a
            gates[:, t, 3 * H :] = gg
            i, f = a[:, :H], a[:, H : 2 * H]
            cs[:, t + 1] = f * cs[:, t] + i * gg
            hs[:, t + 1] = a[:, 2 * H : 3 * H] * _act(self.h, cs[:, t + 1])
        self.hs, self.cs, self.gates, self.zg = hs, cs, gates, zg
        self.x_shape = x.shape
        return hs[:, 1:].copy() if self.return_sequences else hs[:, T].copy()

    def backward(self, dout):
        B, T, C = self.x_shape
        H = self.units
        Wx, Wh = self.params["Wx"], self.params["Wh"]
        if self.return_sequences:
            dh_ext = dout
        else:
            dh_ext = np.zeros((B, T, H))
            dh_ext[:, -1] = dout
        dz = np.zeros((B, T, 4 * H))
        dWh = np.zeros_like(Wh)
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            a = self.gates[:, t]
            i, f, o, gg = a[:, :H], a[:, H : 2 * H], a[:, 2 * H : 3 * H], a[:, 3 * H :]
            c = self.cs[:, t + 1]
            hc = _act(self.h, c)
            dh = dh_ext[:, t] + dh_next
            dc = dc_next + dh * o * _act_grad(self.h, c, hc)
            dzt = dz[:, t]
            dzt[:, :H] = dc * gg * i * (1 - i)
            dzt[:, H : 2 * H] = dc * self.cs[:, t] * f * (1 - f)
            dzt[:, 2 * H : 3 * H] = dh * hc * o * (1 - o)
            dzt[:, 3 * H :] = dc * i * _act_grad(self.g, self.zg[:, t], gg)
            dc_next = dc * f
            hprev = self.hs[:, t] if self.mh is None else self.hs[:, t] * self.mh
            dWh += hprev.T @ dzt
            dhprev = dzt @ Wh.T
            dh_next = dhprev if self.mh is None else dhprev * self.mh
        self.grads = {
            "Wx": self.xin.reshape(-1, C).T @ dz.reshape(-1, 4 * H),
            "Wh": dWh,
            "b": dz.sum(axis=(0, 1)),
        }
        dx = dz @ Wx.T
        return dx if self.mx is None else dx * self.mx[:, None, :]

    def config(self):
        return {"units": self.units, "cell_activation": self.g, "hidden_activation": self.h,
                "return_sequences": self.return_sequences, "dropout": self.dropout,
                "recurrent_dropout": self.recurrent_dropout}


class FeatureAttention(Layer):
    """One softmax weight per feature, shared by every time step.

    ``s_f = tanh(sum_t w_t X[t, f] + b_f)``, ``alpha = softmax(s)`` and the
    output is ``X * alpha`` broadcast over rows.
    """

    kind = "attention"

    def __init__(self, T: int, F: int):
        super().__init__()
        self.T, self.F = T, F
        self.params = {"w": np.zeros(T), "b": np.zeros(F)}

    def init(self, rng):
        self.params["w"] = glorot(rng, self.T, 1, (self.T,))
        self.params["b"] = np.zeros(self.F)

    def output_shape(self, shape):
        if tuple(shape) != (self.T, self.F):
            raise ShapeMismatch(f"attention expects {(self.T, self.F)}, got {tuple(shape)}")
        return shape

    def weights(self, x):
        s = np.tanh(np.einsum("btf,t->bf", x, self.params["w"]) + self.params["b"])
        return s, softmax(s, axis=1)

    def forward(self, x, training=False, rng=None):
        self.output_shape(x.shape[1:])
        self.x = x
        self.s, self.alpha = self.weights(x)
        return x * self.alpha[:, None, :]

    def backward(self, dout):
        x, alpha = self.x, self.alpha
        dalpha = np.einsum("btf,btf->bf", dout, x)
        ds = alpha * (dalpha - np.sum(dalpha * alpha, axis=1, keepdims=True))
        du = ds * (1 - self.s**2)
        self.grads = {"w": np.einsum("bf,btf->t", du, x), "b": du.sum(axis=0)}
        if not self.input_grad:
            return None
        return dout * alpha[:, None, :] + du[:, None, :] * self.params["w"][None, :, None]

    def config(self):
        return {"steps": self.T, "features": self.F}


def feature_attention(X, w, b):
    """Weighted input and the per-feature weights for a single (T, F) matrix."""
    layer = FeatureAttention(*np.shape(X))
    layer.params = {"w": np.asarray(w, dtype=np.float64), "b": np.asarray(b, dtype=np.float64)}
    out = layer.forward(np.asarray(X, dtype=np.float64)[None])
    return out[0], layer.alpha[0]


LAYER_TYPES = {cls.kind: cls for cls in (Activation, Dense, Flatten, Reshape, Conv1D, Conv2D, MaxPool1D,
                                         Softmax, Dropout, LSTM, FeatureAttention)}

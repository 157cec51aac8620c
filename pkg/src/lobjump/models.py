"""The five jump-prediction architectures, training, prediction and attention export."""
from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .dataset import Dataset
from .features import GROUPS, N_SLOTS, SLOT_NAMES
from .nn import (LSTM, Conv1D, Conv2D, Dense, FeatureAttention, Flatten, MaxPool1D, Network, Reshape,
                 ShapeMismatch, Softmax, bce_loss, categorical_ce)
from .nn.optim import Adam

ARCHITECTURES = ("MLP", "CNN", "LSTM", "CNN_LSTM_A", "CNN_LSTM_V10")
V1_COLUMNS = tuple(range(GROUPS["v1"].start, GROUPS["v1"].stop))
V10_COLUMNS = (GROUPS["v10"].start,)


class ModelError(Exception):
    pass


class DivergenceDetected(ModelError):
    pass


class UnsupportedArchitecture(ModelError):
    pass


@dataclass
class Hyper:
    hidden: int = 40  # dense width after flatten / LSTM
    lstm_units: int = 40
    conv_filters: int = 32
    conv_kernel: int = 5
    pool: int = 2
    dropout: float = 0.5
    slope: float = 0.01
    # CNN stack
    cnn_conv2d_filters: int = 16
    cnn_conv2d_height: int = 4
    cnn_conv1d_filters: int = 16
    cnn_conv1d_kernel: int = 4
    cnn_late_filters: int = 32
    cnn_late_kernel: int = 3
    cnn_dense: int = 32


@dataclass
class ModelSpec:
    architecture: str
    steps: int = 120
    features: int = N_SLOTS
    output: str = "binary"  # binary | three_class
    columns: tuple[int, ...] | None = None  # dataset columns fed to the model; None = all
    hyper: Hyper = field(default_factory=Hyper)

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise UnsupportedArchitecture(self.architecture)
        if self.output not in ("binary", "three_class"):
            raise ValueError(f"unknown output mode {self.output!r}")
        if self.columns is not None and len(self.columns) != self.features:
            raise ShapeMismatch(f"{len(self.columns)} columns for {self.features} features")

    @property
    def n_outputs(self) -> int:
        return 1 if self.output == "binary" else 3


def build_mlp(F: int = N_SLOTS, T: int = 120, hyper: Hyper | None = None) -> ModelSpec:
    return ModelSpec("MLP", T, F, hyper=hyper or Hyper())


def build_cnn(T: int = 120, F: int = len(V1_COLUMNS), hyper: Hyper | None = None) -> ModelSpec:
    cols = V1_COLUMNS if F == len(V1_COLUMNS) else None
    return ModelSpec("CNN", T, F, columns=cols, hyper=hyper or Hyper())


def build_lstm(F: int = N_SLOTS, T: int = 120, hyper: Hyper | None = None) -> ModelSpec:
    return ModelSpec("LSTM", T, F, hyper=hyper or Hyper())


def build_cnn_lstm_attention(F: int = N_SLOTS, T: int = 120, hyper: Hyper | None = None) -> ModelSpec:
    return ModelSpec("CNN_LSTM_A", T, F, hyper=hyper or Hyper())


def build_v10_baseline(T: int = 120, hyper: Hyper | None = None) -> ModelSpec:
    return ModelSpec("CNN_LSTM_V10", T, 1, columns=V10_COLUMNS, hyper=hyper or Hyper())


BUILDERS = {
    "MLP": build_mlp,
    "CNN": build_cnn,
    "LSTM": build_lstm,
    "CNN_LSTM_A": build_cnn_lstm_attention,
}


def make_spec(architecture: str, T: int = 120, F: int | None = None, hyper: Hyper | None = None) -> ModelSpec:
    if architecture == "CNN_LSTM_V10":
        return build_v10_baseline(T, hyper)
    if architecture == "CNN":
        return build_cnn(T, F or len(V1_COLUMNS), hyper)
    if architecture not in BUILDERS:
        raise UnsupportedArchitecture(architecture)
    return BUILDERS[architecture](F or N_SLOTS, T, hyper)


def three_class_variant(spec: ModelSpec) -> ModelSpec:
    return replace(spec, output="three_class")


def _head(n_in: int, spec: ModelSpec) -> list:
    if spec.output == "binary":
        return [Dense(n_in, 1, "sigmoid")]
    return [Dense(n_in, 3), Softmax()]


def build_network(spec: ModelSpec, seed: int = 0) -> Network:
    h, T, F = spec.hyper, spec.steps, spec.features
    leaky = dict(activation="leaky_relu", slope=h.slope)
    arch = spec.architecture
    if arch == "MLP":
        layers = [Flatten(), Dense(T * F, h.hidden, **leaky), Dense(h.hidden, h.hidden, **leaky)]
        width = h.hidden
    elif arch == "CNN":
        t1 = T - h.cnn_conv2d_height + 1
        t2 = (t1 - h.cnn_conv1d_kernel + 1) // h.pool
        t3 = (t2 - 2 * (h.cnn_late_kernel - 1)) // h.pool
        layers = [
            Reshape((T, F, 1)),
            Conv2D(h.cnn_conv2d_height, F, 1, h.cnn_conv2d_filters, **leaky),
            Reshape((t1, h.cnn_conv2d_filters)),
            Conv1D(h.cnn_conv1d_kernel, h.cnn_conv2d_filters, h.cnn_conv1d_filters, **leaky),
            MaxPool1D(h.pool),
            Conv1D(h.cnn_late_kernel, h.cnn_conv1d_filters, h.cnn_late_filters, **leaky),
            Conv1D(h.cnn_late_kernel, h.cnn_late_filters, h.cnn_late_filters, **leaky),
            MaxPool1D(h.pool),
            Flatten(),
            Dense(t3 * h.cnn_late_filters, h.cnn_dense, **leaky),
        ]
        width = h.cnn_dense
    elif arch == "LSTM":
        layers = [LSTM(F, h.lstm_units), Dense(h.lstm_units, h.hidden, **leaky)]
        width = h.hidden
    else:  # CNN_LSTM_A and CNN_LSTM_V10 share the stack
        layers = [
            FeatureAttention(T, F),
            Conv1D(h.conv_kernel, F, h.conv_filters, **leaky),
            MaxPool1D(h.pool),
            LSTM(h.conv_filters, h.lstm_units, hidden_activation="relu", dropout=h.dropout,
                 recurrent_dropout=h.dropout),
            Dense(h.lstm_units, h.hidden, **leaky),
        ]
        width = h.hidden
    return Network(layers + _head(width, spec), (T, F), seed=seed, name=arch)


def select_columns(X: np.ndarray, spec: ModelSpec) -> np.ndarray:
    if spec.columns is not None:
        X = X[..., list(spec.columns)]
    if X.shape[1:] != (spec.steps, spec.features):
        raise ShapeMismatch(f"{spec.architecture} expects ({spec.steps}, {spec.features}), got {X.shape[1:]}")
    return X


# -- spec files ----------------------------------------------------------------------

def write_spec(path, spec: ModelSpec, net: Network | None = None) -> None:
    cp = configparser.ConfigParser()
    cp["model"] = {
        "architecture": spec.architecture,
        "steps": str(spec.steps),
        "features": str(spec.features),
        "output": spec.output,
        "columns": "all" if spec.columns is None else ",".join(map(str, spec.columns)),
    }
    cp["hyper"] = {k: str(v) for k, v in asdict(spec.hyper).items()}
    net = net or build_network(spec)
    for k, (layer, shape) in enumerate(zip(net.describe(), net.shapes[1:])):
        cp[f"layer.{k}"] = {**{a: str(b) for a, b in layer.items()}, "output_shape": "x".join(map(str, shape))}
    with open(path, "w") as fh:
        cp.write(fh)


def read_spec(path) -> ModelSpec:
    cp = configparser.ConfigParser()
    cp.read(path)
    m = cp["model"]
    types = {f.name: f.type for f in fields(Hyper)}
    hyper = Hyper(**{k: (float if types[k] in ("float", float) else int)(v) for k, v in cp["hyper"].items()})
    cols = None if m["columns"] == "all" else tuple(int(c) for c in m["columns"].split(","))
    return ModelSpec(m["architecture"], int(m["steps"]), int(m["features"]), m["output"], cols, hyper)


# -- training ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    seed: int = 0
    patience: int = 10
    curriculum: bool = True
    rolling_window_days: int = 50
    learning_rate: float = 1e-3
    class_weight: str = "balanced"  # balanced | none

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size <= 0 or self.patience <= 0 or self.learning_rate <= 0:
            raise ValueError("training settings must be positive")


@dataclass
class TrainResult:
    net: Network
    history: list[dict]
    best_epoch: int


def targets(ds: Dataset, spec: ModelSpec) -> np.ndarray:
    if spec.output == "binary":
        return (ds.y > 0).astype(np.float64)
    if ds.n_classes == 3:
        return ds.y.astype(np.int64)
    return np.select([ds.meta["direction"] > 0, ds.meta["direction"] < 0], [1, 2], 0)


def class_weights(y: np.ndarray, n_classes: int, mode: str) -> np.ndarray:
    y = y.astype(np.int64)
    if mode == "none":
        return np.ones(len(y))
    counts = np.bincount(y, minlength=n_classes).astype(np.float64)
    present = counts > 0
    per_class = np.zeros(n_classes)
    per_class[present] = len(y) / (present.sum() * counts[present])
    return per_class[y]


def newest_days(ds: Dataset, n_days: int) -> np.ndarray:
    days = np.unique(ds.meta["day"])
    keep = days[-n_days:]
    return np.flatnonzero(np.isin(ds.meta["day"], keep))


def _loss_fn(spec: ModelSpec):
    return bce_loss if spec.output == "binary" else categorical_ce


def _batch_loss(net, spec, X, y, w, batch_size=256) -> float:
    if len(y) == 0:
        return float("nan")
    loss_fn = _loss_fn(spec)
    total = 0.0
    for a in range(0, len(y), batch_size):
        p = net.forward(select_columns(X[a : a + batch_size], spec))
        out = p[:, 0] if spec.output == "binary" else p
        total += loss_fn(y[a : a + batch_size], out, w[a : a + batch_size])[0] * w[a : a + batch_size].sum()
    return total / w.sum()


def train(spec: ModelSpec, train_set: Dataset, val_set: Dataset | None, cfg: TrainConfig = TrainConfig(),
          init: Network | None = None, log=None) -> TrainResult:
    """Mini-batch Adam with early stopping on validation loss; returns the best snapshot."""
    net = init if init is not None else build_network(spec, cfg.seed)
    if cfg.curriculum and len(train_set):
        train_set = train_set.subset(newest_days(train_set, cfg.rolling_window_days))
    n_out = 2 if spec.output == "binary" else 3
    y = targets(train_set, spec)
    w = class_weights(y, n_out, cfg.class_weight)
    has_val = val_set is not None and len(val_set) > 0
    if has_val:
        yv = targets(val_set, spec)
        wv = class_weights(yv, n_out, cfg.class_weight)
    loss_fn = _loss_fn(spec)
    opt = Adam(lr=cfg.learning_rate)
    net.reseed(cfg.seed)
    best = (np.inf, net.get_weights(), 0)
    history = []
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        order = np.random.default_rng([cfg.seed, 3, epoch]).permutation(len(y))
        total, weight = 0.0, 0.0
        for a in range(0, len(order), cfg.batch_size):
            idx = np.sort(order[a : a + cfg.batch_size])
            xb = select_columns(train_set.X[idx], spec)
            p = net.forward(xb, training=True)
            out = p[:, 0] if spec.output == "binary" else p
            loss, grad = loss_fn(y[idx], out, w[idx])
            if not np.isfinite(loss):
                raise DivergenceDetected(f"non-finite loss at epoch {epoch}")
            net.backward((grad[:, None] if spec.output == "binary" else grad))
            opt.step(net.named_params(), net.named_grads())
            total += loss * w[idx].sum()
            weight += w[idx].sum()
        train_loss = total / max(weight, 1e-300)
        val_loss = _batch_loss(net, spec, val_set.X, yv, wv) if has_val else train_loss
        if not np.isfinite(val_loss):
            raise DivergenceDetected(f"non-finite validation loss at epoch {epoch}")
        history.append({"epoch": epoch, "train_loss": float(train_loss), "val_loss": float(val_loss)})
        if log:
            log(f"epoch {epoch:3d} train {train_loss:.5f} val {val_loss:.5f}")
        if val_loss < best[0]:
            best = (val_loss, net.get_weights(), epoch)
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    net.set_weights(best[1])
    return TrainResult(net, history, best[2])


# -- inference -----------------------------------------------------------------------------

def predict(net: Network, spec: ModelSpec, X: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Jump probabilities (binary) or class probabilities (three-class); dropout is off."""
    X = np.asarray(X)
    if X.ndim == 2:
        X = X[None]
    outs = [net.forward(select_columns(X[a : a + batch_size], spec)) for a in range(0, len(X), batch_size)]
    out = np.concatenate(outs) if outs else np.zeros((0, spec.n_outputs))
    return out[:, 0] if spec.output == "binary" else out


def classify(prob) -> np.ndarray:
    p = np.asarray(prob, dtype=np.float64)
    if p.ndim == 2:
        return p.argmax(axis=1)
    return (p >= 0.5).astype(np.int64)


def attention_weights(net: Network, spec: ModelSpec, X: np.ndarray) -> np.ndarray:
    """Per-sample feature weights from the attention layer, shape (n, F)."""
    layer = net.layers[0]
    if not isinstance(layer, FeatureAttention):
        raise UnsupportedArchitecture(f"{spec.architecture} has no attention layer")
    X = np.asarray(X)
    if X.ndim == 2:
        X = X[None]
    return layer.weights(select_columns(X, spec).astype(np.float64))[1]


@dataclass
class AttentionReport:
    names: list[str]
    weights: np.ndarray

    def top(self, k: int = 10) -> list[tuple[str, float]]:
        order = np.argsort(-self.weights, kind="stable")[:k]
        return [(self.names[i], float(self.weights[i])) for i in order]


def export_attention(net: Network, spec: ModelSpec, X: np.ndarray) -> AttentionReport:
    """Attention distribution of one sample, or the mean over a batch, with slot names."""
    alpha = attention_weights(net, spec, X).mean(axis=0)
    names = [SLOT_NAMES[c] for c in spec.columns] if spec.columns is not None else list(SLOT_NAMES[: spec.features])
    return AttentionReport(names, alpha)

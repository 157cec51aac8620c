"""Sequential networks and the binary weight checkpoint."""
from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .layers import Layer, NonFinite, ShapeMismatch

CHECKPOINT_MAGIC = b"LJNN"
CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    pass


class Network:
    """A stack of layers applied in order to batch-first input."""

    def __init__(self, layers: list[Layer], input_shape: tuple[int, ...], seed: int = 0, name: str = "net"):
        self.layers = layers
        self.input_shape = tuple(input_shape)
        self.name = name
        self.shapes = self._shape_chain()
        self.init(seed)

    def _shape_chain(self) -> list[tuple[int, ...]]:
        shapes = [self.input_shape]
        for layer in self.layers:
            shapes.append(tuple(layer.output_shape(shapes[-1])))
        return shapes

    @property
    def output_shape(self):
        return self.shapes[-1]

    def init(self, seed: int) -> None:
        rng = np.random.default_rng([seed, 1])
        for layer in self.layers:
            layer.init(rng)
        self.reseed(seed)

    def reseed(self, seed: int) -> None:
        """Restart the dropout stream."""
        self.dropout_rng = np.random.default_rng([seed, 2])

    def forward(self, x, training: bool = False, check_shapes: bool = False) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.input_shape:
            raise ShapeMismatch(f"{self.name} expects input {self.input_shape}, got {x.shape[1:]}")
        for k, layer in enumerate(self.layers):
            x = layer.forward(x, training, self.dropout_rng)
            if check_shapes and x.shape[1:] != self.shapes[k + 1]:
                raise ShapeMismatch(f"layer {k} ({layer.kind}) produced {x.shape[1:]}, declared {self.shapes[k + 1]}")
        if not np.all(np.isfinite(x)):
            raise NonFinite(f"{self.name} produced non-finite output")
        return x

    def backward(self, dout, input_grad: bool = False) -> np.ndarray | None:
        """Fill every layer's ``grads``; the input gradient is returned only on request."""
        for layer in self.layers:
            layer.input_grad = True
        if not input_grad:
            self.layers[0].input_grad = False
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def named_params(self) -> dict[str, np.ndarray]:
        return {f"{k}.{name}": p for k, layer in enumerate(self.layers) for name, p in layer.params.items()}

    def named_grads(self) -> dict[str, np.ndarray]:
        return {f"{k}.{name}": g for k, layer in enumerate(self.layers) for name, g in layer.grads.items()}

    def param_count(self) -> int:
        return int(sum(p.size for p in self.named_params().values()))

    def get_weights(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.named_params().items()}

    def set_weights(self, weights: dict[str, np.ndarray]) -> None:
        for k, layer in enumerate(self.layers):
            for name in layer.params:
                w = weights[f"{k}.{name}"]
                if w.shape != layer.params[name].shape:
                    raise ShapeMismatch(f"weight {k}.{name}: {w.shape} vs {layer.params[name].shape}")
                layer.params[name] = np.array(w, dtype=np.float64)

    def describe(self) -> list[dict]:
        return [{"kind": layer.kind, **layer.config()} for layer in self.layers]

    def architecture_hash(self) -> bytes:
        doc = {"input": self.input_shape, "layers": self.describe(),
               "params": {k: list(v.shape) for k, v in self.named_params().items()}}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).digest()


def save_checkpoint(path, net: Network) -> None:
    """magic, u32 version, 32-byte architecture hash, u32 tensor count, then per tensor:
    u16 name length, name, u8 ndim, u32 dims, float64 data."""
    params = net.named_params()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(net.architecture_hash())
        fh.write(struct.pack("<I", len(params)))
        for name, p in params.items():
            raw = name.encode()
            fh.write(struct.pack("<H", len(raw)) + raw)
            fh.write(struct.pack("<B", p.ndim) + struct.pack(f"<{p.ndim}I", *p.shape))
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def read_checkpoint(path) -> tuple[bytes, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    arch = buf[8:40]
    (n,) = struct.unpack_from("<I", buf, 40)
    pos = 44
    out = {}
    for _ in range(n):
        (ln,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos : pos + ln].decode()
        pos += ln
        (nd,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        shape = struct.unpack_from(f"<{nd}I", buf, pos)
        pos += 4 * nd
        size = int(np.prod(shape)) if nd else 1
        out[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(shape).copy()
        pos += 8 * size
    return arch, out


def load_checkpoint(path, net: Network) -> Network:
    arch, weights = read_checkpoint(path)
    if arch != net.architecture_hash():
        raise CheckpointError("checkpoint was written for a different architecture")
    net.set_weights(weights)
    return net

"""Dense MLPs with hand-written backprop, Adam, and a binary checkpoint container.

Weights are stored (out, in) and inputs are row batches, so a layer computes
``act(x @ W.T + b)``. Everything is float64.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import CheckpointError, CheckpointVersionError

ACTIVATIONS = ("identity", "relu", "tanh")


def _activate(kind, z):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    return z


def _activation_grad(kind, z, a, upstream):
    if kind == "relu":
        return upstream * (z > 0)
    if kind == "tanh":
        return upstream * (1.0 - a * a)
    return upstream


@dataclass
class Dense:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ValueError(f"bad layer shapes W{self.weight.shape} b{self.bias.shape}")


class DenseNet:
    """Feed-forward stack of :class:`Dense` layers."""

    def __init__(self, layers):
        self.layers = list(layers)
        if not self.layers:
            raise ValueError("a network needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.weight.shape[0] != nxt.weight.shape[1]:
                raise ValueError(
                    f"layer dims do not chain: {prev.weight.shape} -> {nxt.weight.shape}"
                )

    @property
    def input_dim(self):
        return self.layers[0].weight.shape[1]

    @property
    def output_dim(self):
        return self.layers[-1].weight.shape[0]

    @property
    def sizes(self):
        return [self.input_dim] + [layer.weight.shape[0] for layer in self.layers]

    def params(self):
        """Parameter arrays in order W1, b1, W2, b2, ... (live references)."""
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def copy(self):
        return DenseNet(
            [Dense(layer.weight.copy(), layer.bias.copy(), layer.activation) for layer in self.layers]
        )

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.input_dim:
            raise ValueError(f"input has {x.shape[-1]} features, network expects {self.input_dim}")
        return x

    def forward(self, x):
        x = self._check(x)
        for layer in self.layers:
            x = _activate(layer.activation, x @ layer.weight.T + layer.bias)
        return x

    __call__ = forward

    def forward_cache(self, x):
        """Forward pass keeping per-layer (input, pre-activation, output) for ``backward``."""
        x = self._check(x)
        single = x.ndim == 1
        h = np.atleast_2d(x)
        cache = []
        for layer in self.layers:
            z = h @ layer.weight.T + layer.bias
            a = _activate(layer.activation, z)
            cache.append((h, z, a))
            h = a
        return (h[0] if single else h), (single, cache)

    def backward(self, cache, upstream, param_grads=True, input_grad=True):
        """Reverse-mode gradients for loss L with dL/d(output) = ``upstream``.

        Returns (param_grads in ``params()`` order, dL/d(input)). Gradients are
        summed over the batch rows. Either part can be skipped (returned as
        None) when the caller does not need it.
        """
        single, layers_cache = cache
        g = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
        if g.shape != layers_cache[-1][2].shape:
            raise ValueError(f"upstream gradient shape {g.shape} != output {layers_cache[-1][2].shape}")
        grads = []
        last = len(self.layers) - 1
        for i, (layer, (h, z, a)) in enumerate(zip(reversed(self.layers), reversed(layers_cache))):
            dz = _activation_grad(layer.activation, z, a, g)
            if param_grads:
                grads.append(dz.sum(axis=0))
                grads.append(dz.T @ h)
            if i < last or input_grad:
                g = dz @ layer.weight
        grads.reverse()
        dx = (g[0] if single else g) if input_grad else None
        return (grads if param_grads else None), dx


def init_ddpg_style(sizes, rng, hidden_activation="relu", output_activation="identity", final_scale=3e-3):
    """MLP with hidden layers ~ U(+-1/sqrt(fan_in)) and output layer ~ U(+-final_scale)."""
    if len(sizes) < 2 or any(int(s) <= 0 for s in sizes):
        raise ValueError(f"invalid layer sizes {sizes}")
    layers = []
    n = len(sizes) - 1
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = i == n - 1
        bound = final_scale if last else 1.0 / np.sqrt(fan_in)
        weight = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        bias = rng.uniform(-bound, bound, size=fan_out)
        layers.append(Dense(weight, bias, output_activation if last else hidden_activation))
    return DenseNet(layers)


# --------------------------------------------------------------------------- Adam


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def like(cls, params, lr=1e-3, **kwargs):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], lr=lr, **kwargs)


def adam_step(params, grads, state):
    """One bias-corrected Adam update of ``params`` in place. Returns (params, state)."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state disagree in length")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}, state {m.shape}")
    state.t += 1
    c1 = 1.0 - state.beta1**state.t
    c2 = 1.0 - state.beta2**state.t
    step = state.lr / c1
    inv_sqrt_c2 = 1.0 / np.sqrt(c2)
    for p, g, m, v in zip(params, grads, state.m, state.v):
        # in place to avoid large temporaries; m += (1-b1)(g-m), v += (1-b2)(g^2-v)
        tmp = np.subtract(g, m)
        tmp *= 1.0 - state.beta1
        m += tmp
        np.multiply(g, g, out=tmp)
        tmp -= v
        tmp *= 1.0 - state.beta2
        v += tmp
        np.sqrt(v, out=tmp)
        tmp *= inv_sqrt_c2
        tmp += state.eps
        np.divide(m, tmp, out=tmp)
        tmp *= step
        p -= tmp
    return params, state


# --------------------------------------------------------------------------- serialization

NET_MAGIC = b"GINN"
NET_VERSION = 1
_ACT_CODE = {name: i for i, name in enumerate(ACTIVATIONS)}


def serialize_net(net):
    """Versioned little-endian binary: magic, version, layer count, then per layer
    (out, in, activation code, row-major float64 weights, bias)."""
    buf = io.BytesIO()
    buf.write(NET_MAGIC)
    buf.write(struct.pack("<HI", NET_VERSION, len(net.layers)))
    for layer in net.layers:
        out_dim, in_dim = layer.weight.shape
        buf.write(struct.pack("<IIB", out_dim, in_dim, _ACT_CODE[layer.activation]))
        buf.write(np.ascontiguousarray(layer.weight, dtype="<f8").tobytes())
        buf.write(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
    return buf.getvalue()


class _Stream:
    def __init__(self, data):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated stream")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return bytes(chunk)

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def deserialize_net(data):
    stream = _Stream(data)
    if stream.take(4) != NET_MAGIC:
        raise CheckpointVersionError("not a network stream (bad magic)")
    version, n_layers = stream.unpack("<HI")
    if version != NET_VERSION:
        raise CheckpointVersionError(f"network format version {version}, expected {NET_VERSION}")
    layers = []
    for _ in range(n_layers):
        out_dim, in_dim, code = stream.unpack("<IIB")
        if code >= len(ACTIVATIONS):
            raise CheckpointError(f"unknown activation code {code}")
        weight = np.frombuffer(stream.take(8 * out_dim * in_dim), dtype="<f8").reshape(out_dim, in_dim)
        bias = np.frombuffer(stream.take(8 * out_dim), dtype="<f8")
        layers.append(Dense(weight.astype(np.float64), bias.astype(np.float64), ACTIVATIONS[code]))
    if stream.pos != len(stream.data):
        raise CheckpointError("trailing bytes after network payload")
    return DenseNet(layers)


# Container: magic, version, entry count, then named entries of kind net/array/json.
CONTAINER_MAGIC = b"GICK"
CONTAINER_VERSION = 1
_KINDS = {"net": 0, "array": 1, "json": 2}


def _encode_array(arr):
    arr = np.ascontiguousarray(arr)
    dtype = arr.dtype.newbyteorder("<").str.encode()
    header = struct.pack("<B", len(dtype)) + dtype + struct.pack("<B", arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + arr.astype(arr.dtype.newbyteorder("<")).tobytes()


def _decode_array(payload):
    stream = _Stream(payload)
    (n,) = stream.unpack("<B")
    dtype = np.dtype(stream.take(n).decode())
    (ndim,) = stream.unpack("<B")
    shape = stream.unpack(f"<{ndim}Q") if ndim else ()
    count = int(np.prod(shape)) if ndim else 1
    arr = np.frombuffer(stream.take(dtype.itemsize * count), dtype=dtype).reshape(shape)
    return arr.astype(dtype.newbyteorder("="))


def dump_container(entries):
    """Serialize an ordered mapping name -> DenseNet | ndarray | JSON-able value."""
    buf = io.BytesIO()
    buf.write(CONTAINER_MAGIC)
    buf.write(struct.pack("<HI", CONTAINER_VERSION, len(entries)))
    for name, value in entries.items():
        if isinstance(value, DenseNet):
            kind, payload = "net", serialize_net(value)
        elif isinstance(value, np.ndarray):
            kind, payload = "array", _encode_array(value)
        else:
            kind, payload = "json", json.dumps(value, sort_keys=True).encode()
        key = name.encode()
        buf.write(struct.pack("<H", len(key)) + key)
        buf.write(struct.pack("<BQ", _KINDS[kind], len(payload)))
        buf.write(payload)
    return buf.getvalue()


def load_container(data):
    stream = _Stream(data)
    if stream.take(4) != CONTAINER_MAGIC:
        raise CheckpointVersionError("not a checkpoint container (bad magic)")
    version, count = stream.unpack("<HI")
    if version != CONTAINER_VERSION:
        raise CheckpointVersionError(f"container format version {version}, expected {CONTAINER_VERSION}")
    entries = {}
    for _ in range(count):
        (n,) = stream.unpack("<H")
        name = stream.take(n).decode()
        kind, length = stream.unpack("<BQ")
        payload = stream.take(length)
        if kind == _KINDS["net"]:
            entries[name] = deserialize_net(payload)
        elif kind == _KINDS["array"]:
            entries[name] = _decode_array(payload)
        elif kind == _KINDS["json"]:
            entries[name] = json.loads(payload)
        else:
            raise CheckpointError(f"unknown entry kind {kind} for {name!r}")
    if stream.pos != len(stream.data):
        raise CheckpointError("trailing bytes after container")
    return entries

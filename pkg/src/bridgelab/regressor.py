"""Time-conditioned MLP with explicit forward/backward passes.

The same network type serves as the bridge regressor ``eps(x_t, t)`` and, with
``time_embed_dim == 0``, as the mean network ``M(x_1)``. Vectors may be single
``(d,)`` inputs or ``(n, d)`` batches; gradients of a batch are summed over
rows by the matrix products, which fixes the reduction order.

Checkpoint layout (all integers little-endian)::

    b"BRLB"                       magic, 4 bytes
    u32 version                   currently 1
    u32 n                         number of entries in layer_dims
    u32 * n layer_dims            first entry includes the time features
    u32 time_embed_dim
    u8  activation                0 = silu, 1 = tanh
    per layer, in order:
        f64 * (fan_in * fan_out)  weight matrix, row-major, shape (fan_in, fan_out)
        f64 * fan_out             bias
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import DimensionError, DivergenceError, FormatError

ACTIVATIONS = ("silu", "tanh")
CHECKPOINT_MAGIC = b"BRLB"
CHECKPOINT_VERSION = 1


@dataclass
class RegressorParams:
    layer_dims: tuple[int, ...]
    time_embed_dim: int
    activation: str
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        self.layer_dims = tuple(int(n) for n in self.layer_dims)
        if len(self.layer_dims) < 2 or min(self.layer_dims) < 1:
            raise DimensionError(f"bad layer_dims {self.layer_dims}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.time_embed_dim < 0 or self.time_embed_dim % 2:
            raise ValueError("time_embed_dim must be a non-negative even number")
        if self.layer_dims[0] <= self.time_embed_dim:
            raise DimensionError("first layer must be wider than the time embedding")
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise DimensionError("number of weight/bias blocks does not match layer_dims")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            want = (self.layer_dims[i], self.layer_dims[i + 1])
            if w.shape != want or b.shape != (want[1],):
                raise DimensionError(f"layer {i}: got {w.shape}/{b.shape}, want {want}")
        if not all(np.all(np.isfinite(a)) for a in self.weights + self.biases):
            raise DivergenceError("non-finite parameters")

    @classmethod
    def initialize(cls, layer_dims, rng: np.random.Generator, time_embed_dim: int = 0,
                   activation: str = "silu") -> "RegressorParams":
        """Uniform init in +-sqrt(6 / (fan_in + fan_out)), zero biases."""
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(tuple(layer_dims), time_embed_dim, activation, weights, biases)

    @classmethod
    def zeros_like(cls, other: "RegressorParams") -> "RegressorParams":
        return cls(other.layer_dims, other.time_embed_dim, other.activation,
                   [np.zeros_like(w) for w in other.weights],
                   [np.zeros_like(b) for b in other.biases])

    @property
    def data_dim(self) -> int:
        return self.layer_dims[0] - self.time_embed_dim

    @property
    def out_dim(self) -> int:
        return self.layer_dims[-1]

    def arrays(self) -> list[np.ndarray]:
        return [a for pair in zip(self.weights, self.biases) for a in pair]

    def copy(self) -> "RegressorParams":
        return RegressorParams(self.layer_dims, self.time_embed_dim, self.activation,
                               [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def __call__(self, x, t=None) -> np.ndarray:
        return forward(self, x, t)[0]


@dataclass
class GradientBuffer:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        return [a for pair in zip(self.weights, self.biases) for a in pair]


@dataclass
class Tape:
    layer_dims: tuple[int, ...]
    inputs: list[np.ndarray] = field(default_factory=list)
    preacts: list[np.ndarray] = field(default_factory=list)
    squeeze: bool = False


def time_features(t, n_features: int) -> np.ndarray:
    """Sinusoidal features ``sin/cos(2^j pi t)`` for ``j < n_features / 2``."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    freqs = np.pi * 2.0 ** np.arange(n_features // 2)
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def _activate(name: str, a: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(a)
    return a * expit(a)


def _activate_grad(name: str, a: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return 1.0 - np.tanh(a) ** 2
    s = expit(a)
    return s * (1.0 + a * (1.0 - s))


def forward(params: RegressorParams, x, t=None):
    """Run the network; returns ``(output, tape)``.

    ``t`` must be given exactly when the network is time-conditioned. A scalar
    ``t`` is broadcast over a batch.
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.ndim != 2 or h.shape[1] != params.data_dim:
        raise DimensionError(f"input of shape {x.shape} does not match data_dim {params.data_dim}")
    if not np.all(np.isfinite(h)):
        raise DivergenceError("non-finite network input")
    if params.time_embed_dim:
        if t is None:
            raise ValueError("time-conditioned network needs t")
        tt = np.broadcast_to(np.asarray(t, dtype=np.float64), (h.shape[0],))
        h = np.concatenate([h, time_features(tt, params.time_embed_dim)], axis=1)
    elif t is not None:
        raise ValueError("network has no time input but t was given")

    tape = Tape(params.layer_dims, squeeze=squeeze)
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        tape.inputs.append(h)
        a = h @ w + b
        if i == last:
            h = a
        else:
            tape.preacts.append(a)
            h = _activate(params.activation, a)
    return (h[0] if squeeze else h), tape


def backward(params: RegressorParams, tape: Tape, output_grad) -> GradientBuffer:
    """Reverse-mode gradient of ``sum(output * output_grad)`` w.r.t. the parameters."""
    if tape.layer_dims != params.layer_dims:
        raise DimensionError("tape was recorded with a different architecture")
    g = np.asarray(output_grad, dtype=np.float64)
    if tape.squeeze:
        g = g[None, :]
    if g.shape != (tape.inputs[0].shape[0], params.out_dim):
        raise DimensionError(f"output_grad of shape {g.shape} does not match the forward output")
    n = len(params.weights)
    gw: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    for i in range(n - 1, -1, -1):
        gw[i] = tape.inputs[i].T @ g
        gb[i] = g.sum(axis=0)
        if i:
            g = (g @ params.weights[i].T) * _activate_grad(params.activation, tape.preacts[i - 1])
    return GradientBuffer(gw, gb)


def mse_and_grad(pred: np.ndarray, target: np.ndarray):
    """Mean over samples of the squared error summed over components / d.

    Returns ``(loss, per_sample_loss, d loss / d pred)``.
    """
    diff = pred - target
    per_sample = np.mean(diff * diff, axis=-1)
    loss = float(np.mean(per_sample))
    return loss, per_sample, (2.0 / diff.size) * diff


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: RegressorParams) -> "AdamState":
        return cls([np.zeros_like(a) for a in params.arrays()],
                   [np.zeros_like(a) for a in params.arrays()])


def adam_step(params: RegressorParams, grads: GradientBuffer, state: AdamState, lr: float):
    """One bias-corrected Adam update, applied in place. Returns ``(params, state)``."""
    if lr <= 0.0:
        raise ValueError("learning rate must be positive")
    garrs = grads.arrays()
    parrs = params.arrays()
    if [g.shape for g in garrs] != [p.shape for p in parrs]:
        raise DimensionError("gradient shapes do not match parameters")
    if not all(np.all(np.isfinite(g)) for g in garrs):
        raise DivergenceError("non-finite gradient; step rejected")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for p, g, m, v in zip(parrs, garrs, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


# -- checkpoints -------------------------------------------------------------

def params_to_bytes(params: RegressorParams) -> bytes:
    head = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(params.layer_dims))]
    head.append(struct.pack(f"<{len(params.layer_dims)}I", *params.layer_dims))
    head.append(struct.pack("<IB", params.time_embed_dim, ACTIVATIONS.index(params.activation)))
    body = [np.ascontiguousarray(a, dtype="<f8").tobytes() for a in params.arrays()]
    return b"".join(head + body)


def params_from_bytes(blob: bytes) -> RegressorParams:
    if blob[:4] != CHECKPOINT_MAGIC:
        raise FormatError("not a regressor checkpoint (bad magic)")
    try:
        version, n = struct.unpack_from("<II", blob, 4)
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        off = 12
        dims = struct.unpack_from(f"<{n}I", blob, off)
        off += 4 * n
        ted, act = struct.unpack_from("<IB", blob, off)
        off += 5
    except struct.error as exc:
        raise FormatError(f"truncated checkpoint header: {exc}") from None
    if act >= len(ACTIVATIONS):
        raise FormatError(f"unknown activation tag {act}")
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        for shape in ((fan_in, fan_out), (fan_out,)):
            size = int(np.prod(shape))
            if off + 8 * size > len(blob):
                raise FormatError("truncated checkpoint body")
            arr = np.frombuffer(blob, dtype="<f8", count=size, offset=off).astype(np.float64)
            (weights if len(shape) == 2 else biases).append(arr.reshape(shape))
            off += 8 * size
    if off != len(blob):
        raise FormatError("trailing bytes after checkpoint body")
    return RegressorParams(dims, ted, ACTIVATIONS[act], weights, biases)


def save_params(path, params: RegressorParams) -> Path:
    path = Path(path)
    path.write_bytes(params_to_bytes(params))
    return path


def load_params(path) -> RegressorParams:
    return params_from_bytes(Path(path).read_bytes())

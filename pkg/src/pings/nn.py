"""Dense tanh networks, Xavier initialisation, sinusoidal time features and
the binary weight format."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tape, Var
from .rng import SeededRng

MAGIC = b"PNGS"
FORMAT_VERSION = 1

EMBED_DIM = 64


@dataclass(frozen=True)
class MlpSpec:
    layer_dims: tuple[int, ...]
    activation: str = "tanh"
    output: str = "linear"

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        if len(dims) < 2:
            raise ValueError("an MLP needs at least an input and an output layer")
        if any(d < 1 for d in dims):
            raise ValueError(f"layer dims must be positive, got {dims}")
        if self.activation != "tanh" or self.output != "linear":
            raise ValueError("only tanh hidden layers with a linear output are supported")
        object.__setattr__(self, "layer_dims", dims)

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1


PINGS_SPEC = MlpSpec((4, 128, 128, 128, 128, 128, 128, 3))
DHO_SPEC = MlpSpec((2, 32, 32, 32, 32, 1))
EPS_SPEC = MlpSpec((3 + EMBED_DIM, 128, 128, 128, 128, 128, 128, 3))


@dataclass
class ParamStore:
    """Per-layer weights (out x in) and biases, with a stable flat ordering
    W0, b0, W1, b1, ..."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def spec(self) -> MlpSpec:
        dims = [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]
        return MlpSpec(tuple(dims))

    def names(self) -> list[str]:
        out = []
        for k in range(len(self.weights)):
            out += [f"W{k}", f"b{k}"]
        return out

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def as_dict(self) -> dict[str, np.ndarray]:
        return dict(zip(self.names(), self.arrays()))

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vec) -> "ParamStore":
        vec = np.asarray(vec, dtype=float)
        ws, bs, pos = [], [], 0
        for w, b in zip(self.weights, self.biases):
            ws.append(vec[pos:pos + w.size].reshape(w.shape).copy())
            pos += w.size
            bs.append(vec[pos:pos + b.size].copy())
            pos += b.size
        if pos != vec.size:
            raise ValueError(f"flat vector has {vec.size} entries, expected {pos}")
        return ParamStore(ws, bs)

    def copy(self) -> "ParamStore":
        return ParamStore([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def on_tape(self, tape: Tape) -> list[tuple[Var, Var]]:
        return [(tape.param(f"W{k}", w), tape.param(f"b{k}", b))
                for k, (w, b) in enumerate(zip(self.weights, self.biases))]

    def equal(self, other: "ParamStore") -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))


def xavier_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def xavier_init(spec: MlpSpec, rng: SeededRng) -> ParamStore:
    """Xavier-uniform weights, zero biases."""
    ws, bs = [], []
    for fan_in, fan_out in zip(spec.layer_dims[:-1], spec.layer_dims[1:]):
        bound = xavier_bound(fan_in, fan_out)
        ws.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        bs.append(np.zeros(fan_out))
    return ParamStore(ws, bs)


def mlp_forward(params: ParamStore, x) -> np.ndarray:
    """Plain (untaped) forward pass; accepts a vector or an (n, d) batch."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.shape[1] != params.weights[0].shape[1]:
        raise ValueError(f"input dim {h.shape[1]} != network input dim {params.weights[0].shape[1]}")
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if k != last:
            np.tanh(h, out=h)
    return h[0] if single else h


def embed_frequencies(dim: int = EMBED_DIM) -> np.ndarray:
    half = dim // 2
    return 10.0 ** (-4.0 * np.arange(half) / (half - 1))


_FREQS = embed_frequencies()


def time_embed(t) -> np.ndarray:
    """Sinusoidal features ``[sin(w_i t), cos(w_i t)]`` with 32 geometric
    frequencies from 1 down to 1e-4.  Scalar t gives shape (64,), an array of
    n times gives (n, 64)."""
    t = np.asarray(t, dtype=float)
    arg = t[..., None] * _FREQS
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=-1)


# ---------------------------------------------------------------------------
# persistence: "PNGS", u32 version, u32 layer count, per layer (rows, cols) u32,
# then per layer the row-major weights followed by the biases, all f64 LE.


def save_params(params: ParamStore, path) -> None:
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(params.weights))]
    for w in params.weights:
        parts.append(struct.pack("<II", *w.shape))
    for w, b in zip(params.weights, params.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


class ModelFormatError(ValueError):
    pass


def load_params(path) -> ParamStore:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ModelFormatError(f"{path}: not a PNGS weight file")
    version, n_layers = struct.unpack_from("<II", data, 4)
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"{path}: unsupported format version {version}")
    pos = 12
    shapes = []
    for _ in range(n_layers):
        shapes.append(struct.unpack_from("<II", data, pos))
        pos += 8
    ws, bs = [], []
    for rows, cols in shapes:
        w = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=pos).reshape(rows, cols)
        pos += 8 * rows * cols
        b = np.frombuffer(data, dtype="<f8", count=rows, offset=pos)
        pos += 8 * rows
        ws.append(w.astype(float))
        bs.append(b.astype(float))
    if pos != len(data):
        raise ModelFormatError(f"{path}: {len(data) - pos} trailing bytes")
    return ParamStore(ws, bs)

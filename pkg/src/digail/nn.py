"""Small numpy network core.

Dense ReLU networks with hand-written reverse-mode gradients, Adam, and the
categorical helpers used by the encoder, decoder and discriminator.

Checkpoint layout (little-endian), repeated once per stored network::

    b"DIGN"            magic
    u32                format version (1)
    u32, utf-8 bytes   name length, name
    u32                number of layer sizes n
    u32 * n            layer sizes
    f64 ...            for each layer: weights (row-major, out x in), biases
    u32, f64 ...       length and values of an extra vector (e.g. log-std)
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable

import numpy as np

MAGIC = b"DIGN"
FORMAT_VERSION = 1


class OutOfSupportError(ValueError):
    """A divergence or bound is infinite because of a zero-probability event."""


@dataclass
class MlpParams:
    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    grad_weights: list[np.ndarray] = field(default_factory=list)
    grad_biases: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.layer_sizes = [int(n) for n in self.layer_sizes]
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ValueError(f"bad layer sizes {self.layer_sizes}")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_sizes[l + 1], self.layer_sizes[l])
            if w.shape != shape or b.shape != (shape[0],):
                raise ValueError(f"layer {l}: expected weight {shape}, got {w.shape}")
        if not self.grad_weights:
            self.grad_weights = [np.zeros_like(w) for w in self.weights]
            self.grad_biases = [np.zeros_like(b) for b in self.biases]

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    @classmethod
    def zeros(cls, layer_sizes) -> "MlpParams":
        ws = [np.zeros((o, i)) for i, o in zip(layer_sizes[:-1], layer_sizes[1:])]
        bs = [np.zeros(o) for o in layer_sizes[1:]]
        return cls(list(layer_sizes), ws, bs)

    @classmethod
    def init(cls, layer_sizes, rng: np.random.Generator,
             hidden_gain: float = math.sqrt(2.0), output_gain: float = 0.01) -> "MlpParams":
        """Orthogonal init; biases start at zero."""
        params = cls.zeros(layer_sizes)
        n_layers = len(params.weights)
        for l, w in enumerate(params.weights):
            gain = output_gain if l == n_layers - 1 else hidden_gain
            w[...] = gain * _orthogonal(w.shape, rng)
        return params

    def parameters(self) -> list[tuple[np.ndarray, np.ndarray]]:
        pairs = []
        for l in range(len(self.weights)):
            pairs.append((self.weights[l], self.grad_weights[l]))
            pairs.append((self.biases[l], self.grad_biases[l]))
        return pairs

    def zero_grad(self):
        for _, g in self.parameters():
            g[...] = 0.0

    def copy(self) -> "MlpParams":
        return MlpParams(list(self.layer_sizes), [w.copy() for w in self.weights],
                         [b.copy() for b in self.biases])

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p, _ in self.parameters()])


def _orthogonal(shape, rng):
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return q if rows >= cols else q.T


def _check_input(params: MlpParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim not in (1, 2) or x.shape[-1] != params.n_in:
        raise ValueError(f"input has shape {x.shape}, network expects {params.n_in} features")
    return x


def mlp_forward(params: MlpParams, x) -> np.ndarray:
    """ReLU hidden layers, linear output. Accepts one vector or a row batch."""
    out, _ = forward_with_cache(params, x)
    return out


def forward_with_cache(params: MlpParams, x):
    h = _check_input(params, x)
    acts = [h]
    last = len(params.weights) - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if l < last:
            h = np.maximum(h, 0.0)
        acts.append(h)
    return h, acts


def mlp_backward(params: MlpParams, x, upstream, cache=None) -> np.ndarray:
    """Accumulate d(upstream . output)/d(theta) into the grad slots.

    Returns the gradient with respect to the input. ``cache`` is the
    activation list from :func:`forward_with_cache`; the forward pass is
    recomputed when it is omitted.
    """
    if cache is None:
        _, cache = forward_with_cache(params, x)
    g = np.asarray(upstream, dtype=float)
    if g.shape != cache[-1].shape:
        raise ValueError(f"upstream shape {g.shape} != output shape {cache[-1].shape}")
    if not np.all(np.isfinite(g)):
        raise ValueError("non-finite upstream gradient")
    batched = g.ndim == 2
    for l in range(len(params.weights) - 1, -1, -1):
        if l < len(params.weights) - 1:
            g = g * (cache[l + 1] > 0.0)
        a_in = cache[l]
        if batched:
            params.grad_weights[l] += g.T @ a_in
            params.grad_biases[l] += g.sum(axis=0)
        else:
            params.grad_weights[l] += np.outer(g, a_in)
            params.grad_biases[l] += g
        g = g @ params.weights[l]
    return g


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, lr: float = 3e-4, **kw) -> "AdamState":
        pairs = params.parameters()
        return cls([np.zeros_like(p) for p, _ in pairs], [np.zeros_like(p) for p, _ in pairs],
                   lr=lr, **kw)


def adam_step(state: AdamState, params):
    """Bias-corrected Adam update in place, then zero the gradients.

    ``params`` is anything with a ``parameters()`` list of (value, grad) pairs.
    """
    pairs = params.parameters()
    if len(pairs) != len(state.m):
        raise ValueError("optimizer state does not match parameter bundle")
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for (p, g), m, v in zip(pairs, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        g[...] = 0.0
    return params


def softmax_logprobs(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits) -> np.ndarray:
    return np.exp(softmax_logprobs(logits))


def categorical_kl(q, p) -> float:
    """KL(q || p) in nats with 0 log 0 = 0."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    support = q > 0
    if np.any(p[support] <= 0):
        raise OutOfSupportError("p has zero mass where q is positive")
    return float(np.sum(q[support] * (np.log(q[support]) - np.log(p[support]))))


def entropy_logit_grad(logp: np.ndarray) -> np.ndarray:
    """Gradient of sum(p log p) with respect to the logits, rowwise."""
    p = np.exp(logp)
    neg_h = np.sum(p * logp, axis=-1, keepdims=True)
    return p * (logp - neg_h)


def sample_gumbel(shape, rng: np.random.Generator) -> np.ndarray:
    u = np.maximum(rng.random(shape), 1e-300)
    return -np.log(-np.log(u))


def gumbel_softmax_sample(logits, tau: float, rng: np.random.Generator, noise=None) -> np.ndarray:
    """Relaxed one-hot sample softmax((logits + g) / tau)."""
    if tau <= 0:
        raise ValueError("temperature must be positive")
    logits = np.asarray(logits, dtype=float)
    if noise is None:
        noise = sample_gumbel(logits.shape, rng)
    return softmax((logits + noise) / tau)


def gumbel_softmax_backward(y: np.ndarray, tau: float, upstream: np.ndarray) -> np.ndarray:
    """Map a gradient on the relaxed sample back to the logits."""
    return y * (upstream - np.sum(upstream * y, axis=-1, keepdims=True)) / tau


def harden(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    np.put_along_axis(out, np.argmax(y, axis=-1)[..., None], 1.0, axis=-1)
    return out


def one_hot(index, n: int) -> np.ndarray:
    index = np.asarray(index, dtype=int)
    out = np.zeros(index.shape + (n,))
    np.put_along_axis(out, index[..., None], 1.0, axis=-1)
    return out


@dataclass(frozen=True)
class TemperatureSchedule:
    tau0: float = 5.0
    k: float = 3e-3
    floor: float = 0.1


def temperature(schedule: TemperatureSchedule, epoch: int) -> float:
    if epoch < 0:
        raise ValueError("epoch must be nonnegative")
    return max(schedule.floor, schedule.tau0 * math.exp(-schedule.k * epoch))


# -- checkpoints ----------------------------------------------------------------

def write_params(fh: BinaryIO, name: str, params: MlpParams, extra=None):
    raw = name.encode("utf-8")
    fh.write(MAGIC)
    fh.write(struct.pack("<II", FORMAT_VERSION, len(raw)))
    fh.write(raw)
    fh.write(struct.pack("<I", len(params.layer_sizes)))
    fh.write(struct.pack(f"<{len(params.layer_sizes)}I", *params.layer_sizes))
    for w, b in zip(params.weights, params.biases):
        fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
    extra = np.zeros(0) if extra is None else np.asarray(extra, dtype="<f8").ravel()
    fh.write(struct.pack("<I", extra.size))
    fh.write(extra.tobytes())


def _read_exact(fh, n):
    buf = fh.read(n)
    if len(buf) != n:
        raise ValueError("truncated checkpoint")
    return buf


def read_params(fh: BinaryIO):
    """Read one record; returns (name, params, extra) or None at end of file."""
    magic = fh.read(4)
    if not magic:
        return None
    if magic != MAGIC:
        raise ValueError(f"bad checkpoint magic {magic!r}")
    version, n_name = struct.unpack("<II", _read_exact(fh, 8))
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    name = _read_exact(fh, n_name).decode("utf-8")
    (n_sizes,) = struct.unpack("<I", _read_exact(fh, 4))
    sizes = list(struct.unpack(f"<{n_sizes}I", _read_exact(fh, 4 * n_sizes)))
    ws, bs = [], []
    for n_i, n_o in zip(sizes[:-1], sizes[1:]):
        ws.append(np.frombuffer(_read_exact(fh, 8 * n_i * n_o), dtype="<f8").reshape(n_o, n_i).copy())
        bs.append(np.frombuffer(_read_exact(fh, 8 * n_o), dtype="<f8").copy())
    (n_extra,) = struct.unpack("<I", _read_exact(fh, 4))
    extra = np.frombuffer(_read_exact(fh, 8 * n_extra), dtype="<f8").copy()
    return name, MlpParams(sizes, ws, bs), extra


def save_checkpoint(path, nets: dict[str, tuple[MlpParams, np.ndarray | None]]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        for name, (params, extra) in nets.items():
            write_params(fh, name, params, extra)


def load_checkpoint(path) -> dict[str, tuple[MlpParams, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    out = {}
    with open(path, "rb") as fh:
        while (rec := read_params(fh)) is not None:
            name, params, extra = rec
            out[name] = (params, extra)
    return out


def total_grad_norm(bundles: Iterable) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for b in bundles for _, g in b.parameters()))

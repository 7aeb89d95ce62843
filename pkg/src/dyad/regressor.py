"""Small fully connected score regressor trained with MSE and AdaGrad.

Architecture: input -> ReLU(h1) -> ReLU(h2) -> logistic(1). Weights are
kept as (fan_in, fan_out) matrices so a batch is pushed through with
``x @ W + b``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .ingest import FormatError, _read_bytes, _write_atomic

MLP_MAGIC = b"MLP1"


def _logistic(z):
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class MlpRegressor:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def initialize(cls, layer_sizes, seed: int = 0) -> "MlpRegressor":
        """Glorot-uniform weights, zero biases."""
        sizes = list(layer_sizes)
        if len(sizes) < 2 or sizes[-1] != 1 or min(sizes) < 1:
            raise ValueError(f"bad layer sizes {sizes}")
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    def parameters(self) -> list[np.ndarray]:
        """Interleaved [W1, b1, W2, b2, ...]; these are the live arrays."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "MlpRegressor":
        return MlpRegressor([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def __eq__(self, other):
        if not isinstance(other, MlpRegressor):
            return NotImplemented
        mine, theirs = self.parameters(), other.parameters()
        return len(mine) == len(theirs) and all(
            a.shape == b.shape and np.array_equal(a, b) for a, b in zip(mine, theirs))

    def __call__(self, x) -> np.ndarray:
        return forward(self, x)


def _as_input(model: MlpRegressor, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != model.input_dim:
        raise ValueError(f"dimension mismatch: model expects {model.input_dim}, got {x.shape[1]}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")
    return x


def _forward_cache(model: MlpRegressor, x: np.ndarray):
    activations = [x]
    h = x
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w + b
        h = _logistic(z) if i == last else np.maximum(z, 0.0)
        activations.append(h)
    return activations


def forward(model: MlpRegressor, x) -> np.ndarray:
    """Scores in (0, 1), one per row of x (a single vector gives length 1)."""
    return _forward_cache(model, _as_input(model, x))[-1][:, 0]


def mse_loss(predictions, targets) -> float:
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError("predictions and targets differ in length")
    if p.size == 0:
        raise ValueError("empty batch")
    return float(np.mean((p - t) ** 2))


def backward(model: MlpRegressor, x, targets):
    """Exact gradient of the batch MSE with respect to every parameter.

    Returns ``(loss, grads)`` with grads in ``model.parameters()`` order.
    """
    x = _as_input(model, x)
    t = np.asarray(targets, dtype=np.float64).reshape(-1)
    if t.shape[0] != x.shape[0]:
        raise ValueError("batch and targets differ in length")
    acts = _forward_cache(model, x)
    p = acts[-1][:, 0]
    loss = float(np.mean((p - t) ** 2))

    # d loss / d z_out through the logistic
    delta = (2.0 / len(t) * (p - t) * p * (1.0 - p))[:, None]
    grads = []
    for i in range(len(model.weights) - 1, -1, -1):
        grads.append(delta.sum(axis=0))
        grads.append(acts[i].T @ delta)
        if i > 0:
            delta = (delta @ model.weights[i].T) * (acts[i] > 0)
    grads.reverse()  # now [W1, b1, W2, b2, ...]
    return loss, grads


@dataclass
class AdaGradState:
    accumulators: list[np.ndarray]
    learning_rate: float = 0.005
    epsilon: float = 1e-8

    @classmethod
    def for_model(cls, model: MlpRegressor, learning_rate: float = 0.005, epsilon: float = 1e-8):
        return cls([np.zeros_like(p) for p in model.parameters()], learning_rate, epsilon)

    def copy(self) -> "AdaGradState":
        return AdaGradState([a.copy() for a in self.accumulators], self.learning_rate, self.epsilon)


def adagrad_step(model: MlpRegressor, state: AdaGradState, grads) -> None:
    """In-place update: acc += g**2; p -= lr * g / (sqrt(acc) + eps)."""
    params = model.parameters()
    if len(grads) != len(params) or len(state.accumulators) != len(params):
        raise ValueError("gradient / parameter count mismatch")
    for p, acc, g in zip(params, state.accumulators, grads):
        if g.shape != p.shape or acc.shape != p.shape:
            raise ValueError(f"shape mismatch {g.shape} vs {p.shape}")
        acc += g * g
        p -= state.learning_rate * g / (np.sqrt(acc) + state.epsilon)


def balanced_batch(rng: np.random.Generator, labels, batch_size: int) -> np.ndarray:
    """Indices of one batch drawn half from label 1 and half from label 0.

    A class with fewer members than its share is sampled with
    replacement; if one class is absent the whole batch comes from the
    other.
    """
    labels = np.asarray(labels)
    pos = np.flatnonzero(labels == 1)
    neg = np.flatnonzero(labels == 0)
    if pos.size == 0 and neg.size == 0:
        raise ValueError("no samples to draw from")
    if pos.size == 0 or neg.size == 0:
        plan = [(pos if pos.size else neg, batch_size)]
    else:
        half = batch_size // 2
        plan = [(pos, half), (neg, batch_size - half)]
    parts = [rng.choice(pool, size=n, replace=pool.size < n) for pool, n in plan]
    return np.concatenate(parts)


def train_iterations(model: MlpRegressor, state: AdaGradState, samples, targets,
                     iterations: int = 30, batch_size: int = 32, seed=0) -> list[float]:
    """Run ``iterations`` AdaGrad steps on balanced mini-batches, in place.

    ``seed`` may be an int or a ``numpy.random.Generator``. Returns the
    per-step batch losses.
    """
    x = np.asarray(samples, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("empty sample set")
    if y.shape != (x.shape[0],):
        raise ValueError("one target per sample required")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    losses = []
    for _ in range(iterations):
        idx = balanced_batch(rng, y, batch_size)
        loss, grads = backward(model, x[idx], y[idx])
        adagrad_step(model, state, grads)
        losses.append(loss)
    return losses


def encode_mlp(model: MlpRegressor) -> bytes:
    """MLP1: magic, u32 layer count, then per layer u32 rows (fan_in),
    u32 cols (fan_out), row-major f32 weights and f32 biases."""
    out = [MLP_MAGIC, struct.pack("<I", len(model.weights))]
    for w, b in zip(model.weights, model.biases):
        out.append(struct.pack("<2I", *w.shape))
        out.append(w.astype("<f4").tobytes())
        out.append(b.astype("<f4").tobytes())
    return b"".join(out)


def decode_mlp(data: bytes) -> MlpRegressor:
    if len(data) < 8 or data[:4] != MLP_MAGIC:
        raise FormatError("malformed MLP1 header")
    (layers,) = struct.unpack_from("<I", data, 4)
    off = 8
    weights, biases = [], []
    try:
        for _ in range(layers):
            rows, cols = struct.unpack_from("<2I", data, off)
            off += 8
            w = np.frombuffer(data, "<f4", rows * cols, off).reshape(rows, cols)
            off += 4 * rows * cols
            b = np.frombuffer(data, "<f4", cols, off)
            off += 4 * cols
            weights.append(w.astype(np.float64))
            biases.append(b.astype(np.float64))
    except (struct.error, ValueError) as exc:
        raise FormatError(f"truncated MLP1 payload: {exc}") from exc
    if off != len(data):
        raise FormatError("trailing bytes in MLP1 file")
    return MlpRegressor(weights, biases)


def save_mlp(path, model: MlpRegressor) -> None:
    _write_atomic(path, encode_mlp(model))


def load_mlp(path) -> MlpRegressor:
    return decode_mlp(_read_bytes(path))

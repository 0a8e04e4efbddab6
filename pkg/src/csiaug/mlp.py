"""Fully connected regression network written directly in numpy.

Features are the flattened CSI tensor, real parts first then imaginary
parts, in canonical ``[ap][rx][subcarrier]`` order. The network is
``d -> 256 -> 256 -> 256 -> 2`` with ReLU hidden layers and a linear head,
trained with Adam on the mean squared Euclidean error. All arithmetic is
float64.

Checkpoint layout (little-endian)::

    magic         4 bytes  b"CSIM"
    version       u32      1
    n_sizes       u32
    layer_sizes   n_sizes x u32
    act_len       u8
    activation    act_len bytes ("relu")
    init_seed     i64
    shuffle_seed  i64
    has_scaler    u8
    [mean, std]   2 x d x f64       only if has_scaler
    per layer:    W  fan_in x fan_out f64, row-major
                  b  fan_out f64
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import BinaryIO

import numpy as np

from . import rng as rngmod
from .core import CsiSample, Dataset, Location
from .errors import DimensionError, FormatError, PreconditionError, TrainingError

HIDDEN = (256, 256, 256)
STD_FLOOR = 1e-8


def encode(sample: CsiSample) -> np.ndarray:
    flat = np.asarray(sample.csi).ravel()
    return np.concatenate([flat.real, flat.imag]).astype(np.float64)


def encode_dataset(dataset: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Feature matrix ``(N, 2 * M * N_RX * N_AP)`` and label matrix ``(N, 2)``."""
    flat = dataset.csi.reshape(len(dataset), -1)
    X = np.concatenate([flat.real, flat.imag], axis=1).astype(np.float64)
    return X, np.array(dataset.labels, dtype=np.float64)


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or len(X) == 0:
            raise PreconditionError("standardizer needs a nonempty (N, d) feature matrix")
        return cls(X.mean(axis=0), np.maximum(X.std(axis=0), STD_FLOOR))

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.std


def standardize_fit(features) -> Standardizer:
    return Standardizer.fit(np.atleast_2d(np.asarray(features, dtype=np.float64)))


@dataclass
class MlpModel:
    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]  # (fan_in, fan_out)
    biases: list[np.ndarray]
    activation: str = "relu"
    init_seed: int = 0

    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self) -> "MlpModel":
        return replace(self, weights=[W.copy() for W in self.weights], biases=[b.copy() for b in self.biases])


def init_model(d_in: int, seed: int = 0, hidden=HIDDEN, d_out: int = 2) -> MlpModel:
    """He-uniform weights (limit ``sqrt(6 / fan_in)``), zero biases."""
    sizes = (d_in, *hidden, d_out)
    g = rngmod.substream(seed, rngmod.INIT)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        lim = math.sqrt(6.0 / fan_in)
        weights.append(g.uniform(-lim, lim, (fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(sizes, weights, biases, "relu", seed)


def _forward(model: MlpModel, X: np.ndarray):
    acts = [X]
    pre = []
    a = X
    last = len(model.weights) - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ W + b
        pre.append(z)
        a = z if i == last else np.maximum(z, 0.0)
        acts.append(a)
    return a, acts, pre


def predict(model: MlpModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.layer_sizes[0]:
        raise DimensionError(f"input shape {X.shape}, expected (N, {model.layer_sizes[0]})")
    return _forward(model, X)[0]


def forward(model: MlpModel, x) -> Location:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size != model.layer_sizes[0]:
        raise DimensionError(f"feature length {x.size}, expected {model.layer_sizes[0]}")
    out = predict(model, x[None, :])[0]
    return Location(float(out[0]), float(out[1]))


def loss_and_gradients(model: MlpModel, X: np.ndarray, Y: np.ndarray) -> tuple[float, list[np.ndarray]]:
    """Mean squared Euclidean error and its gradient, ordered like ``model.params()``."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if len(X) == 0:
        raise PreconditionError("empty batch")
    out, acts, pre = _forward(model, X)
    err = out - Y
    B = len(X)
    loss = float(np.sum(err * err) / B)

    grads: list[np.ndarray] = []
    delta = 2.0 * err / B
    for i in range(len(model.weights) - 1, -1, -1):
        gW = acts[i].T @ delta
        gb = delta.sum(axis=0)
        grads = [gW, gb] + grads
        if i:
            delta = (delta @ model.weights[i].T) * (pre[i - 1] > 0)
    return loss, grads


def evaluate_mse(model: MlpModel, X: np.ndarray, Y: np.ndarray) -> float:
    """``(1/N) sum ||f(x_i) - y_i||^2`` with an exactly rounded sum."""
    if len(X) == 0:
        raise PreconditionError("empty test set")
    err = predict(model, X) - np.asarray(Y, dtype=np.float64)
    per_sample = err[:, 0] * err[:, 0] + err[:, 1] * err[:, 1]
    return math.fsum(per_sample.tolist()) / len(per_sample)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    batch_size: int = 128
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    shuffle_seed: int = 0
    init_seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise PreconditionError("epochs and batch_size must be >= 1")
        if not self.learning_rate >= 0:
            raise PreconditionError("learning_rate must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise PreconditionError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class Adam:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train(
    model: MlpModel, X: np.ndarray, Y: np.ndarray, config: TrainConfig, log=None
) -> tuple[MlpModel, list[float]]:
    """Mini-batch training; returns a trained copy and the per-epoch mean loss.

    Batches are reshuffled every epoch from ``(shuffle_seed, epoch)``.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.layer_sizes[0] or Y.shape != (len(X), model.layer_sizes[-1]):
        raise DimensionError(f"training data shapes {X.shape}, {Y.shape} do not fit {model.layer_sizes}")
    if len(X) == 0:
        raise PreconditionError("empty training set")
    model = model.copy()
    params = model.params()
    if config.optimizer == "adam":
        opt = Adam(config.learning_rate, config.beta1, config.beta2, config.eps)
        step = opt.step
    else:
        def step(ps, gs):
            for p, g in zip(ps, gs):
                p -= config.learning_rate * g

    trace: list[float] = []
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(config.epochs):
            trace.append(_run_epoch(model, params, X, Y, config, epoch, step))
            if log is not None:
                log(epoch, trace[-1])
    return model, trace


def _run_epoch(model, params, X, Y, config: TrainConfig, epoch: int, step) -> float:
    n = len(X)
    order = rngmod.substream(config.shuffle_seed, rngmod.SHUFFLE, epoch).permutation(n)
    total = 0.0
    for start in range(0, n, config.batch_size):
        idx = order[start:start + config.batch_size]
        loss, grads = loss_and_gradients(model, X[idx], Y[idx])
        if not math.isfinite(loss):
            raise TrainingError(f"loss became {loss} in epoch {epoch}", epoch=epoch)
        total += loss * len(idx)
        step(params, grads)
    return total / n


@dataclass
class Regressor:
    """A trained model plus the feature scaler it expects."""

    model: MlpModel
    scaler: Standardizer | None = None
    shuffle_seed: int = 0

    def features(self, dataset: Dataset) -> tuple[np.ndarray, np.ndarray]:
        X, Y = encode_dataset(dataset)
        return (self.scaler.transform(X) if self.scaler else X), Y

    def mse(self, dataset: Dataset) -> float:
        return evaluate_mse(self.model, *self.features(dataset))


_CK_HEAD = struct.Struct("<4sII")
_CK_MAGIC = b"CSIM"


def write_checkpoint(reg: Regressor, dest: BinaryIO) -> int:
    m = reg.model
    act = m.activation.encode("ascii")
    parts = [
        _CK_HEAD.pack(_CK_MAGIC, 1, len(m.layer_sizes)),
        struct.pack(f"<{len(m.layer_sizes)}I", *m.layer_sizes),
        struct.pack("<B", len(act)), act,
        struct.pack("<qqB", m.init_seed, reg.shuffle_seed, reg.scaler is not None),
    ]
    if reg.scaler is not None:
        parts += [reg.scaler.mean.astype("<f8").tobytes(), reg.scaler.std.astype("<f8").tobytes()]
    for W, b in zip(m.weights, m.biases):
        parts += [np.ascontiguousarray(W, dtype="<f8").tobytes(), b.astype("<f8").tobytes()]
    blob = b"".join(parts)
    dest.write(blob)
    return len(blob)


def read_checkpoint(source: BinaryIO) -> Regressor:
    raw = source.read()
    try:
        magic, version, n_sizes = _CK_HEAD.unpack_from(raw, 0)
        if magic != _CK_MAGIC or version != 1:
            raise FormatError(f"not a model checkpoint (magic {magic!r}, version {version})")
        off = _CK_HEAD.size
        sizes = struct.unpack_from(f"<{n_sizes}I", raw, off)
        off += 4 * n_sizes
        (alen,) = struct.unpack_from("<B", raw, off)
        off += 1
        act = raw[off:off + alen].decode("ascii")
        off += alen
        init_seed, shuffle_seed, has_scaler = struct.unpack_from("<qqB", raw, off)
        off += 17

        def take(count, shape):
            nonlocal off
            a = np.frombuffer(raw, "<f8", count, off).reshape(shape).astype(np.float64)
            off += 8 * count
            return a

        scaler = None
        if has_scaler:
            d = sizes[0]
            scaler = Standardizer(take(d, (d,)), take(d, (d,)))
        weights, biases = [], []
        for fi, fo in zip(sizes[:-1], sizes[1:]):
            weights.append(take(fi * fo, (fi, fo)))
            biases.append(take(fo, (fo,)))
    except (struct.error, ValueError) as e:
        raise FormatError(f"truncated or corrupt checkpoint: {e}") from None
    if off != len(raw):
        raise FormatError(f"{len(raw) - off} trailing bytes in checkpoint")
    return Regressor(MlpModel(tuple(sizes), weights, biases, act, init_seed), scaler, shuffle_seed)


def save_checkpoint(reg: Regressor, path: str | Path) -> int:
    with open(path, "wb") as f:
        return write_checkpoint(reg, f)


def load_checkpoint(path: str | Path) -> Regressor:
    with open(path, "rb") as f:
        return read_checkpoint(f)

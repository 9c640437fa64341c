"""Residual-network time stepper: forward map, exact gradients, Adam training,
rollout and the binary checkpoint format.

The stepper computes ``x_next = x + N(x)`` where ``N`` is a fully connected
network whose hidden layers use the configured activation and whose output
layer is affine.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DivergenceError, FormatError, InvalidArgumentError
from .numcore import make_rng

ACTIVATIONS = ("relu", "tanh", "identity")


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name, z, a):
    # a = act(z), reused to avoid recomputing tanh
    if name == "relu":
        return (z > 0.0).astype(z.dtype)
    if name == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


@dataclass
class ResNetStepper:
    widths: list[int]
    weights: list[np.ndarray]  # W_k has shape (widths[k], widths[k+1])
    biases: list[np.ndarray]
    activation: str = "relu"
    stride_d: int = 0
    dt_unit: float = 0.01

    def __post_init__(self):
        self.widths = [int(w) for w in self.widths]
        if len(self.widths) < 2 or self.widths[0] != self.widths[-1]:
            raise InvalidArgumentError(f"widths must start and end with the state dimension, got {self.widths}")
        if self.activation not in ACTIVATIONS:
            raise InvalidArgumentError(f"unknown activation {self.activation!r}")
        if self.stride_d < 0:
            raise InvalidArgumentError("stride_d must be non-negative")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.widths[k], self.widths[k + 1]) or b.shape != (self.widths[k + 1],):
                raise InvalidArgumentError(f"layer {k} parameter shapes do not match widths {self.widths}")

    @property
    def state_dim(self) -> int:
        return self.widths[0]

    @property
    def stride(self) -> int:
        """Step length in unit steps."""
        return 2**self.stride_d

    @property
    def dt(self) -> float:
        return self.dt_unit * self.stride

    def parameters(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def copy(self) -> "ResNetStepper":
        return ResNetStepper(list(self.widths), [w.copy() for w in self.weights],
                             [b.copy() for b in self.biases], self.activation, self.stride_d, self.dt_unit)


def init_stepper(widths, activation="relu", stride_d=0, rng=None, dt_unit=0.01, zero=False) -> ResNetStepper:
    """Glorot-uniform weights and zero biases (all zeros when ``zero``)."""
    widths = [int(w) for w in widths]
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        if zero:
            w = np.zeros((fan_in, fan_out))
        else:
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        weights.append(w)
        biases.append(np.zeros(fan_out))
    return ResNetStepper(widths, weights, biases, activation, stride_d, dt_unit)


def _check_states(model, states):
    x = np.asarray(states, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.state_dim:
        raise InvalidArgumentError(f"expected states of shape (B, {model.state_dim}), got {x.shape}")
    return x


def _residual(model, x):
    a = x
    last = len(model.weights) - 1
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w + b
        a = z if k == last else _act(model.activation, z)
    return a


def forward_step(model: ResNetStepper, states) -> np.ndarray:
    """One stride of the learned flow map: ``states + N(states)``."""
    x = _check_states(model, states)
    return x + _residual(model, x)


def loss_and_gradients(model: ResNetStepper, inputs, targets):
    """Mean squared one-step error and its exact gradient per parameter.

    Gradients come back in :meth:`ResNetStepper.parameters` order
    (W_0, b_0, W_1, b_1, ...).
    """
    x = _check_states(model, inputs)
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != x.shape:
        raise InvalidArgumentError(f"targets shape {y.shape} does not match inputs {x.shape}")

    acts, pres = [x], []
    last = len(model.weights) - 1
    a = x
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w + b
        pres.append(z)
        a = z if k == last else _act(model.activation, z)
        acts.append(a)
    diff = x + a - y
    loss = float(np.mean(diff * diff))

    g = (2.0 / diff.size) * diff
    grads = [None] * (2 * len(model.weights))
    for k in range(last, -1, -1):
        if k != last:
            g = g * _act_grad(model.activation, pres[k], acts[k + 1])
        grads[2 * k] = acts[k].T @ g
        grads[2 * k + 1] = g.sum(axis=0)
        if k:
            g = g @ model.weights[k].T
    return loss, grads


@dataclass
class TrainConfig:
    epochs: int = 500
    batch_size: int = 320
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    validation_patience: int = 0  # 0 disables early stopping
    seed: int = 0
    # Cap on one-step pairs drawn per epoch (None = every pair). Fine strides
    # have millions of pairs; an epoch then means this many random pairs.
    max_pairs_per_epoch: int | None = None
    max_val_pairs: int | None = 20000

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0 or self.eps_adam <= 0:
            raise InvalidArgumentError("epochs, batch_size, learning_rate and eps_adam must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise InvalidArgumentError("Adam betas must lie in (0, 1)")


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])

    def step(self, params, grads, cfg: TrainConfig):
        self.t += 1
        c1 = 1.0 - cfg.beta1**self.t
        c2 = 1.0 - cfg.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            p -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.eps_adam)


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def best_val_loss(self) -> float:
        return self.val_loss[self.best_epoch]


def _mean_loss(model, x, y, chunk=65536):
    total = 0.0
    for s in range(0, len(x), chunk):
        pred = x[s:s + chunk] + _residual(model, x[s:s + chunk])
        total += float(np.sum((pred - y[s:s + chunk]) ** 2))
    return total / x.size


def train_stepper(model: ResNetStepper, train, val, cfg: TrainConfig):
    """Minibatch Adam on one-step pairs; keeps the best-on-validation weights.

    ``train`` and ``val`` are datasets sampled at the model's stride (anything
    with a ``pairs()`` method, or an ``(inputs, targets)`` tuple). History
    entry 0 is the loss before the first update. The model is updated in
    place and also returned.
    """
    x_tr, y_tr = train if isinstance(train, tuple) else train.pairs()
    x_va, y_va = val if isinstance(val, tuple) else val.pairs()
    for ds in (train, val):
        dt = getattr(ds, "dt", None)
        if dt is not None and not np.isclose(dt, model.dt):
            raise InvalidArgumentError(f"dataset stride {dt} does not match model stride {model.dt}")
    if len(x_tr) == 0 or len(x_va) == 0:
        raise InvalidArgumentError("training and validation sets need at least one pair")

    rng = make_rng(cfg.seed)
    if cfg.max_val_pairs is not None and len(x_va) > cfg.max_val_pairs:
        keep = np.sort(rng.choice(len(x_va), cfg.max_val_pairs, replace=False))
        x_va, y_va = x_va[keep], y_va[keep]

    params = model.parameters()
    adam = AdamState.zeros_like(params)
    hist = TrainHistory([_mean_loss(model, x_tr[: cfg.max_val_pairs or None], y_tr[: cfg.max_val_pairs or None])],
                        [_mean_loss(model, x_va, y_va)])
    best = model.copy()
    stale = 0
    n_pairs = len(x_tr)
    per_epoch = n_pairs if cfg.max_pairs_per_epoch is None else min(n_pairs, cfg.max_pairs_per_epoch)

    for epoch in range(1, cfg.epochs + 1):
        # a capped epoch draws a fresh subset without replacement
        order = rng.permutation(n_pairs) if per_epoch == n_pairs else rng.choice(n_pairs, per_epoch, replace=False)
        running = 0.0
        for s in range(0, per_epoch, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            loss, grads = loss_and_gradients(model, x_tr[idx], y_tr[idx])
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite training loss at epoch {epoch}", where=epoch)
            adam.step(params, grads, cfg)
            running += loss * len(idx)
        val_loss = _mean_loss(model, x_va, y_va)
        if not np.isfinite(val_loss):
            raise DivergenceError(f"non-finite validation loss at epoch {epoch}", where=epoch)
        hist.train_loss.append(running / per_epoch)
        hist.val_loss.append(val_loss)
        if val_loss < hist.best_val_loss:
            hist.best_epoch = epoch
            best = model.copy()
            stale = 0
        else:
            stale += 1
            if cfg.validation_patience and stale >= cfg.validation_patience:
                break

    model.weights, model.biases = best.weights, best.biases
    return model, hist


def rollout(model: ResNetStepper, x0, n_steps: int) -> np.ndarray:
    """Iterate the stepper; returns (B, n_steps+1, n) with slice 0 equal to ``x0``."""
    if n_steps < 0:
        raise InvalidArgumentError("n_steps must be non-negative")
    x = _check_states(model, x0)
    out = np.empty((x.shape[0], n_steps + 1, x.shape[1]))
    out[:, 0] = x
    for i in range(1, n_steps + 1):
        x = x + _residual(model, x)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"non-finite state at rollout step {i} of model d={model.stride_d}", where=i)
        out[:, i] = x
    return out


CK_MAGIC = b"AHTS-CK\x00"
CK_VERSION = 1


def checkpoint_bytes(model: ResNetStepper) -> bytes:
    name = model.activation.encode("ascii")
    parts = [CK_MAGIC, struct.pack("<Q", CK_VERSION), struct.pack("<Q", len(name)), name,
             struct.pack("<QQ", model.stride_d, len(model.weights)),
             np.asarray(model.widths, dtype="<u8").tobytes()]
    for w, b in zip(model.weights, model.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return b"".join(parts)


def write_checkpoint(model: ResNetStepper, path) -> Path:
    path = Path(path)
    path.write_bytes(checkpoint_bytes(model))
    return path


class _Reader:
    def __init__(self, raw, path):
        self.raw, self.pos, self.path = raw, 0, path

    def take(self, n, what):
        if self.pos + n > len(self.raw):
            raise FormatError(f"{self.path}: truncated while reading {what}", field=what)
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def u64(self, what):
        return struct.unpack("<Q", self.take(8, what))[0]


def read_checkpoint(path, dt_unit: float = 0.01) -> ResNetStepper:
    path = Path(path)
    r = _Reader(path.read_bytes(), path)
    if r.take(8, "magic") != CK_MAGIC:
        raise FormatError(f"{path}: bad magic", field="magic")
    version = r.u64("version")
    if version != CK_VERSION:
        raise FormatError(f"{path}: unsupported version {version}", field="version")
    name_len = r.u64("activation")
    if name_len > 64:
        raise FormatError(f"{path}: implausible activation name length {name_len}", field="activation")
    activation = r.take(name_len, "activation").decode("ascii", errors="replace")
    if activation not in ACTIVATIONS:
        raise FormatError(f"{path}: unknown activation {activation!r}", field="activation")
    stride_d = r.u64("stride")
    n_layers = r.u64("layer_count")
    if not 1 <= n_layers <= 1024:
        raise FormatError(f"{path}: implausible layer count {n_layers}", field="layer_count")
    widths = np.frombuffer(r.take(8 * (n_layers + 1), "widths"), dtype="<u8").astype(int).tolist()
    if widths[0] != widths[-1] or min(widths) < 1:
        raise FormatError(f"{path}: invalid widths {widths}", field="widths")
    weights, biases = [], []
    for k in range(n_layers):
        fi, fo = widths[k], widths[k + 1]
        weights.append(np.frombuffer(r.take(8 * fi * fo, f"W{k}"), dtype="<f8").reshape(fi, fo).astype(np.float64))
        biases.append(np.frombuffer(r.take(8 * fo, f"b{k}"), dtype="<f8").astype(np.float64))
    if r.pos != len(r.raw):
        raise FormatError(f"{path}: {len(r.raw) - r.pos} trailing bytes", field="trailer")
    return ResNetStepper(widths, weights, biases, activation, int(stride_d), dt_unit)

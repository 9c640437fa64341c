"""Seeded sampling and error metrics shared by the whole package."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError

# Guards the per-step normalisation when the true state is exactly zero.
NORM_FLOOR = 1e-30


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Return a counter-based (Philox) generator for ``seed``.

    Extra integer ``keys`` derive an independent stream, e.g. one per
    trajectory or per hierarchy level, so parallel work never shares state.
    """
    if seed < 0 or any(k < 0 for k in keys):
        raise InvalidArgumentError("seed and stream keys must be non-negative")
    ss = np.random.SeedSequence([int(seed), *map(int, keys)])
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministic 63-bit child seed of ``seed`` for the stream ``keys``."""
    ss = np.random.SeedSequence([int(seed), *map(int, keys)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


@dataclass
class StateBatch:
    """Rank-3 block of states, shape (batch, time, state), with its time stride."""

    data: np.ndarray
    dt: float

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise InvalidArgumentError(f"StateBatch needs a non-empty rank-3 array, got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise InvalidArgumentError("StateBatch entries must be finite")

    @property
    def shape(self):
        return self.data.shape

    def initial_states(self) -> np.ndarray:
        return self.data[:, 0, :]


def _as_box(box) -> np.ndarray:
    box = np.asarray(box, dtype=np.float64)
    if box.ndim != 2 or box.shape[1] != 2:
        raise InvalidArgumentError(f"box must be a sequence of [low, high] pairs, got shape {box.shape}")
    if np.any(box[:, 0] > box[:, 1]):
        raise InvalidArgumentError(f"inverted bounds in box {box.tolist()}")
    return box


def sample_uniform_box(rng: np.random.Generator, box, count: int, dt: float = 0.01) -> StateBatch:
    """Draw ``count`` states uniformly from an axis-aligned box.

    A degenerate dimension (``low == high``) returns that value exactly.
    """
    if count < 1:
        raise InvalidArgumentError("count must be at least 1")
    box = _as_box(box)
    low, high = box[:, 0], box[:, 1]
    u = rng.random((count, box.shape[0]))
    x = low + u * (high - low)
    x = np.where(high == low, low, x)
    return StateBatch(x[:, None, :], dt)


def _check_pair(pred, truth):
    # C order fixes numpy's summation order, so scores do not depend on memory layout
    pred = np.ascontiguousarray(pred.data if isinstance(pred, StateBatch) else pred, dtype=np.float64)
    truth = np.ascontiguousarray(truth.data if isinstance(truth, StateBatch) else truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise InvalidArgumentError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    return pred, truth


def relative_mse(pred, truth) -> float:
    """Mean over trajectories and time of ``|pred - truth|^2 / max(|truth|^2, 1e-30)``.

    Norms are taken over the last (state) axis.
    """
    pred, truth = _check_pair(pred, truth)
    err = np.sum((pred - truth) ** 2, axis=-1)
    ref = np.maximum(np.sum(truth**2, axis=-1), NORM_FLOOR)
    return float(np.mean(err / ref))


def plain_mse(pred, truth) -> float:
    """Unnormalised mean squared error over every entry."""
    pred, truth = _check_pair(pred, truth)
    return float(np.mean((pred - truth) ** 2))

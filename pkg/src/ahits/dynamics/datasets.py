"""Trajectory datasets: generation, dyadic subsampling, noise, and file I/O."""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from ..errors import FormatError, InvalidArgumentError
from ..numcore import make_rng
from .integrators import integrate
from .systems import SystemSpec, sample_initial_states

UNIT_DT = 0.01
SPLITS = ("train", "validation", "test")

# Internal substeps for the stiff PDEs; ODE ground truth uses the unit step.
_SUBSTEPS = {"fhn": 10, "ks": 10}

DS_MAGIC = b"AHTS-DS\x00"
DS_VERSION = 1
_DS_HEAD = struct.Struct("<8sQ3QQdd")


@dataclass
class TrajectoryDataset:
    trajectories: np.ndarray  # (p, T, n)
    dt: float
    system: str | None = None
    noise_pct: float = 0.0
    split: str = "train"
    seed: int = 0

    def __post_init__(self):
        self.trajectories = np.ascontiguousarray(self.trajectories, dtype=np.float64)
        if self.trajectories.ndim != 3:
            raise InvalidArgumentError(f"trajectories must be rank 3, got {self.trajectories.shape}")

    @property
    def shape(self):
        return self.trajectories.shape

    @property
    def n_steps(self) -> int:
        return self.trajectories.shape[1] - 1

    def pairs(self):
        """One-step (input, target) pairs flattened over trajectories and time."""
        x = self.trajectories
        n = x.shape[-1]
        return x[:, :-1, :].reshape(-1, n), x[:, 1:, :].reshape(-1, n)


def _integrate_chunked(system, x0, n_steps, substeps, threads):
    if threads <= 1 or len(x0) < 2:
        return integrate(system, x0, UNIT_DT, n_steps, substeps)
    chunks = np.array_split(np.arange(len(x0)), min(threads, len(x0)))
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(lambda idx: integrate(system, x0[idx], UNIT_DT, n_steps, substeps), chunks))
    return np.concatenate(parts, axis=0)


def generate_dataset(system: SystemSpec, counts, box=None, t_f: float = 51.2, seed: int = 0,
                     threads: int = 1) -> dict[str, TrajectoryDataset]:
    """Integrate train/validation/test trajectories at the unit step 0.01 s.

    For ODE systems and ``fhn`` each split gets ``counts[i]`` initial states
    drawn from its own seeded stream. For ``ks`` a single trajectory of
    ``t_f`` seconds is integrated and cut into three disjoint contiguous
    segments whose lengths are proportional to ``counts``.
    """
    if len(counts) != 3 or any(c < 1 for c in counts):
        raise InvalidArgumentError("counts must be three positive integers (train, validation, test)")
    n_steps = int(round(t_f / UNIT_DT))
    if n_steps < 0 or abs(n_steps * UNIT_DT - t_f) > 1e-9 * max(1.0, t_f):
        raise InvalidArgumentError(f"t_f={t_f} is not a non-negative multiple of {UNIT_DT}")
    substeps = _SUBSTEPS.get(system.name, 1)

    if system.name == "ks":
        u0 = sample_initial_states(system, make_rng(seed, 0), 1, box)
        full = integrate(system, u0, UNIT_DT, n_steps, substeps)[0]
        bounds = _segment_bounds(n_steps + 1, counts)
        return {
            name: TrajectoryDataset(full[a:b][None], UNIT_DT, system.name, 0.0, name, seed)
            for name, (a, b) in zip(SPLITS, bounds)
        }

    out = {}
    for i, (name, count) in enumerate(zip(SPLITS, counts)):
        x0 = sample_initial_states(system, make_rng(seed, i), count, box)
        traj = _integrate_chunked(system, x0, n_steps, substeps, threads)
        out[name] = TrajectoryDataset(traj, UNIT_DT, system.name, 0.0, name, seed)
    return out


def _segment_bounds(total: int, weights):
    w = np.asarray(weights, dtype=float)
    if total < 3:
        raise InvalidArgumentError("ks trajectory too short to split three ways")
    cuts = np.floor(np.cumsum(w) / w.sum() * total).astype(int)
    cuts[-1] = total
    starts = np.concatenate([[0], cuts[:-1]])
    if np.any(cuts - starts < 1):
        raise InvalidArgumentError("ks split produced an empty segment")
    return list(zip(starts.tolist(), cuts.tolist()))


def subsample_dyadic(ds: TrajectoryDataset, d: int, all_phases: bool = False) -> TrajectoryDataset:
    """Keep time indices 0, 2^d, 2*2^d, ...; the stride grows by 2^d.

    With ``all_phases`` every start offset 0..2^d-1 contributes its own
    subsampled copy (cut to a common length), so a coarse stride sees as many
    one-step pairs as the unit-step data allows.
    """
    if d < 0:
        raise InvalidArgumentError("d must be non-negative")
    stride = 2**d
    t = ds.shape[1]
    if d > 0 and stride >= t:
        raise InvalidArgumentError(f"stride 2^{d} does not fit a trajectory of {t} points")
    if not all_phases or d == 0:
        return replace(ds, trajectories=ds.trajectories[:, ::stride, :].copy(), dt=ds.dt * stride)
    length = (t - stride) // stride + 1
    phases = [ds.trajectories[:, r: r + (length - 1) * stride + 1: stride, :] for r in range(stride)]
    return replace(ds, trajectories=np.concatenate(phases, axis=0), dt=ds.dt * stride)


def add_noise(ds: TrajectoryDataset, pct: float, rng: np.random.Generator) -> TrajectoryDataset:
    """Add zero-mean Gaussian noise whose variance is ``pct`` percent of each
    component's temporal variance averaged over trajectories."""
    if pct < 0:
        raise InvalidArgumentError("noise percentage must be non-negative")
    if pct == 0:
        return replace(ds, trajectories=ds.trajectories.copy())
    x = ds.trajectories
    comp_var = np.mean(np.var(x, axis=1), axis=0)  # (n,)
    std = np.sqrt(comp_var * pct / 100.0)
    noise = rng.standard_normal(x.shape) * std
    return replace(ds, trajectories=x + noise, noise_pct=float(pct))


def write_dataset(ds: TrajectoryDataset, path) -> Path:
    path = Path(path)
    p, t, n = ds.shape
    data = np.ascontiguousarray(ds.trajectories, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_DS_HEAD.pack(DS_MAGIC, DS_VERSION, p, t, n, int(ds.seed), float(ds.dt), float(ds.noise_pct)))
        fh.write(data.tobytes())
    return path


def read_dataset(path, system: str | None = None, split: str | None = None) -> TrajectoryDataset:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _DS_HEAD.size:
        raise FormatError(f"{path}: truncated header", field="header")
    magic, version, p, t, n, seed, dt, noise = _DS_HEAD.unpack_from(raw)
    if magic != DS_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}", field="magic")
    if version != DS_VERSION:
        raise FormatError(f"{path}: unsupported version {version}", field="version")
    expected = p * t * n * 8
    if len(raw) - _DS_HEAD.size != expected:
        raise FormatError(f"{path}: payload holds {len(raw) - _DS_HEAD.size} bytes, shape ({p},{t},{n}) needs {expected}",
                          field="shape")
    data = np.frombuffer(raw, dtype="<f8", offset=_DS_HEAD.size).reshape(p, t, n).astype(np.float64)
    if split is None:
        split = path.stem if path.stem in SPLITS else "train"
    return TrajectoryDataset(data, dt, system, noise, split, seed)

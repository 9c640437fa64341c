"""Dyadic stepper hierarchies and the fixed-step HiTS baseline.

Level ``d`` of a hierarchy advances the state by ``2**d`` unit steps. The
baseline couples a contiguous range of levels ``[lower, upper]``: the coarsest
level rolls out first and each finer level fills the gaps between the states
produced so far, all gaps of one level evaluated as a single batch.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .dynamics.datasets import TrajectoryDataset, subsample_dyadic
from .errors import ArtifactNotFoundError, DivergenceError, InvalidArgumentError
from .interp import to_unit_grid
from .nnts import (
    ResNetStepper,
    TrainConfig,
    init_stepper,
    read_checkpoint,
    rollout,
    train_stepper,
    write_checkpoint,
)
from .numcore import derive_seed, make_rng, plain_mse, relative_mse

log = logging.getLogger(__name__)


@dataclass
class StepperHierarchy:
    models: list[ResNetStepper]
    dt_unit: float = 0.01

    def __post_init__(self):
        if not self.models:
            raise InvalidArgumentError("a hierarchy needs at least one model")
        for d, model in enumerate(self.models):
            if model.stride_d != d:
                raise InvalidArgumentError(f"model at position {d} has stride exponent {model.stride_d}")
            if model.state_dim != self.models[0].state_dim:
                raise InvalidArgumentError("all models must share the state dimension")

    @property
    def m(self) -> int:
        return len(self.models) - 1

    @property
    def state_dim(self) -> int:
        return self.models[0].state_dim

    def strides(self) -> list[int]:
        return [2**d for d in range(len(self.models))]

    def __len__(self):
        return len(self.models)

    def __getitem__(self, d) -> ResNetStepper:
        return self.models[d]


@dataclass(frozen=True)
class HitsSelection:
    lower: int
    upper: int

    def __post_init__(self):
        if not 0 <= self.lower <= self.upper:
            raise InvalidArgumentError(f"invalid selection ({self.lower}, {self.upper})")

    @property
    def size(self) -> int:
        return self.upper - self.lower + 1

    def levels(self) -> range:
        return range(self.lower, self.upper + 1)


def level_datasets(train: TrajectoryDataset, val: TrajectoryDataset, m: int, all_phases: bool = True):
    """Per-level (train, validation) pairs subsampled from unit-step data."""
    return [(subsample_dyadic(train, d, all_phases), subsample_dyadic(val, d, all_phases)) for d in range(m + 1)]


def _level_widths(widths, d):
    return list(widths[d]) if isinstance(widths[0], (list, tuple)) else list(widths)


def _train_level(args):
    d, train, val, widths, activation, cfg, dt_unit = args
    level_cfg = TrainConfig(**{**cfg.__dict__, "seed": derive_seed(cfg.seed, d)})
    with threadpool_limits(1):
        model = init_stepper(widths, activation, d, make_rng(level_cfg.seed, 1), dt_unit)
        try:
            model, hist = train_stepper(model, train, val, level_cfg)
        except DivergenceError as exc:
            raise DivergenceError(f"level d={d}: {exc}", where=(d, exc.where)) from exc
    return d, model, hist


def train_hierarchy(datasets, widths, cfg: TrainConfig, activation="relu", dt_unit=0.01, workers=1,
                    levels=None):
    """Train one stepper per level, each from its own derived seed.

    ``datasets[d]`` is the (train, validation) pair for level ``d``. ``widths``
    is one architecture for every level or a list with one per level. Models
    train with single-threaded BLAS, so results do not depend on ``workers``
    or on the order in which levels finish. ``levels`` restricts training to a
    subset (the result is then a dict rather than a hierarchy).

    Returns ``(hierarchy_or_dict, histories)``.
    """
    todo = list(range(len(datasets))) if levels is None else list(levels)
    jobs = [(d, datasets[d][0], datasets[d][1], _level_widths(widths, d), activation, cfg, dt_unit) for d in todo]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_train_level, jobs))
    else:
        results = [_train_level(job) for job in jobs]
    models = {d: model for d, model, _ in results}
    hists = {d: hist for d, _, hist in results}
    for d in todo:
        log.info("level %d: best val loss %.3e at epoch %d", d, hists[d].best_val_loss, hists[d].best_epoch)
    if levels is not None:
        return models, hists
    return StepperHierarchy([models[d] for d in range(len(datasets))], dt_unit), hists


def hits_vectorized_predict(h: StepperHierarchy, sel: HitsSelection, x0, horizon: int) -> np.ndarray:
    """Coupled prediction on the grid of the finest selected level.

    Returns (B, floor(horizon / 2**lower) + 1, n); node ``j`` sits at unit
    offset ``j * 2**lower``.
    """
    if sel.upper > h.m:
        raise InvalidArgumentError(f"selection upper bound {sel.upper} exceeds hierarchy depth {h.m}")
    if horizon < 0:
        raise InvalidArgumentError("horizon must be non-negative")
    x0 = np.asarray(x0, dtype=np.float64)
    b, n = x0.shape
    coarse = h[sel.upper]
    try:
        grid = rollout(coarse, x0, horizon // coarse.stride)
    except DivergenceError as exc:
        raise DivergenceError(f"model {sel.upper}: {exc}", where=sel.upper) from exc
    stride = coarse.stride
    for d in range(sel.upper - 1, sel.lower - 1, -1):
        model = h[d]
        ratio = stride // model.stride
        k = grid.shape[1]
        seeds = grid.reshape(b * k, n)
        try:
            fill = rollout(model, seeds, ratio - 1).reshape(b, k, ratio, n)
        except DivergenceError as exc:
            raise DivergenceError(f"model {d}: {exc}", where=d) from exc
        stride = model.stride
        grid = fill.reshape(b, k * ratio, n)[:, : horizon // stride + 1]
    return grid


def hits_unit_prediction(h: StepperHierarchy, sel: HitsSelection, x0, horizon: int) -> np.ndarray:
    """Baseline prediction interpolated onto the unit grid it covers."""
    nodes = hits_vectorized_predict(h, sel, x0, horizon)
    offsets = np.arange(nodes.shape[1]) * 2**sel.lower
    return to_unit_grid(offsets, nodes)


SELECTION_METRICS = {"plain": plain_mse, "relative": relative_mse}


def score_selection(h, sel, x0, truth, metric="relative", horizon=None) -> float:
    """Error of the interpolated coupled prediction against ``truth`` (B, T, n).

    ``horizon`` defaults to the length of ``truth``; a longer horizon is
    predicted but scored only where truth exists. Diverging ranges score inf.
    """
    horizon = truth.shape[1] - 1 if horizon is None else horizon
    try:
        pred = hits_unit_prediction(h, sel, x0, horizon)
    except DivergenceError:
        return math.inf
    k = min(pred.shape[1], truth.shape[1])
    score = SELECTION_METRICS[metric](pred[:, :k], truth[:, :k])
    return score if math.isfinite(score) else math.inf


def best_selection(scored):
    """Minimum score; ties go to fewer models, then to the larger lower bound."""
    return min(scored, key=lambda item: (item[1], item[0].size, -item[0].lower))[0]


def hits_cross_validate(h: StepperHierarchy, val: TrajectoryDataset, horizon: int | None = None,
                        candidates=None, workers=1, metric="relative") -> HitsSelection:
    """Exhaustive search over contiguous level ranges scored on validation data.

    Each range predicts from the validation initial states over the horizon
    and is scored on the unit grid after interpolation. ``metric`` is
    ``"plain"`` (mean squared error) or ``"relative"``.
    """
    if metric not in SELECTION_METRICS:
        raise InvalidArgumentError(f"unknown selection metric {metric!r}")
    if h is None or len(h) == 0:
        raise InvalidArgumentError("empty hierarchy")
    truth = val.trajectories if isinstance(val, TrajectoryDataset) else np.asarray(val)
    if horizon is not None:
        truth = truth[:, : horizon + 1]
    x0 = truth[:, 0]
    if candidates is None:
        candidates = [HitsSelection(u, v) for u in range(len(h)) for v in range(u, len(h))]

    def job(sel):
        return sel, score_selection(h, sel, x0, truth, metric)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scored = list(pool.map(job, candidates))
    else:
        scored = [job(sel) for sel in candidates]
    return best_selection(scored)


def save_hierarchy(h: StepperHierarchy, directory, meta=None) -> Path:
    """Write one checkpoint per level plus ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for model in h.models:
        name = f"nnts_{model.stride_d:02d}.ahck"
        write_checkpoint(model, directory / name)
        files.append(name)
    manifest = {
        "format": "AHTS-HIER v1",
        "m": h.m,
        "dt_unit": h.dt_unit,
        "architecture": [model.widths for model in h.models],
        "activation": h.models[0].activation,
        "checkpoints": files,
        **(meta or {}),
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return directory


def load_hierarchy(directory) -> StepperHierarchy:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise ArtifactNotFoundError(f"no hierarchy manifest in {directory}")
    manifest = json.loads(manifest_path.read_text())
    models = []
    for name in manifest["checkpoints"]:
        path = directory / name
        if not path.exists():
            raise ArtifactNotFoundError(f"missing checkpoint {path}")
        models.append(read_checkpoint(path, manifest["dt_unit"]))
    return StepperHierarchy(models, manifest["dt_unit"])

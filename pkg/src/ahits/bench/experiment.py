"""Experiment pipeline: data, hierarchy, schedule, comparison, noise sweep.

Each stage writes its artifacts under the run directory and records a hash of
the config fields it depends on in ``manifest.json``. A rerun with an
unchanged hash loads the stored artifacts instead of recomputing them.
"""

from __future__ import annotations

import json
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from ..adaptive import (
    WindowPlan,
    ahits_predict,
    estimate_adaptive_steps,
    plan_windows,
    shortlist_models_per_window,
)
from ..dynamics import SPLITS, TrajectoryDataset, add_noise, generate_dataset, read_dataset, write_dataset
from ..errors import AhitsError, ArtifactNotFoundError
from ..hierarchy import (
    HitsSelection,
    StepperHierarchy,
    hits_cross_validate,
    hits_unit_prediction,
    level_datasets,
    load_hierarchy,
    save_hierarchy,
    train_hierarchy,
)
from ..interp import to_unit_grid
from ..nnts import rollout
from ..numcore import derive_seed, make_rng, plain_mse, relative_mse
from .config import ExperimentConfig
from .report import ComparisonReport, ReportRow

log = logging.getLogger(__name__)

_DATA_FIELDS = ("system", "system_params", "counts", "box", "t_f", "dt", "seed")
_TRAIN_FIELDS = _DATA_FIELDS + ("m", "widths", "activation", "train", "all_phases")
_SCHEDULE_FIELDS = _TRAIN_FIELDS + ("epsilon", "selection_metric", "window_seeding", "window_pool")
TIMING_BOUNDARY = "wall_seconds covers prediction from test initial states only; training and selection excluded"


@contextmanager
def stage(name: str):
    """Prefix errors raised inside a pipeline stage with the stage name."""
    try:
        yield
    except (AhitsError, OSError) as exc:
        if not getattr(exc, "stage", None):
            exc.stage = name
            if exc.args:
                exc.args = (f"[{name}] {exc.args[0]}", *exc.args[1:])
        raise


def stage_hash(cfg: ExperimentConfig, keys, extra=None) -> str:
    doc = cfg.to_dict()
    drop = tuple(k for k in doc if k not in keys)
    digest = cfg.config_hash(drop=drop)
    return digest if extra is None else f"{digest}:{extra}"


@dataclass
class RunPaths:
    root: Path

    def __post_init__(self):
        self.root = Path(self.root)

    @property
    def manifest(self) -> Path:
        return self.root / "manifest.json"

    @property
    def data(self) -> Path:
        return self.root / "data"

    def split(self, name: str, noise_pct: float = 0.0) -> Path:
        suffix = "" if noise_pct == 0 else f"_noise{noise_pct:g}"
        return self.data / f"{name}{suffix}.ahds"

    def hierarchy(self, noise_pct: float = 0.0) -> Path:
        return self.root / ("hierarchy" if noise_pct == 0 else f"hierarchy_noise{noise_pct:g}")

    def plan(self, noise_pct: float = 0.0) -> Path:
        return self.root / ("plan.json" if noise_pct == 0 else f"plan_noise{noise_pct:g}.json")

    @property
    def reports(self) -> Path:
        return self.root / "reports"


def _read_manifest(paths: RunPaths) -> dict:
    if paths.manifest.exists():
        return json.loads(paths.manifest.read_text())
    return {"stages": {}}


def _record(paths: RunPaths, cfg: ExperimentConfig, key: str, digest: str, extra=None):
    doc = _read_manifest(paths)
    doc["config"] = cfg.to_dict()
    doc["config_hash"] = cfg.config_hash()
    doc.setdefault("stages", {})[key] = {"hash": digest, **(extra or {})}
    paths.manifest.write_text(json.dumps(doc, indent=2, sort_keys=True))


def _fresh(paths: RunPaths, key: str, digest: str, *artifacts: Path) -> bool:
    entry = _read_manifest(paths).get("stages", {}).get(key)
    return bool(entry) and entry["hash"] == digest and all(p.exists() for p in artifacts)


def _train_config(cfg: ExperimentConfig):
    return replace(cfg.train, seed=derive_seed(cfg.seed, 1))


def generate_stage(cfg: ExperimentConfig, paths: RunPaths, force: bool = False) -> dict[str, TrajectoryDataset]:
    digest = stage_hash(cfg, _DATA_FIELDS)
    files = [paths.split(s) for s in SPLITS]
    with stage("generate"):
        if not force and _fresh(paths, "generate", digest, *files):
            return {s: read_dataset(p, cfg.system, s) for s, p in zip(SPLITS, files)}
        paths.data.mkdir(parents=True, exist_ok=True)
        ds = generate_dataset(cfg.system_spec(), cfg.counts, cfg.box, cfg.t_f, cfg.seed, cfg.threads)
        for s, p in zip(SPLITS, files):
            write_dataset(ds[s], p)
        _record(paths, cfg, "generate", digest, {"shapes": {s: list(ds[s].shape) for s in SPLITS}})
    return ds


def noisy_splits(cfg: ExperimentConfig, ds: dict, pct: float) -> tuple[TrajectoryDataset, TrajectoryDataset]:
    """Train and validation splits with measurement noise; the test split stays clean."""
    code = int(round(pct * 1_000_000))
    return tuple(add_noise(ds[s], pct, make_rng(cfg.seed, 2, i, code)) for i, s in enumerate(SPLITS[:2]))


def train_stage(cfg: ExperimentConfig, paths: RunPaths, ds: dict, noise_pct: float = 0.0,
                force: bool = False) -> StepperHierarchy:
    key = "train" if noise_pct == 0 else f"train_noise{noise_pct:g}"
    digest = stage_hash(cfg, _TRAIN_FIELDS, None if noise_pct == 0 else f"noise={noise_pct!r}")
    hdir = paths.hierarchy(noise_pct)
    with stage(key):
        if not force and _fresh(paths, key, digest, hdir / "manifest.json"):
            return load_hierarchy(hdir)
        train, val = (ds["train"], ds["validation"]) if noise_pct == 0 else noisy_splits(cfg, ds, noise_pct)
        levels = level_datasets(train, val, cfg.m, cfg.all_phases)
        widths = [cfg.architecture(d) for d in range(cfg.m + 1)]
        tcfg = _train_config(cfg)
        h, hists = train_hierarchy(levels, widths, tcfg, cfg.activation, cfg.dt, cfg.threads)
        seeds = {str(d): derive_seed(tcfg.seed, d) for d in range(cfg.m + 1)}
        save_hierarchy(h, hdir, {"stage_hash": digest, "noise_pct": noise_pct, "train_seeds": seeds})
        best = {str(d): [hists[d].best_epoch, hists[d].best_val_loss] for d in sorted(hists)}
        _record(paths, cfg, key, digest, {"best_epoch_and_val_loss": best})
    return h


def _eval_horizon(cfg: ExperimentConfig, ds: dict) -> int:
    return min(cfg.horizon, ds["validation"].n_steps, ds["test"].n_steps)


def schedule_stage(cfg: ExperimentConfig, paths: RunPaths, h: StepperHierarchy, ds: dict,
                   noise_pct: float = 0.0, force: bool = False) -> tuple[WindowPlan, HitsSelection]:
    """Adaptive schedule, shortlisted window plan, and the HiTS cross-validated range."""
    key = "schedule" if noise_pct == 0 else f"schedule_noise{noise_pct:g}"
    digest = stage_hash(cfg, _SCHEDULE_FIELDS, None if noise_pct == 0 else f"noise={noise_pct!r}")
    path = paths.plan(noise_pct)
    horizon = _eval_horizon(cfg, ds)
    with stage(key):
        if not force and _fresh(paths, key, digest, path):
            entry = _read_manifest(paths)["stages"][key]
            return WindowPlan.load(path), HitsSelection(*entry["hits_selection"])
        val = ds["validation"] if noise_pct == 0 else noisy_splits(cfg, ds, noise_pct)[1]
        sel = hits_cross_validate(h, val, horizon, workers=cfg.threads, metric=cfg.selection_metric)
        sched = estimate_adaptive_steps(h, val.trajectories[:, 0], cfg.epsilon, horizon)
        plan = shortlist_models_per_window(h, plan_windows(sched), val, cfg.threads, cfg.selection_metric,
                                           cfg.window_seeding, cfg.window_pool)
        plan.save(path)
        _record(paths, cfg, key, digest, {"hits_selection": [sel.lower, sel.upper], "steps": len(sched)})
    return plan, sel


@dataclass
class ExperimentRun:
    cfg: ExperimentConfig
    paths: RunPaths
    datasets: dict
    hierarchy: StepperHierarchy
    plan: WindowPlan | None = None
    selection: HitsSelection | None = None
    timings: dict = field(default_factory=dict)


def run_experiment(cfg: ExperimentConfig, out_dir=None, force: bool = False, schedule: bool = True) -> ExperimentRun:
    """Generate data, train the hierarchy, and (optionally) build the schedule.

    Stages whose inputs are unchanged since the last run are loaded from disk.
    """
    paths = RunPaths(out_dir if out_dir is not None else cfg.out_dir)
    paths.root.mkdir(parents=True, exist_ok=True)
    timings = {}
    t0 = time.perf_counter()
    ds = generate_stage(cfg, paths, force)
    timings["generate"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    h = train_stage(cfg, paths, ds, force=force)
    timings["train"] = time.perf_counter() - t0
    run = ExperimentRun(cfg, paths, ds, h, timings=timings)
    if schedule:
        t0 = time.perf_counter()
        run.plan, run.selection = schedule_stage(cfg, paths, h, ds, force=force)
        timings["schedule"] = time.perf_counter() - t0
    return run


def nnts_unit_prediction(model, x0, horizon: int) -> np.ndarray:
    """Single-model rollout interpolated onto the unit grid it covers."""
    nodes = rollout(model, x0, horizon // model.stride)
    return to_unit_grid(np.arange(nodes.shape[1]) * model.stride, nodes)


def _scored_row(method, steps, wall, pred, truth, system, noise_pct) -> ReportRow:
    k = min(pred.shape[1], truth.shape[1])
    return ReportRow(method, steps, wall, relative_mse(pred[:, :k], truth[:, :k]),
                     plain_mse(pred[:, :k], truth[:, :k]), system, noise_pct)


def individual_errors(models, test: TrajectoryDataset, horizon: int | None = None) -> dict[int, float]:
    """Relative MSE of each model's interpolated rollout on the test split."""
    truth = test.trajectories if horizon is None else test.trajectories[:, : horizon + 1]
    horizon = truth.shape[1] - 1
    items = models.items() if isinstance(models, dict) else enumerate(models)
    out = {}
    for d, model in items:
        pred = nnts_unit_prediction(model, truth[:, 0], horizon)
        k = pred.shape[1]
        out[d] = relative_mse(pred, truth[:, :k])
    return out


def compare_methods(cfg: ExperimentConfig, h: StepperHierarchy, ds: dict, plan: WindowPlan,
                    selection: HitsSelection, noise_pct: float = 0.0) -> ComparisonReport:
    """Score every single model, the HiTS baseline and AHiTS on the clean test split."""
    if h is None:
        raise ArtifactNotFoundError("no trained hierarchy")
    horizon = _eval_horizon(cfg, ds)
    truth = ds["test"].trajectories[:, : horizon + 1]
    x0 = truth[:, 0]
    rows = []
    with stage("compare"):
        for model in h.models:
            t0 = time.perf_counter()
            pred = nnts_unit_prediction(model, x0, horizon)
            wall = time.perf_counter() - t0
            rows.append(_scored_row(f"NNTS {model.stride_d}", horizon // model.stride, wall, pred, truth,
                                    cfg.system, noise_pct))
        t0 = time.perf_counter()
        pred = hits_unit_prediction(h, selection, x0, horizon)
        wall = time.perf_counter() - t0
        rows.append(_scored_row("HiTS", horizon // 2**selection.lower, wall, pred, truth, cfg.system, noise_pct))
        t0 = time.perf_counter()
        res = ahits_predict(h, plan, x0, horizon)
        wall = time.perf_counter() - t0
        rows.append(_scored_row("AHiTS", len(plan.steps) or res.steps, wall, res.states, truth,
                                cfg.system, noise_pct))
    meta = {
        "seed": cfg.seed,
        "config_hash": cfg.config_hash(),
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "system": cfg.system,
        "scale": cfg.scale,
        "horizon": horizon,
        "epsilon": cfg.epsilon,
        "hits_selection": [selection.lower, selection.upper],
        "ahits_windows": [[w.start, w.stride_d, w.count, list(w.shortlist)] for w in plan.windows],
        "timing_boundary": TIMING_BOUNDARY,
    }
    return ComparisonReport(rows, meta)


def run_and_compare(cfg: ExperimentConfig, out_dir=None, force: bool = False) -> tuple[ExperimentRun, ComparisonReport]:
    run = run_experiment(cfg, out_dir, force)
    report = compare_methods(cfg, run.hierarchy, run.datasets, run.plan, run.selection)
    return run, report


def noise_sweep(cfg: ExperimentConfig, out_dir=None, pcts=None, force: bool = False) -> list[ComparisonReport]:
    """Retrain on noisy train/validation splits and compare on the clean test split.

    A level of 0 reuses the clean pipeline, so it reproduces ``compare_methods``.
    """
    paths = RunPaths(out_dir if out_dir is not None else cfg.out_dir)
    paths.root.mkdir(parents=True, exist_ok=True)
    ds = generate_stage(cfg, paths, force)
    reports = []
    for pct in (cfg.noise_pcts if pcts is None else pcts):
        pct = float(pct)
        h = train_stage(cfg, paths, ds, pct, force)
        plan, sel = schedule_stage(cfg, paths, h, ds, pct, force)
        report = compare_methods(cfg, h, ds, plan, sel, pct)
        report.metadata["noise_pct"] = pct
        reports.append(report)
    return reports

"""Adaptive hierarchical time stepping (AHiTS).

Three stages on top of a trained :class:`StepperHierarchy`:

1. :func:`estimate_adaptive_steps` walks a validation batch forward, at each
   node taking the coarsest level whose one-step mean squared state change is
   below the tolerance. The resulting stride sequence is global and reused for
   every test trajectory.
2. :func:`plan_windows` groups runs of equal strides into windows, and
   :func:`shortlist_models_per_window` picks, per window, the contiguous
   level range that best reproduces validation truth when coupled.
3. :func:`ahits_predict` runs the windows in sequence on test initial states
   and linearly interpolates between the recorded nodes.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .dynamics.datasets import TrajectoryDataset
from .errors import DivergenceError, InvalidArgumentError
from .hierarchy import (
    HitsSelection,
    StepperHierarchy,
    best_selection,
    hits_vectorized_predict,
    SELECTION_METRICS,
    score_selection,
)
from .interp import linear_interpolate
from .nnts import forward_step
from .numcore import StateBatch

__all__ = [
    "AdaptiveSchedule", "Window", "WindowPlan", "ahits_predict", "estimate_adaptive_steps",
    "full_horizon_plan", "linear_interpolate", "plan_windows", "shortlist_models_per_window", "window_candidates",
    "window_nodes",
    "POOLS", "SEEDINGS",
]


@dataclass
class AdaptiveSchedule:
    steps: list[int]  # stride exponents in time order
    epsilon: float
    horizon: int

    @property
    def cumulative(self) -> list[int]:
        """Unit-step offset of every node, starting with 0."""
        out = [0]
        for d in self.steps:
            out.append(out[-1] + 2**d)
        return out

    @property
    def span(self) -> int:
        return self.cumulative[-1]

    def __len__(self):
        return len(self.steps)


def _initial_batch(val_x0) -> np.ndarray:
    if isinstance(val_x0, StateBatch):
        return val_x0.data[:, 0, :]
    if isinstance(val_x0, TrajectoryDataset):
        return val_x0.trajectories[:, 0, :]
    x = np.asarray(val_x0, dtype=np.float64)
    return x[:, 0, :] if x.ndim == 3 else x


def estimate_adaptive_steps(h: StepperHierarchy, val_x0, epsilon: float, horizon: int) -> AdaptiveSchedule:
    """Tolerance-driven stride sequence covering ``horizon`` unit steps.

    Levels are tried coarsest first; a level is accepted when the mean over
    batch and components of ``(x_next - x)**2`` is below ``epsilon``. If none
    passes, the finest level is used. The accepted prediction becomes the next
    state. The final stride may overrun the horizon.
    """
    if h is None or len(h) == 0:
        raise InvalidArgumentError("empty hierarchy")
    if not epsilon > 0:
        raise InvalidArgumentError("epsilon must be positive")
    if horizon < 1:
        raise InvalidArgumentError("horizon must be at least one unit step")
    y = _initial_batch(val_x0)
    if y.shape[0] < 1:
        raise InvalidArgumentError("validation batch is empty")
    order = sorted(h.models, key=lambda mdl: mdl.stride, reverse=True)
    steps, offset = [], 0
    while offset < horizon:
        for model in order:
            y_next = forward_step(model, y)
            if np.mean((y_next - y) ** 2) < epsilon:
                break
        # falls through with the finest model when nothing qualified
        if not np.all(np.isfinite(y_next)):
            raise DivergenceError(f"non-finite state at schedule offset {offset}", where=offset)
        y = y_next
        steps.append(model.stride_d)
        offset += model.stride
    return AdaptiveSchedule(steps, float(epsilon), int(horizon))


@dataclass
class Window:
    start: int
    stride_d: int
    count: int
    shortlist: tuple[int, ...] = ()

    @property
    def span(self) -> int:
        return self.count * 2**self.stride_d

    @property
    def end(self) -> int:
        return self.start + self.span


@dataclass
class WindowPlan:
    windows: list[Window]
    epsilon: float | None = None
    horizon: int | None = None
    steps: list[int] = field(default_factory=list)

    @property
    def span(self) -> int:
        return self.windows[-1].end if self.windows else 0

    def to_json(self) -> str:
        doc = {
            "format": "AHTS-PLAN v1",
            "epsilon": self.epsilon,
            "horizon": self.horizon,
            "steps": list(self.steps),
            "windows": [{**asdict(w), "shortlist": list(w.shortlist)} for w in self.windows],
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "WindowPlan":
        doc = json.loads(text)
        windows = [Window(w["start"], w["stride_d"], w["count"], tuple(w["shortlist"])) for w in doc["windows"]]
        return cls(windows, doc.get("epsilon"), doc.get("horizon"), doc.get("steps", []))

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_json())
        return path

    @classmethod
    def load(cls, path) -> "WindowPlan":
        return cls.from_json(Path(path).read_text())


def plan_windows(sched: AdaptiveSchedule) -> WindowPlan:
    """Group maximal runs of equal stride into windows."""
    if not sched.steps:
        raise InvalidArgumentError("empty schedule")
    windows, offset = [], 0
    for d in sched.steps:
        if windows and windows[-1].stride_d == d:
            windows[-1].count += 1
        else:
            windows.append(Window(offset, d, 1))
        offset += 2**d
    return WindowPlan(windows, sched.epsilon, sched.horizon, list(sched.steps))


def full_horizon_plan(sched: AdaptiveSchedule) -> WindowPlan:
    """One window over the whole schedule span with every level eligible.

    Shortlisting this plan searches exactly the ranges HiTS cross-validation
    searches, so the adaptive pipeline reduces to the fixed-step baseline.
    """
    return WindowPlan([Window(0, 0, sched.span)], sched.epsilon, sched.horizon, list(sched.steps))


POOLS = ("ranges", "drop_finest", "drop_coarsest")


def window_candidates(h: StepperHierarchy, window: Window, only: bool = False,
                      pool: str = "ranges") -> list[HitsSelection]:
    """Level ranges eligible for ``window``.

    The pool runs from the window's own stride up to the coarsest stride not
    exceeding the window span. ``drop_finest`` keeps the coarsest and drops
    fine members one at a time, ``drop_coarsest`` keeps the window stride and
    drops coarse members, ``ranges`` admits every contiguous range (the union
    of both). A plan made of a single window (``only``) searches every
    contiguous range, exactly as HiTS cross-validation does.
    """
    if pool not in POOLS:
        raise InvalidArgumentError(f"pool must be one of {POOLS}")
    if window.count == 1:
        return [HitsSelection(window.stride_d, window.stride_d)]
    top = min(h.m, int(math.floor(math.log2(window.span))))
    if only:
        return [HitsSelection(a, b) for a in range(window.stride_d, top + 1) for b in range(a, top + 1)]
    if pool == "drop_coarsest":
        return [HitsSelection(window.stride_d, b) for b in range(window.stride_d, top + 1)]
    fine = range(window.stride_d, top + 1)
    if pool == "drop_finest":
        return [HitsSelection(a, top) for a in fine]
    return [HitsSelection(a, b) for a in fine for b in range(a, top + 1)]


def window_nodes(h: StepperHierarchy, sel: HitsSelection, x0, window: Window,
                 complete: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Coupled prediction across one window: (relative offsets, (B, K, n) states).

    Nodes come every ``2**sel.lower`` unit steps. When that stride does not
    divide the span, the remainder is finished with one step from each finer
    level in its binary expansion, coarsest first, so the window ends on its
    boundary. ``complete=False`` stops at the last full stride, as HiTS does.
    """
    nodes = hits_vectorized_predict(h, sel, x0, window.span)
    stride = 2**sel.lower
    offsets = list(stride * np.arange(nodes.shape[1]))
    if not complete:
        return np.asarray(offsets, dtype=np.int64), nodes
    blocks, state = [nodes], nodes[:, -1]
    for d in range(sel.lower - 1, window.stride_d - 1, -1):
        if window.span - offsets[-1] >= 2**d:
            state = forward_step(h[d], state)
            if not np.all(np.isfinite(state)):
                raise DivergenceError(f"model {d}: non-finite state", where=d)
            offsets.append(offsets[-1] + 2**d)
            blocks.append(state[:, None, :])
    return np.asarray(offsets, dtype=np.int64), np.concatenate(blocks, axis=1)


SEEDINGS = ("truth", "chained")


def shortlist_models_per_window(h: StepperHierarchy, plan: WindowPlan, val, workers: int = 1,
                                metric: str = "relative", seeding: str = "truth",
                                pool: str = "ranges") -> WindowPlan:
    """Fill each window's shortlist by scoring candidate ranges on validation data.

    Each candidate predicts across its window and is scored (``metric`` after
    interpolation) against validation truth over the window span. With
    ``seeding="truth"`` (default) every window starts from the true
    validation state at its offset, so windows are independent and can be
    scored in parallel (``workers``). With ``seeding="chained"`` a window
    starts from the previous window's chosen prediction, so the score includes
    the error carried into it and windows are scored in order. ``pool`` picks
    the candidate family, see ``window_candidates``.
    """
    if seeding not in SEEDINGS:
        raise InvalidArgumentError(f"seeding must be one of {SEEDINGS}")
    if pool not in POOLS:
        raise InvalidArgumentError(f"pool must be one of {POOLS}")
    truth = val.trajectories if isinstance(val, TrajectoryDataset) else np.asarray(val, dtype=np.float64)
    available = truth.shape[1] - 1
    only = len(plan.windows) == 1
    for i, w in enumerate(plan.windows):
        if w.start >= available and w.span > 0:
            raise InvalidArgumentError(f"window {i} starts at {w.start}, beyond validation data ({available} steps)")
        if w.end > available and i < len(plan.windows) - 1:
            raise InvalidArgumentError(f"window {i} ends at {w.end}, beyond validation data ({available} steps)")

    def score(sel, w, x0):
        # the final window may overrun the data; it is scored over what exists
        seg = truth[:, w.start: min(w.end, available) + 1]
        if only:
            return score_selection(h, sel, x0, seg, metric, w.span)
        try:
            offsets, nodes = window_nodes(h, sel, x0, w)
        except DivergenceError:
            return math.inf
        pred = linear_interpolate(offsets, nodes, np.arange(seg.shape[1]))
        value = SELECTION_METRICS[metric](pred, seg)
        return value if math.isfinite(value) else math.inf

    def choose(w, x0):
        return best_selection([(sel, score(sel, w, x0)) for sel in window_candidates(h, w, only, pool)])

    if seeding == "chained":
        windows, state = [], truth[:, 0]
        for i, w in enumerate(plan.windows):
            sel = choose(w, state)
            windows.append(replace(w, shortlist=tuple(sel.levels())))
            if i < len(plan.windows) - 1:
                try:
                    state = window_nodes(h, sel, state, w)[1][:, -1]
                except DivergenceError as exc:
                    raise DivergenceError(f"window {i}: {exc}", where=i) from exc
        return replace(plan, windows=windows)

    def job(w):
        return replace(w, shortlist=tuple(choose(w, truth[:, w.start]).levels()))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            windows = list(executor.map(job, plan.windows))
    else:
        windows = [job(w) for w in plan.windows]
    return replace(plan, windows=windows)


@dataclass
class AhitsPrediction:
    states: np.ndarray  # (B, horizon_covered + 1, n) on the unit grid
    node_offsets: np.ndarray  # recorded offsets, may end past the horizon
    node_states: np.ndarray

    @property
    def steps(self) -> int:
        return len(self.node_offsets) - 1


def ahits_predict(h: StepperHierarchy, plan: WindowPlan, x0_test, horizon: int) -> AhitsPrediction:
    """Run the shortlisted windows in sequence and interpolate to the unit grid.

    Each window couples its shortlisted levels starting from the previous
    window's final state. States are recorded at every node of the finest
    shortlisted level plus the remainder steps that close the window (see
    ``window_nodes``); the unit grid in between is linear interpolation.
    """
    if not plan.windows or plan.span < horizon:
        raise InvalidArgumentError(f"plan spans {plan.span} unit steps, horizon is {horizon}")
    if any(not w.shortlist for w in plan.windows):
        raise InvalidArgumentError("every window needs a shortlist; run shortlist_models_per_window first")
    state = np.asarray(x0_test, dtype=np.float64)
    offsets, blocks = [0], [state[:, None, :]]
    complete = len(plan.windows) > 1
    for i, w in enumerate(plan.windows):
        sel = HitsSelection(min(w.shortlist), max(w.shortlist))
        try:
            rel, nodes = window_nodes(h, sel, state, w, complete)
        except DivergenceError as exc:
            raise DivergenceError(f"window {i}: {exc}", where=i) from exc
        offsets.extend(w.start + rel[1:])
        blocks.append(nodes[:, 1:])
        state = nodes[:, -1]
    node_offsets = np.asarray(offsets, dtype=np.int64)
    node_states = np.concatenate(blocks, axis=1)
    last = min(int(node_offsets[-1]), int(horizon))
    unit = linear_interpolate(node_offsets, node_states, np.arange(last + 1))
    return AhitsPrediction(unit, node_offsets, node_states)

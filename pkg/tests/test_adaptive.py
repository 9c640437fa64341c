import json

import numpy as np
from numpy.testing import assert_array_equal
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ahits.adaptive import (
    AdaptiveSchedule,
    Window,
    WindowPlan,
    ahits_predict,
    estimate_adaptive_steps,
    full_horizon_plan,
    plan_windows,
    shortlist_models_per_window,
    window_candidates,
    window_nodes,
)
from ahits.dynamics import TrajectoryDataset, generate_dataset, get_system
from ahits.errors import DivergenceError, InvalidArgumentError
from ahits.hierarchy import (
    HitsSelection,
    StepperHierarchy,
    hits_cross_validate,
    hits_unit_prediction,
    hits_vectorized_predict,
)
from ahits.nnts import forward_step, init_stepper, rollout

from conftest import random_hierarchy, zero_hierarchy


def adder(d, inc):
    model = init_stepper([1, 1], "identity", d, zero=True)
    model.biases[0][:] = inc
    return model


class TestSchedule:
    @pytest.mark.parametrize("horizon, count", [(1024, 1), (2048, 2), (1500, 2), (5120, 5)])
    def test_fixed_point_takes_coarsest(self, horizon, count):
        sched = estimate_adaptive_steps(zero_hierarchy(10), np.zeros((4, 2)), 1e-12, horizon)
        assert sched.steps == [10] * count

    def test_tiny_epsilon_forces_finest(self):
        h = StepperHierarchy([adder(d, 0.1 * 2**d) for d in range(4)])
        sched = estimate_adaptive_steps(h, np.zeros((3, 1)), 1e-9, 50)
        assert sched.steps == [0] * 50 and sched.span == 50

    def test_accepted_state_carries_forward(self):
        # coarse model doubles the state, so its step change x^2 grows as the state is carried
        coarse = init_stepper([1, 1], "identity", 3, zero=True)
        coarse.weights[0][0, 0] = 1.0
        h = StepperHierarchy([adder(0, 0.0), adder(1, 5.0), adder(2, 5.0), coarse])
        sched = estimate_adaptive_steps(h, np.full((1, 1), 0.01), 1e-3, 20)
        # x: 0.01 -> 0.02 -> 0.04, where x^2 = 1.6e-3 fails and the static finest model takes over
        assert sched.steps == [3, 3] + [0] * 4

    def test_cumulative_and_span(self):
        sched = AdaptiveSchedule([3, 3, 1, 0], 1e-3, 19)
        assert sched.cumulative == [0, 8, 16, 18, 19]
        assert sched.span == 19 and len(sched) == 4

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 3000), st.integers(0, 50))
    def test_tiling(self, horizon, seed):
        h = random_hierarchy(6, scale=0.5, seed=seed)
        x0 = np.random.default_rng(seed).uniform(-1, 1, size=(4, 2))
        sched = estimate_adaptive_steps(h, x0, 1e-4, horizon)
        assert horizon <= sched.span < horizon + 2 ** sched.steps[-1]
        assert sched.span - 2 ** sched.steps[-1] < horizon

    def test_monotone_in_epsilon(self):
        h = random_hierarchy(8, scale=0.4, seed=3)
        x0 = np.random.default_rng(0).uniform(-1, 1, size=(16, 2))
        counts = [len(estimate_adaptive_steps(h, x0, eps, 2000)) for eps in np.logspace(-8, 1, 19)]
        assert all(a >= b for a, b in zip(counts, counts[1:]))

    def test_errors(self):
        h = zero_hierarchy(2)
        for eps, horizon in [(0.0, 10), (-1.0, 10), (1e-3, 0)]:
            with pytest.raises(InvalidArgumentError):
                estimate_adaptive_steps(h, np.zeros((1, 2)), eps, horizon)
        with pytest.raises(InvalidArgumentError):
            estimate_adaptive_steps(h, np.zeros((0, 2)), 1e-3, 10)

    def test_divergence_reports_offset(self):
        blow = init_stepper([1, 1], "identity", 0, zero=True)
        blow.weights[0][0, 0] = 1e300
        with pytest.raises(DivergenceError) as info, np.errstate(all="ignore"):
            estimate_adaptive_steps(StepperHierarchy([blow]), np.ones((1, 1)), 1e-3, 10)
        assert info.value.where == 1


class TestWindows:
    def test_grouping(self):
        plan = plan_windows(AdaptiveSchedule([3, 3, 3, 2, 1, 1], 1.0, 30))
        assert [(w.start, w.stride_d, w.count) for w in plan.windows] == [(0, 3, 3), (24, 2, 1), (28, 1, 2)]
        assert plan.span == 32

    def test_single_step(self):
        plan = plan_windows(AdaptiveSchedule([4], 1.0, 16))
        assert [(w.start, w.stride_d, w.count) for w in plan.windows] == [(0, 4, 1)]

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(0, 10), min_size=1, max_size=500))
    def test_prefix_sums(self, steps):
        plan = plan_windows(AdaptiveSchedule(steps, 1.0, 1))
        assert sum(w.count for w in plan.windows) == len(steps)
        offsets = np.concatenate([[0], np.cumsum([2**d for d in steps])])
        starts, i = [], 0
        for w in plan.windows:
            starts.append(w.start)
            assert all(d == w.stride_d for d in steps[i:i + w.count])
            i += w.count
        runs = [0] + [k for k in range(1, len(steps)) if steps[k] != steps[k - 1]]
        assert starts == offsets[runs].tolist()
        assert all(a.stride_d != b.stride_d for a, b in zip(plan.windows, plan.windows[1:]))

    def test_empty_schedule(self):
        with pytest.raises(InvalidArgumentError):
            plan_windows(AdaptiveSchedule([], 1.0, 1))

    def test_json_round_trip(self, tmp_path):
        plan = plan_windows(AdaptiveSchedule([2, 2, 0], 1e-3, 9))
        plan.windows[0].shortlist = (2, 3)
        plan.windows[1].shortlist = (0,)
        back = WindowPlan.load(plan.save(tmp_path / "plan.json"))
        assert back == plan
        assert json.loads(plan.to_json())["format"] == "AHTS-PLAN v1"

    def test_candidate_pool(self):
        h = zero_hierarchy(10)
        assert window_candidates(h, Window(0, 4, 1)) == [HitsSelection(4, 4)]
        w = Window(0, 2, 12)  # span 48, coarsest fitting stride 32
        assert window_candidates(h, w, pool="drop_finest") == [HitsSelection(a, 5) for a in range(2, 6)]
        assert window_candidates(h, w, pool="drop_coarsest") == [HitsSelection(2, b) for b in range(2, 6)]
        ranges = window_candidates(h, w)
        assert set(ranges) == {HitsSelection(a, b) for a in range(2, 6) for b in range(a, 6)}
        assert all(c.upper == 5 for c in window_candidates(h, Window(0, 0, 40), pool="drop_finest"))
        with pytest.raises(InvalidArgumentError):
            window_candidates(h, w, pool="nope")
        full = window_candidates(h, Window(0, 0, 2048), only=True)
        assert len(full) == 66


class TestWindowNodes:
    def test_remainder_closes_window(self, rng):
        h = random_hierarchy(5, seed=1)
        x0 = rng.uniform(-1, 1, (3, 2))
        w = Window(0, 1, 11)  # span 22 = 16 + 4 + 2
        offsets, nodes = window_nodes(h, HitsSelection(4, 5), x0, w)
        assert offsets.tolist() == [0, 16, 20, 22]
        step = forward_step(h[2], nodes[:, 1])
        assert_array_equal(nodes[:, 2], step)
        assert_array_equal(nodes[:, 3], forward_step(h[1], step))
        short, _ = window_nodes(h, HitsSelection(4, 5), x0, w, complete=False)
        assert short.tolist() == [0, 16]

    def test_divisible_span_is_plain_hits(self, rng):
        h = random_hierarchy(4, seed=2)
        x0 = rng.uniform(-1, 1, (2, 2))
        offsets, nodes = window_nodes(h, HitsSelection(2, 4), x0, Window(0, 1, 16))
        assert offsets.tolist() == list(range(0, 33, 4))
        assert_array_equal(nodes, hits_vectorized_predict(h, HitsSelection(2, 4), x0, 32))


class TestShortlist:
    def test_one_step_window(self):
        h = random_hierarchy(3)
        val = TrajectoryDataset(np.zeros((2, 33, 2)), 0.01)
        plan = shortlist_models_per_window(h, plan_windows(AdaptiveSchedule([2], 1.0, 4)), val)
        assert plan.windows[0].shortlist == (2,)

    def test_drops_sabotaged_fine_model(self):
        rate = -0.5
        models = []
        for d in range(3):
            model = init_stepper([1, 1], "identity", d, zero=True)
            model.weights[0][0, 0] = np.exp(rate * 0.01 * 2**d) - 1.0
            models.append(model)
        models[0].weights[0][0, 0] = 0.05  # finer model pushes the wrong way
        h = StepperHierarchy(models)
        x0 = np.linspace(0.5, 1.0, 4)[:, None]
        truth = x0[:, None, :] * np.exp(rate * 0.01 * np.arange(65))[None, :, None]
        plan = plan_windows(AdaptiveSchedule([0] * 64, 1.0, 64))
        out = shortlist_models_per_window(h, plan, TrajectoryDataset(truth, 0.01))
        assert 0 not in out.windows[0].shortlist

    def test_seeding_modes(self, rng):
        h = random_hierarchy(4, seed=3)
        sched = AdaptiveSchedule([4, 4, 3, 3, 3, 2, 1, 1, 4], 1e-4, 96)
        plan = plan_windows(sched)
        truth = rng.uniform(-1, 1, (3, 1, 2)) * np.exp(-0.01 * np.arange(200))[None, :, None]
        val = TrajectoryDataset(truth, 0.01)
        serial = shortlist_models_per_window(h, plan, val)
        assert shortlist_models_per_window(h, plan, val, workers=3) == serial
        for w in shortlist_models_per_window(h, plan, val, seeding="chained").windows:
            assert w.shortlist and min(w.shortlist) >= w.stride_d
        one = full_horizon_plan(sched)
        assert shortlist_models_per_window(h, one, val, seeding="chained") == shortlist_models_per_window(h, one, val)
        with pytest.raises(InvalidArgumentError):
            shortlist_models_per_window(h, plan, val, seeding="random")

    def test_chained_matches_truth_for_exact_models(self):
        rate = -0.5
        models = []
        for d in range(4):
            model = init_stepper([1, 1], "identity", d, zero=True)
            model.weights[0][0, 0] = np.exp(rate * 0.01 * 2**d) - 1.0
            models.append(model)
        h = StepperHierarchy(models)
        x0 = np.linspace(0.5, 1.0, 4)[:, None]
        truth = x0[:, None, :] * np.exp(rate * 0.01 * np.arange(129))[None, :, None]
        plan = plan_windows(AdaptiveSchedule([3, 3, 2, 2, 1, 0, 0, 3], 1.0, 128))
        val = TrajectoryDataset(truth, 0.01)
        chained = shortlist_models_per_window(h, plan, val, seeding="chained")
        assert chained == shortlist_models_per_window(h, plan, val)

    def test_validation_must_cover_windows(self):
        h = zero_hierarchy(3)
        plan = plan_windows(AdaptiveSchedule([3, 3, 2], 1.0, 20))
        with pytest.raises(InvalidArgumentError):
            shortlist_models_per_window(h, plan, TrajectoryDataset(np.zeros((1, 10, 2)), 0.01))


class TestPredict:
    def test_unit_strides_need_no_interpolation(self, rng):
        h = random_hierarchy(0)
        plan = plan_windows(AdaptiveSchedule([0] * 30, 1.0, 30))
        plan.windows[0].shortlist = (0,)
        x0 = rng.uniform(-1, 1, size=(3, 2))
        out = ahits_predict(h, plan, x0, 30)
        np.testing.assert_array_equal(out.states, rollout(h[0], x0, 30))
        assert out.steps == 30

    def test_midpoint_interpolation(self):
        h = StepperHierarchy([adder(0, 0.0), adder(1, 0.0), adder(2, 3.0)])
        plan = WindowPlan([Window(0, 2, 1, (2,))], 1.0, 4, [2])
        out = ahits_predict(h, plan, np.ones((1, 1)), 4)
        np.testing.assert_array_equal(out.node_offsets, [0, 4])
        assert out.states[0, 2, 0] == (1.0 + 4.0) / 2

    def test_windows_chain_and_nodes_are_exact(self, rng):
        h = random_hierarchy(5, scale=0.3)
        plan = plan_windows(AdaptiveSchedule([4, 4, 4, 2, 2, 0, 1], 1.0, 57))
        for w, sl in zip(plan.windows, [(4, 5), (2, 3, 4), (0,), (1,)]):
            w.shortlist = sl
        x0 = rng.uniform(-1, 1, size=(2, 2))
        out = ahits_predict(h, plan, x0, 57)
        assert out.node_offsets.tolist() == [0, 16, 32, 48, 52, 56, 57, 59]
        assert out.states.shape == (2, 58, 2)
        idx = out.node_offsets[out.node_offsets <= 57]
        np.testing.assert_array_equal(out.states[:, idx], out.node_states[:, : len(idx)])
        first = hits_unit_prediction(h, HitsSelection(4, 5), x0, 48)
        np.testing.assert_array_equal(out.states[:, :49], first)

    def test_plan_must_cover_horizon(self):
        h = zero_hierarchy(2)
        plan = WindowPlan([Window(0, 1, 2, (1,))], 1.0, 4, [1, 1])
        with pytest.raises(InvalidArgumentError):
            ahits_predict(h, plan, np.zeros((1, 2)), 5)
        with pytest.raises(InvalidArgumentError):
            ahits_predict(h, WindowPlan([Window(0, 1, 2)], 1.0, 4, [1, 1]), np.zeros((1, 2)), 4)


def test_hits_degeneracy_on_random_hierarchy():
    h = random_hierarchy(6, scale=0.4, seed=8)
    val = generate_dataset(get_system("vanderpol"), (1, 6, 1), t_f=2.56, seed=1)["validation"]
    sched = estimate_adaptive_steps(h, val.trajectories[:, 0], 1e6, 256)
    assert sched.steps == [6] * 4
    plan = shortlist_models_per_window(h, full_horizon_plan(sched), val)
    sel = hits_cross_validate(h, val, 256)
    assert plan.windows[0].shortlist == tuple(sel.levels())
    x0 = np.random.default_rng(2).uniform(-2, 2, size=(5, 2))
    np.testing.assert_array_equal(ahits_predict(h, plan, x0, 256).states, hits_unit_prediction(h, sel, x0, 256))

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mhe_soc import ecm, plant
from mhe_soc.exceptions import LengthMismatch
from mhe_soc.mhe import (
    MheConfig,
    MovingHorizonEstimator,
    WindowProblem,
    _rollout_generic,
    cost,
    evaluate_cost,
    lift,
    propagate,
    rollout,
)
from mhe_soc.profiles import HppcProfile, NoiseSpec
from mhe_soc.window import FilterSpec, MeasurementWindow, Schedule, dirty_derivative, pseudo_integrator

PARAMS = ecm.default_parameters()
PROFILE = HppcProfile.for_capacity(PARAMS.capacity_Cn)
CLEAN = plant.simulate(PARAMS, PROFILE, NoiseSpec(std_dev=0.0), z0=0.9, horizon_s=1500)
NOISY = plant.simulate(PARAMS, PROFILE, NoiseSpec(seed=4), z0=0.9, horizon_s=1500)

SCHEDULES = {
    "uniform-1": Schedule.uniform(30, 1),
    "uniform-20": Schedule.uniform(30, 20),
    "multi-rate": Schedule.multi_rate(),
    "filtered-10": Schedule.filtered(10, 20, [dirty_derivative(), pseudo_integrator()]),
    "filtered-20": Schedule.filtered(20, 20, [dirty_derivative()]),
}


def _window(log, schedule, upto=None):
    win = MeasurementWindow(schedule, PARAMS.Ts)
    upto = len(log) if upto is None else upto
    for k in range(upto):
        win.push(log.t[k], log.Vb_noisy[k])
    view = win.view()
    currents = log.I[view.start_index:upto].tolist()
    return win, view, currents


def _truth_at(log, k):
    return np.array([log.Z[k], log.V1[k]])


class TestLift:
    @pytest.mark.parametrize("name", sorted(SCHEDULES))
    def test_truth_reproduces_buffer(self, name):
        win, view, currents = _window(CLEAN, SCHEDULES[name])
        pred = lift(PARAMS, _truth_at(CLEAN, view.start_index), view, currents, win.filters)
        np.testing.assert_allclose(pred, view.values, rtol=0, atol=1e-10)

    def test_toy_window_hand_recurrence(self):
        # N=3, n_ts=2 over 10 samples exposes indices 6, 8, 10 (span of 4 steps)
        sched = Schedule.uniform(3, 2)
        _, view, currents = _window(CLEAN, sched, upto=11)
        assert view.indices.tolist() == [6, 8, 10]
        z, v = 0.87, 0.004
        expected = []
        for k, i_k in enumerate(currents):
            r0 = 0.048 - 0.064 * z + 0.072 * z**2 - 0.024 * z**3
            ocv = sum(c * z**j for j, c in enumerate(PARAMS.alpha_ocv))
            if k % 2 == 0:
                expected.append(ocv - i_k * r0 - v)
            r1 = 0.025 - 0.030 * z + 0.035 * z**2 - 0.012 * z**3
            c1 = 1650 + 1650 * z - 1100 * z**2 + 550 * z**3
            a = math.exp(-1.0 / (r1 * c1))
            v = a * v + (1 - a) * r1 * i_k
            z = z - i_k / 7200.0
        pred = lift(PARAMS, [0.87, 0.004], view, currents)
        np.testing.assert_allclose(pred[0], expected, rtol=0, atol=1e-12)

    def test_unity_filter_channel_equals_raw(self):
        sched = Schedule.filtered(6, 3, [FilterSpec((1.0,), (1.0,), "unity")])
        win, view, currents = _window(NOISY, sched, upto=200)
        np.testing.assert_array_equal(view.values[1], view.values[0])
        pred = lift(PARAMS, [0.8, 0.01], view, currents, win.filters)
        np.testing.assert_array_equal(pred[1], pred[0])

    def test_needs_matching_currents(self):
        _, view, currents = _window(CLEAN, Schedule.uniform(3, 2), upto=11)
        with pytest.raises(ValueError):
            lift(PARAMS, [0.9, 0.0], view, currents[:-1])

    @pytest.mark.parametrize("name", sorted(SCHEDULES))
    def test_fast_and_generic_rollouts_agree(self, name):
        win, view, currents = _window(NOISY, SCHEDULES[name])
        steps = [int(i) - view.start_index for i in view.indices]
        guess = ecm.perturbed_guess(PARAMS)
        fast = rollout(guess, [0.8, 0.02], currents, steps, win.filters, view.filter_states)
        slow = _rollout_generic(guess, [0.8, 0.02], currents, steps, win.filters, view.filter_states)
        np.testing.assert_allclose(fast.outputs, slow.outputs, rtol=0, atol=1e-12)
        assert fast.end_state.Z == pytest.approx(slow.end_state.Z, abs=1e-14)
        assert fast.min_r1 == pytest.approx(slow.min_r1, abs=1e-14)


class TestCost:
    def _setup(self, log=CLEAN, schedule=None, selection=ecm.FULL, **cfg_kwargs):
        schedule = schedule or Schedule.uniform(30, 20)
        win, view, currents = _window(log, schedule)
        cfg = MheConfig(schedule, selection, **cfg_kwargs)
        xi = _truth_at(log, view.start_index)
        theta = ecm.pack_theta(PARAMS, selection)
        return win, view, currents, cfg, xi, theta

    def test_zero_at_truth(self):
        win, view, currents, cfg, xi, theta = self._setup()
        x = np.concatenate([xi, theta])
        assert cost(x, PARAMS, view, currents, cfg, xi, theta) == pytest.approx(0.0, abs=1e-9)

    def test_negative_r1_hits_barrier(self):
        win, view, currents, cfg, xi, theta = self._setup()
        bad = theta.copy()
        bad[4] = -0.01                       # R1 offset below zero
        x = np.concatenate([xi, bad])
        assert cost(x, PARAMS, view, currents, cfg, xi, theta) >= 1e5

    def test_output_term_matches_hand_residual(self):
        sched = Schedule.uniform(3, 2)
        win, view, currents = _window(NOISY, sched, upto=11)
        cfg = MheConfig(sched, ecm.FROZEN, w_state=0.0, w_theta=0.0)
        xi = np.array([0.88, 0.0])
        pred = lift(PARAMS, xi, view, currents)[0]
        resid = view.values[0] - pred
        hand = math.sqrt(sum(r * r for r in resid)) / math.sqrt(3)
        assert cost(xi, PARAMS, view, currents, cfg, xi, []) == pytest.approx(hand, rel=1e-12)

    def test_frozen_drops_theta_term(self):
        win, view, currents, cfg, xi, _ = self._setup(selection=ecm.FROZEN)
        terms = evaluate_cost(xi, PARAMS, view, currents, cfg, xi, np.empty(0), np.empty(0))
        assert terms.theta == 0.0

    def test_nonfinite_prediction_is_finite_cost(self):
        win, view, currents, cfg, xi, theta = self._setup()
        bad = theta.copy()
        bad[8:12] = 0.0                       # zero capacitance, zero time constant
        terms = evaluate_cost(np.concatenate([xi, bad]), PARAMS, view, currents, cfg, xi, theta,
                              np.abs(theta))
        assert not terms.prediction.finite
        assert math.isfinite(terms.total) and terms.total >= 1e5

    @pytest.mark.parametrize("name", sorted(SCHEDULES))
    @pytest.mark.parametrize("selection", [ecm.FULL, ecm.ORDER0, ecm.FROZEN])
    def test_window_problem_matches_reference(self, name, selection):
        win, view, currents, cfg, xi, theta = self._setup(NOISY, SCHEDULES[name], selection)
        scales = np.maximum(np.abs(theta), 1e-6)
        problem = WindowProblem(PARAMS, view, currents, cfg, xi, theta, scales, win.filters)
        rng = np.random.default_rng(len(name))
        for _ in range(50):
            x = np.concatenate([xi, theta]) * (1 + rng.normal(0, 0.4, 2 + len(theta)))
            ref = evaluate_cost(x, PARAMS, view, currents, cfg, xi, theta, scales, win.filters).total
            assert problem(x) == pytest.approx(ref, rel=1e-12, abs=1e-12)

    def test_barrier_floor_enforced(self):
        with pytest.raises(ValueError):
            MheConfig(Schedule.uniform(3, 1), barrier_M=10.0)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(-0.05, -1e-4), st.floats(0.5, 1.0), st.floats(-0.05, 0.05))
    def test_barrier_dominates_smooth_terms(self, r1_offset, z0, v0):
        win, view, currents, cfg, xi, theta = self._setup(NOISY)
        scales = np.maximum(np.abs(theta), 1e-6)
        bad = theta.copy()
        bad[4:8] = [r1_offset, 0.0, 0.0, 0.0]
        barred = evaluate_cost(np.concatenate([[z0, v0], bad]), PARAMS, view, currents, cfg, xi, theta, scales)
        clean = evaluate_cost(np.concatenate([[z0, v0], theta]), PARAMS, view, currents, cfg, xi, theta, scales)
        assert clean.barrier == 0.0 and clean.total < 1e5
        assert barred.total > clean.total


class TestEstimator:
    def test_idle_before_fill_is_open_loop(self):
        sched = Schedule.uniform(30, 20)
        est = MovingHorizonEstimator(PARAMS, MheConfig(sched, ecm.FROZEN), z0=0.85)
        for k in range(est.fill_index):
            out = est.step(CLEAN.t[k], CLEAN.Vb_noisy[k], CLEAN.I[k])
            assert not out.updated
        expected = propagate(PARAMS, (0.85, 0.0), CLEAN.I[:est.fill_index - 1])
        assert out.xi_now.Z == pytest.approx(expected.Z, abs=1e-15)
        assert est.step(CLEAN.t[est.fill_index], CLEAN.Vb_noisy[est.fill_index], CLEAN.I[est.fill_index]).updated

    def test_update_cadence(self):
        sched = Schedule.uniform(10, 4)
        est = MovingHorizonEstimator(PARAMS, MheConfig(sched, ecm.FROZEN))
        updated = [est.step(NOISY.t[k], NOISY.Vb_noisy[k], NOISY.I[k]).updated for k in range(200)]
        assert [k for k, u in enumerate(updated) if u] == list(range(36, 200, 4))

    def test_frozen_theta_bit_exact(self):
        est = MovingHorizonEstimator(PARAMS, MheConfig(Schedule.uniform(30, 2), ecm.FROZEN))
        for k in range(300):
            est.step(NOISY.t[k], NOISY.Vb_noisy[k], NOISY.I[k])
        assert est.params == PARAMS

    def test_theta_moves_when_estimated(self):
        guess = ecm.perturbed_guess(PARAMS)
        est = MovingHorizonEstimator(guess, MheConfig(Schedule.uniform(30, 2), ecm.FULL))
        for k in range(300):
            est.step(NOISY.t[k], NOISY.Vb_noisy[k], NOISY.I[k])
        assert not np.array_equal(est.theta, ecm.pack_theta(guess, ecm.FULL))

    def test_budget_per_step(self):
        est = MovingHorizonEstimator(ecm.perturbed_guess(PARAMS), MheConfig(Schedule.uniform(30, 2)))
        for k in range(200):
            out = est.step(NOISY.t[k], NOISY.Vb_noisy[k], NOISY.I[k])
            if out.updated:
                assert out.evaluations <= 14 + 3 + 15   # fresh simplex vertices plus one iteration
                assert est.last_result.iterations_used == 1

    def test_barrier_flag_matches_cost(self):
        est = MovingHorizonEstimator(ecm.perturbed_guess(PARAMS), MheConfig(Schedule.uniform(30, 1)))
        for k in range(400):
            out = est.step(NOISY.t[k], NOISY.Vb_noisy[k], NOISY.I[k])
            if out.updated:
                assert out.barrier_active == (out.cost >= 1e5)

    def test_deterministic(self):
        def run():
            est = MovingHorizonEstimator(ecm.perturbed_guess(PARAMS), MheConfig(Schedule.multi_rate()))
            return [est.step(NOISY.t[k], NOISY.Vb_noisy[k], NOISY.I[k]).xi_now for k in range(700)]

        assert run() == run()

    @pytest.mark.parametrize("mode", ["restart", "persistent", "adaptive"])
    def test_simplex_modes_run(self, mode):
        cfg = MheConfig(Schedule.uniform(30, 2), ecm.FROZEN, simplex_mode=mode)
        est = MovingHorizonEstimator(PARAMS, cfg, z0=0.85)
        for k in range(400):
            out = est.step(CLEAN.t[k], CLEAN.Vb_noisy[k], CLEAN.I[k])
        assert abs(out.xi_now.Z - CLEAN.Z[399]) < 0.05

    def test_set_theta_length_checked(self):
        est = MovingHorizonEstimator(PARAMS, MheConfig(Schedule.uniform(3, 1)))
        with pytest.raises(LengthMismatch):
            est.set_theta([1.0, 2.0])

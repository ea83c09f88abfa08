# SPDX-License-Identifier: Apache-2.0

"""Tests for discrete schedules: steady states, budget checks, laziness and transformations."""

import math

import numpy as np
import pytest

from databuy.errors import (
    ConvergenceError,
    InfeasiblePolicyError,
    InvalidParameterError,
    InvalidScheduleError,
)
from databuy.model import ModelParams, kalman_step, sampling_cost, trace_cost, trace_value
from databuy.policy import (
    LazyPolicy,
    OnOffPolicy,
    SamplingSchedule,
    canonicalize_save_spend,
    constant_rate_path,
    is_lazy,
    lazy_event_value,
    lazy_event_values,
    psi,
    rebatch,
    render,
    simulate,
    steady_state,
    validate_budget,
    value_of,
)

WORKED_COSTS = {
    (1.0,): (math.sqrt(5.0) - 1.0) / 2.0,
    (0.0, 2.0): (0.75 + math.sqrt(2.0) - 1.0) / 2.0,
    (0.0, 0.0, 2.0, 2.0): (3.0 * math.sqrt(14.0) - 2.0) / 16.0,
}


class TestSamplingSchedule:

    def test_rejects_bad_samples(self):
        with pytest.raises(InvalidScheduleError):
            SamplingSchedule(())
        with pytest.raises(InvalidScheduleError):
            SamplingSchedule((1.0, -0.5))
        with pytest.raises(InvalidScheduleError):
            SamplingSchedule((1.0, math.nan))

    def test_period_must_divide_length(self):
        with pytest.raises(InvalidScheduleError):
            SamplingSchedule((0.0, 1.0, 2.0), periodic=True, period=2)
        with pytest.raises(InvalidScheduleError):
            SamplingSchedule((0.0, 1.0), period=2)

    def test_expand(self):
        periodic = SamplingSchedule((0.0, 2.0), periodic=True)
        np.testing.assert_array_equal(periodic.expand(5), [0, 2, 0, 2, 0])
        with pytest.raises(InvalidScheduleError):
            SamplingSchedule((1.0, 1.0)).expand(3)

    def test_dict_round_trip(self, worked):
        schedule = SamplingSchedule((0.0, 2.0, 0.0, 2.0), periodic=True, period=2)
        data = schedule.to_dict(worked)
        assert data['c'] == 0.75
        assert data['period'] == 2
        assert SamplingSchedule.from_dict(data) == schedule

    def test_null(self, worked):
        null = SamplingSchedule.null()
        assert null.periodic
        assert value_of(null, worked) == 0.0


class TestSteadyState:
    """Periodic steady states of the worked example."""

    @pytest.mark.parametrize("samples", list(WORKED_COSTS))
    def test_worked_costs(self, worked, samples):
        trace = steady_state(SamplingSchedule(samples, periodic=True), worked)
        assert trace_cost(trace) == pytest.approx(WORKED_COSTS[samples], abs=1e-9)
        assert len(trace) == len(samples)

    def test_start_independent(self, worked):
        schedule = SamplingSchedule((0.0, 0.5, 3.0), periodic=True)
        a = steady_state(schedule, worked, x0=0.0)
        b = steady_state(schedule, worked, x0=50.0)
        np.testing.assert_allclose(a.v_post, b.v_post, atol=1e-10)

    def test_is_fixed_point(self, worked):
        schedule = SamplingSchedule((0.0, 0.0, 2.0, 2.0), periodic=True)
        v_end = steady_state(schedule, worked).v_post[-1]
        assert psi(schedule, worked, v_end) == pytest.approx(v_end, abs=1e-11)

    def test_no_samples(self, worked):
        with pytest.raises(InvalidScheduleError):
            steady_state(SamplingSchedule((0.0, 0.0), periodic=True), worked)

    def test_convergence_error(self, worked):
        with pytest.raises(ConvergenceError):
            steady_state(SamplingSchedule((0.0, 2.0), periodic=True), worked, tol=0.0, max_iter=1)

    def test_psi_contracts(self, worked):
        rng = np.random.default_rng(42)
        for _ in range(50):
            schedule = rng.uniform(0.0, 3.0, size=int(rng.integers(1, 6)))
            x, y = rng.uniform(0.0, 10.0, size=2)
            if abs(x - y) < 1e-6:
                continue
            assert abs(psi(schedule, worked, x) - psi(schedule, worked, y)) < abs(x - y)

    def test_constant_rate_path(self, worked):
        """The closed-form path equals iterating the one-round update."""
        for v_start, S in ((0.0, 1.0), (4.0, 2.5), (0.3, 0.2)):
            v = v_start
            expected = []
            for _ in range(12):
                v = kalman_step(v, S, worked)
                expected.append(v)
            np.testing.assert_allclose(constant_rate_path(v_start, S, 12, worked), expected, rtol=1e-10)


class TestBudget:
    """Prefix budget checks report the first overdrawn round."""

    def test_balanced_period(self, worked):
        report = validate_budget(SamplingSchedule((0.0, 2.0), periodic=True), worked)
        assert report.valid
        assert report.first_violation is None

    def test_front_loaded_period(self, worked):
        report = validate_budget(SamplingSchedule((2.0, 0.0), periodic=True), worked)
        assert not report.valid
        assert report.first_violation == 1

    def test_finite_overdraw(self, worked):
        report = validate_budget([0.0, 3.0], worked)
        assert report.first_violation == 2
        assert report.to_dict()['total_spend'] == 3.0

    def test_fixed_cost_counts(self, worked):
        assert validate_budget([0.0, 2.0], worked).valid
        report = validate_budget([0.0, 2.0], worked.with_(z=0.5))
        assert report.first_violation == 2

    def test_overspending_period(self, worked):
        report = validate_budget(SamplingSchedule((0.0, 0.0, 0.0, 4.5), periodic=True), worked)
        assert not report.valid
        assert report.first_violation == 4

    def test_balance_column(self, worked):
        trace = simulate([0.0, 2.0, 0.5], worked)
        np.testing.assert_allclose(trace.balance, [1.0, 0.0, 0.5])


class TestLaziness:

    def test_every_round_is_not_lazy(self, worked):
        assert not is_lazy([1.0, 1.0, 1.0], worked.with_(c=1.9))

    def test_saving_start_is_lazy(self, worked):
        assert is_lazy([0.0, 2.0], worked)

    def test_event_values(self):
        params = ModelParams(rho=1.0, sigma=1.0, c=3.3, B=1.0)
        trace = simulate([0.0, 0.0, 0.0, 2.3, 0.0, 0.0, 0.0, 0.0], params)
        values = lazy_event_values(trace)
        assert values == pytest.approx([5.7])
        assert lazy_event_value(trace.v_post[3], params) == pytest.approx(5.7)

    def test_event_value_formula(self):
        params = ModelParams(rho=0.5, c=2.0)
        v = 0.3
        expected = sum(max(params.c - v - i * params.rho, 0.0) for i in range(100))
        assert lazy_event_value(v, params) == pytest.approx(expected)
        assert lazy_event_value(2.5, params) == 0.0

    def test_cyclic_event_values(self, worked):
        trace = steady_state(SamplingSchedule((0.0, 2.0), periodic=True), worked)
        values = lazy_event_values(trace, cyclic=True)
        assert len(values) == 1
        assert values[0] == pytest.approx(trace.value.sum())

    def test_no_events(self, worked):
        assert lazy_event_values(simulate([0.0, 0.0], worked)) == []

    def test_event_value_decomposition_on_steady_trace(self):
        """h(h+1)/2 + (h+1)(c - v - h) is what a steady lazy cycle actually earns."""
        rng = np.random.default_rng(42)
        for _ in range(30):
            c = float(rng.uniform(0.5, 5.0))
            v_r = float(rng.uniform(0.05, 0.95)) * c
            delta = int(math.ceil(c - v_r)) + int(rng.integers(0, 4))
            params = ModelParams(rho=1.0, sigma=float(rng.uniform(0.5, 2.0)), c=c, B=1.0)
            h = math.floor(c - v_r)
            expected = h * (h + 1) / 2.0 + (h + 1) * (c - v_r - h)

            s = LazyPolicy(v_r=v_r, delta=delta).event_samples(params)
            period = SamplingSchedule((0.0,) * (delta - 1) + (s,), periodic=True)
            trace = steady_state(period, params, x0=v_r)
            values = lazy_event_values(trace, cyclic=True)
            assert values == pytest.approx([expected], rel=1e-9, abs=1e-9)
            assert lazy_event_value(v_r, params) == pytest.approx(expected, rel=1e-12)

    def test_rendered_lazy_events_earn_the_decomposition(self):
        params = ModelParams(rho=1.0, sigma=1.0, c=2.6, B=50.0)
        policy = LazyPolicy(v_r=0.4, delta=3)
        trace = simulate(render(policy, params, horizon=60), params)
        expected = 2 * 3 / 2.0 + 3 * (2.6 - 0.4 - 2)
        values = lazy_event_values(trace)
        assert len(values) > 5
        # The last event is cut off by the horizon
        assert values[:-1] == pytest.approx([expected] * (len(values) - 1), rel=1e-9)


class TestRebatch:
    """Moving samples to chosen rounds keeps variance and spend in check there."""

    def test_matches_variance_at_chosen_rounds(self, worked):
        params = worked.with_(z=0.3)
        samples = [0.5, 1.0, 0.0, 0.7, 0.2, 1.5, 0.0, 0.4]
        chosen = [2, 6, 8]
        new = rebatch(samples, params, None, chosen)
        original = simulate(samples, params)
        moved = simulate(new, params)
        idx = np.asarray(chosen) - 1

        np.testing.assert_allclose(moved.v_post[idx], original.v_post[idx], rtol=1e-10)
        assert np.count_nonzero(new.array) <= len(chosen)
        spend_old = np.cumsum(sampling_cost(original.s, params.z))[idx]
        spend_new = np.cumsum(sampling_cost(moved.s, params.z))[idx]
        assert np.all(spend_new <= spend_old + 1e-12)

    def test_integer_mode_rounds_up(self):
        params = ModelParams(fractional_samples=False)
        new = rebatch([1.0, 1.0, 1.0], params, None, [3])
        assert new.samples[2] == float(int(new.samples[2]))
        assert simulate(new, params).v_post[2] <= simulate([1.0, 1.0, 1.0], params).v_post[2] + 1e-12

    def test_integer_mode_several_rounds(self):
        """A rounded-up batch can leave later chosen rounds already below target."""
        params = ModelParams(fractional_samples=False)
        new = rebatch([1.0, 0.0, 0.0], params, None, [2, 3])
        np.testing.assert_array_equal(new.array, [0.0, 1.0, 0.0])
        original = simulate([1.0, 0.0, 0.0], params)
        moved = simulate(new, params)
        assert np.all(moved.v_post[1:] <= original.v_post[1:] + 1e-12)

    def test_integer_mode_random_schedules(self):
        rng = np.random.default_rng(42)
        params = ModelParams(sigma=1.5, fractional_samples=False)
        for _ in range(50):
            n = int(rng.integers(2, 12))
            samples = rng.integers(0, 4, size=n).astype(float)
            chosen = sorted(rng.choice(np.arange(1, n + 1), size=int(rng.integers(1, n + 1)),
                                       replace=False))
            new = rebatch(samples, params, None, chosen)
            idx = np.asarray(chosen) - 1
            assert np.all(new.array == np.floor(new.array))
            assert np.all(simulate(new, params).v_post[idx]
                          <= simulate(samples, params).v_post[idx] + 1e-9)

    def test_bad_timesteps(self, worked):
        with pytest.raises(InvalidParameterError):
            rebatch([1.0, 1.0], worked, None, [2, 1])
        with pytest.raises(InvalidParameterError):
            rebatch([1.0, 1.0], worked, None, [3])


class TestSaveThenSpend:

    def test_moves_above_c_run_first(self, worked):
        samples = [1.0, 1.0, 0.0, 0.0, 1.0, 1.0]
        canonical = canonicalize_save_spend(samples, worked, None, 6)
        before = simulate(samples, worked)
        after = simulate(canonical, worked)

        assert trace_value(after) >= trace_value(before) - 1e-12
        assert validate_budget(canonical, worked).valid
        first = int(np.flatnonzero(after.s > 0)[0])
        assert np.all(after.v_post[first:] <= worked.c + 1e-12)
        assert np.all(after.s[:first] == 0.0)

    def test_no_above_c_run_is_unchanged(self, worked):
        samples = [0.0, 2.0, 2.0, 2.0]
        canonical = canonicalize_save_spend(samples, worked, None, 4)
        np.testing.assert_allclose(canonical.array, samples)

    @pytest.mark.parametrize("fractional", [True, False])
    def test_random_schedules(self, fractional):
        """Value never decreases and a budget-valid input stays budget-valid."""
        rng = np.random.default_rng(42)
        checked_valid = 0
        for _ in range(150):
            params = ModelParams(
                sigma=float(rng.uniform(0.5, 2.0)),
                c=float(rng.uniform(0.5, 2.5)),
                B=float(rng.uniform(0.5, 2.5)),
                fractional_samples=fractional,
            )
            n = int(rng.integers(4, 16))
            draws = rng.uniform(0.2, 3.0, size=n) if fractional else rng.integers(1, 4, size=n).astype(float)
            samples = np.where(rng.random(n) < 0.5, 0.0, draws)
            canonical = canonicalize_save_spend(samples, params, None, n)
            assert len(canonical) == n
            assert trace_value(simulate(canonical, params)) >= trace_value(simulate(samples, params)) - 1e-9
            if validate_budget(samples, params).valid:
                checked_valid += 1
                assert validate_budget(canonical, params).valid
            if not fractional:
                assert np.all(canonical.array == np.floor(canonical.array))
        assert checked_valid > 5

    def test_bad_horizon(self, worked):
        with pytest.raises(InvalidParameterError):
            canonicalize_save_spend([1.0], worked, None, 0)


class TestRender:

    def test_onoff_period(self, worked):
        schedule = render(OnOffPolicy(T=4, S=2.0), worked)
        assert schedule.periodic
        np.testing.assert_allclose(schedule.array, [0.0, 0.0, 2.0, 2.0])

    def test_onoff_tiled(self, worked):
        schedule = render(OnOffPolicy(T=2, S=2.0), worked, horizon=5)
        assert not schedule.periodic
        np.testing.assert_allclose(schedule.array, [0.0, 2.0, 0.0, 2.0, 0.0])

    def test_onoff_leftover_goes_to_first_on_round(self, worked):
        """alpha = 1/3 over T = 4 leaves 3 off rounds and one unit to spare."""
        schedule = render(OnOffPolicy(T=4, S=3.0), worked)
        np.testing.assert_allclose(schedule.array, [0.0, 0.0, 0.0, 4.0])
        assert validate_budget(schedule, worked).valid

    def test_onoff_policy_validation(self):
        with pytest.raises(InvalidParameterError):
            OnOffPolicy(T=0, S=1.0)
        with pytest.raises(InvalidParameterError):
            OnOffPolicy(T=2, S=0.0)

    def test_lazy_rendering_is_valid_and_lazy(self, worked):
        policy = LazyPolicy(v_r=0.3, delta=1)
        schedule = render(policy, worked, horizon=50)
        assert len(schedule) == 50
        assert validate_budget(schedule, worked).valid
        assert is_lazy(schedule, worked)
        assert np.count_nonzero(schedule.array) > 1

    def test_lazy_needs_horizon(self, worked):
        with pytest.raises(InvalidParameterError):
            render(LazyPolicy(v_r=0.3, delta=1), worked)

    def test_lazy_below_c(self, worked):
        with pytest.raises(InvalidParameterError, match="below c"):
            render(LazyPolicy(v_r=0.1, delta=1), worked.with_(c=1.5), horizon=20)

    def test_lazy_unaffordable(self, worked):
        with pytest.raises(InfeasiblePolicyError):
            render(LazyPolicy(v_r=0.01, delta=1), worked, horizon=5)

    def test_periodic_value(self, worked):
        assert value_of(SamplingSchedule((0.0, 2.0), periodic=True), worked) == pytest.approx(
            0.75 - WORKED_COSTS[(0.0, 2.0)], abs=1e-9
        )

# SPDX-License-Identifier: Apache-2.0

"""Tests for the acceptance suite runner and its fast suites."""

import dataclasses
import math

import numpy as np
import pytest

from databuy import verify
from databuy.verify import (
    PRINTED_COSTS,
    REDUCED,
    WORKED_COSTS,
    bridge_error,
    bridge_policies,
    run_suites,
    truncate3,
)
from databuy.continuous import ContinuousParams


class TestPrintedCosts:

    def test_printed_digits_are_truncated(self):
        assert truncate3((3.0 * math.sqrt(14.0) - 2.0) / 16.0) == 0.576
        for name, cost in WORKED_COSTS.items():
            assert truncate3(cost) == PRINTED_COSTS[name]


class TestRunner:

    def test_worked_example_passes(self):
        report = run_suites(['worked-example'])
        assert report.passed
        data = report.to_dict()
        assert data['scale'] == 'reduced'
        assert [s['name'] for s in data['suites']] == ['worked-example']

    @pytest.mark.parametrize("name", ['contraction', 'rebatching', 'continuous-closed-form'])
    def test_fast_suites_pass(self, name):
        report = run_suites([name], seed=3)
        assert report.passed, report.results[0].details

    def test_unknown_suite(self):
        with pytest.raises(KeyError):
            run_suites(['no-such-suite'])

    def test_raising_suite_is_reported(self, monkeypatch):
        def broken(scale, rng):
            raise RuntimeError("boom")

        monkeypatch.setitem(verify.SUITES, 'worked-example', broken)
        report = run_suites(['worked-example'])
        assert not report.passed
        assert 'boom' in report.results[0].error

    def test_suite_seeding_is_order_independent(self):
        alone = run_suites(['contraction'], seed=5).results[0].details
        together = run_suites(['rebatching', 'contraction'], seed=5).results[1].details
        assert alone == together


class TestBridge:

    def test_error_shrinks_with_eps(self):
        params = ContinuousParams(c=1.0, B=10.0)
        for policy in bridge_policies()[:3]:
            coarse = bridge_error(policy, 0.05, params)
            fine = bridge_error(policy, 0.025, params)
            assert fine < coarse

    def test_reduced_scale_is_smaller(self):
        assert REDUCED.oracle_slack_limit is None
        assert REDUCED.property_trials < verify.FULL.property_trials


class TestOptimalityBound:

    def test_both_ends_of_bracket_are_checked(self):
        scale = dataclasses.replace(REDUCED, oracle_instances=2, oracle_horizon=10,
                                    oracle_v_grid=40, oracle_budget_grid=30)
        passed, details = verify.suite_optimality_bound(scale, np.random.default_rng(42))
        assert passed
        for row in details['instances']:
            assert row['lower_ok'] and row['upper_ok'] and row['slack_ok']
            assert row['lower'] <= row['vstar'] + 1e-9
            assert row['upper'] >= row['replayed'] - 1e-7

    def test_slack_limit_fails_wide_bracket(self):
        scale = dataclasses.replace(REDUCED, oracle_instances=1, oracle_horizon=10,
                                    oracle_v_grid=8, oracle_budget_grid=4, oracle_slack_limit=0.0)
        passed, details = verify.suite_optimality_bound(scale, np.random.default_rng(42))
        assert not passed
        assert not details['instances'][0]['slack_ok']


class TestLazyCeiling:

    def test_random_lazy_policies_go_through_simulator(self):
        scale = dataclasses.replace(REDUCED, lazy_ceiling_policies=10)
        passed, details = verify.suite_lazy_ceiling(scale, np.random.default_rng(42))
        assert passed
        assert details['max_simulated_excess'] <= 1e-9

    def test_random_lazy_policy_shape(self):
        rng = np.random.default_rng(42)
        policy = verify.random_lazy_policy(rng, 1.2, 5)
        assert len(policy.atoms) == 5
        times = [t for t, _ in policy.atoms]
        assert all(b > a for a, b in zip(times, times[1:]))
        assert policy.horizon > times[-1]

# SPDX-License-Identifier: Apache-2.0
# DATABUY VERIFY - ACCEPTANCE SUITES
# Worked example, optimality, approximation, bridge and filter checks with a pass/fail report

"""
Acceptance suites behind `databuy verify`.

Each suite returns (passed, details). The default scale is small enough
for CI; `full=True` runs the acceptance scale (instance counts, horizons
and oracle grids as stated for each criterion).
"""

import itertools
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from .binary import BinaryModel, filter_posteriors, forward_filter_enumeration, run_threshold, tune_theta
from .continuous import (
    ContinuousParams,
    ContinuousPolicy,
    cycle_long_run_value,
    discretize,
    lazy_cycle_policy,
    simulate_continuous,
    variance_at,
)
from .model import ModelParams, sampling_cost, trace_cost, trace_value
from .optimize import (
    dp_oracle,
    optimal_lazy_continuous,
    optimal_lazy_discrete,
    optimal_onoff_for_T,
    vstar_estimate,
)
from .policy import SamplingSchedule, psi, rebatch, simulate, steady_state

logger = logging.getLogger(__name__)

# The worked example: rho = sigma = 1, B = 1, c = 0.75
WORKED_EXAMPLE = ModelParams(rho=1.0, sigma=1.0, c=0.75, B=1.0)
WORKED_SCHEDULES = {
    'every_round': (1.0,),
    'every_other_round': (0.0, 2.0),
    'two_on_two_off': (0.0, 0.0, 2.0, 2.0),
}
WORKED_COSTS = {
    'every_round': (math.sqrt(5.0) - 1.0) / 2.0,
    'every_other_round': (0.75 + math.sqrt(2.0) - 1.0) / 2.0,
    'two_on_two_off': (3.0 * math.sqrt(14.0) - 2.0) / 16.0,
}
PRINTED_COSTS = {'every_round': 0.618, 'every_other_round': 0.582, 'two_on_two_off': 0.576}


@dataclass(frozen=True)
class Scale:
    """Sizes of the randomized suites."""
    onoff_instances: int
    onoff_max_T: int
    oracle_instances: int
    oracle_horizon: int
    oracle_v_grid: int
    oracle_budget_grid: int
    oracle_slack_limit: Optional[float]
    lazy_instances: int
    lazy_horizon: int
    property_trials: int
    filter_horizon: int
    binary_rounds: int
    binary_tune_rounds: int
    lazy_ceiling_policies: int


REDUCED = Scale(
    onoff_instances=5, onoff_max_T=32,
    oracle_instances=2, oracle_horizon=30, oracle_v_grid=120, oracle_budget_grid=80,
    oracle_slack_limit=None,
    lazy_instances=4, lazy_horizon=30,
    property_trials=25, filter_horizon=6,
    binary_rounds=20_000, binary_tune_rounds=20_000,
    lazy_ceiling_policies=20,
)

FULL = Scale(
    onoff_instances=20, onoff_max_T=128,
    oracle_instances=10, oracle_horizon=100, oracle_v_grid=400, oracle_budget_grid=200,
    oracle_slack_limit=0.05,
    lazy_instances=20, lazy_horizon=100,
    property_trials=100, filter_horizon=8,
    binary_rounds=100_000, binary_tune_rounds=100_000,
    lazy_ceiling_policies=50,
)


@dataclass
class SuiteResult:
    name: str
    passed: bool
    seconds: float
    details: Dict[str, Any] = field(default_factory=dict)
    error: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        out = {'name': self.name, 'passed': self.passed, 'seconds': self.seconds,
               'details': _plain(self.details)}
        if self.error is not None:
            out['error'] = self.error
        return out


@dataclass
class VerifyReport:
    results: List[SuiteResult]
    full: bool
    seed: int

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'passed': self.passed,
            'scale': 'full' if self.full else 'reduced',
            'seed': self.seed,
            'suites': [r.to_dict() for r in self.results],
        }


def _plain(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def truncate3(x: float) -> float:
    """Three printed decimals, truncated rather than rounded."""
    return math.floor(x * 1000.0) / 1000.0


def random_params(rng: np.random.Generator, fixed_cost: bool = False) -> ModelParams:
    """A random fractional-mode instance with unit drift."""
    return ModelParams(
        rho=1.0,
        sigma=float(rng.uniform(0.5, 2.0)),
        c=float(rng.uniform(0.3, 1.5)),
        B=float(rng.uniform(0.2, 2.0)),
        z=float(rng.uniform(0.0, 0.5)) if fixed_cost else 0.0,
    )


def random_lazy_policy(rng: np.random.Generator, c: float, n_atoms: int) -> ContinuousPolicy:
    """
    A lazy atomic policy started from variance c: atoms of random mass, each
    taken once the variance is back at c or after a random extra wait above it.
    """
    times = []
    t = float(rng.exponential(0.5 * c))
    v = c + t
    for _ in range(n_atoms):
        mass = float(np.exp(rng.uniform(-4.0, 4.0))) / c
        times.append((t, mass))
        w = v / (1.0 + mass * v)
        wait = float(rng.exponential(0.5 * c)) if rng.random() < 0.5 else 0.0
        gap = max(c - w, 0.0) + wait
        if gap <= 0.0:
            # A small atom can leave the variance above c
            gap = 0.5 * c
        t += gap
        v = w + gap
    return ContinuousPolicy(horizon=t, atoms=tuple(times))


# =============================================================================
# SUITES
# =============================================================================

def suite_worked_example(scale: Scale, rng: np.random.Generator) -> Tuple[bool, Dict[str, Any]]:
    """Steady-state costs of the three hand-built schedules."""
    details = {}
    passed = True
    for name, samples in WORKED_SCHEDULES.items():
        trace = steady_state(SamplingSchedule(samples, periodic=True), WORKED_EXAMPLE)
        cost = trace_cost(trace)
        exact_ok = abs(cost - WORKED_COSTS[name]) <= 1e-9
        printed_ok = truncate3(cost) == PRINTED_COSTS[name]
        details[name] = {'cost': cost, 'expected': WORKED_COSTS[name], 'printed': PRINTED_COSTS[name]}
        passed &= exact_ok and printed_ok
    return passed, details


def suite_onoff_monotone(scale: Scale, rng: np.random.Generator) -> Tuple[bool, Dict[str, Any]]:
    """Optimal on-off value is nondecreasing along T = 1, 2, 4, ..."""
    periods = [2 ** k for k in range(int(math.log2(scale.onoff_max_T)) + 1)]
    worst = math.inf
    for _ in range(scale.onoff_instances):
        params = random_params(rng)
        values = [optimal_onoff_for_T(params, T).value for T in periods]
        worst = min(worst, min(b - a for a, b in zip(values, values[1:])))
    return worst >= -1e-9, {'periods': periods, 'min_increment': worst}


def suite_optimality_bound(scale: Scale, rng: np.random.Generator) -> Tuple[bool, Dict[str, Any]]:
    """
    No budget-valid policy beats V*.

    Checked on both ends of the oracle bracket. The certificate (lower) stays
    at or below V*. The upper bound dominates the V* on-off schedule replayed
    over the same horizon, and exceeds V* by at most the bracket width. At full
    scale the width itself must stay under the limit.
    """
    rows = []
    passed = True
    for _ in range(scale.oracle_instances):
        params = random_params(rng)
        best = vstar_estimate(params)
        vstar = best.value
        oracle = dp_oracle(params, scale.oracle_horizon, v_grid=scale.oracle_v_grid,
                           budget_grid=scale.oracle_budget_grid)
        d = oracle.diagnostics
        replayed = trace_value(simulate(best.schedule, params, horizon=scale.oracle_horizon))
        lower_ok = d['lower'] <= vstar + 1e-9
        upper_ok = (d['upper'] >= replayed - 1e-7
                    and d['upper'] <= vstar + d['slack'] + 1e-9)
        slack_ok = (scale.oracle_slack_limit is None
                    or d['slack'] < scale.oracle_slack_limit * params.c)
        ok = lower_ok and upper_ok and slack_ok
        passed &= ok
        rows.append({'params': params.to_dict(), 'vstar': vstar, 'lower': d['lower'],
                     'upper': d['upper'], 'slack': d['slack'], 'replayed': replayed,
                     'lower_ok': lower_ok, 'upper_ok': upper_ok, 'slack_ok': slack_ok, 'ok': ok})
    return passed, {'instances': rows}


def suite_lazy_half(scale: Scale, rng: np.random.Generator) -> Tuple[bool, Dict[str, Any]]:
    """The best lazy policy earns at least half of the oracle's certified value."""
    rows = []
    passed = True
    for k in range(scale.lazy_instances):
        params = random_params(rng, fixed_cost=k % 2 == 1)
        lazy = optimal_lazy_discrete(params).value
        oracle = dp_oracle(params, scale.lazy_horizon, v_grid=scale.oracle_v_grid,
                           budget_grid=scale.oracle_budget_grid)
        d = oracle.diagnostics
        ok = lazy >= 0.5 * d['lower'] - d['slack'] - 1e-9
        passed &= ok
        rows.append({'params': params.to_dict(), 'lazy': lazy, 'oracle_lower': d['lower'],
                     'slack': d['slack'], 'ratio': lazy / d['lower'] if d['lower'] > 0 else None,
                     'ok': ok})
    return passed, {'instances': rows}


def suite_continuous_closed_form(scale: Scale, rng: np.random.Generator) -> Tuple[bool, Dict[str, Any]]:
    """Without a flow cost and with B < 2/c^2 the best atom is 1/c and the value Bc^3/8."""
    rows = []
    passed = True
    for _ in range(max(scale.property_trials // 5, 5)):
        c = float(rng.uniform(0.3, 2.0))
        B = float(rng.uniform(0.05, 0.95)) * 2.0 / (c * c)
        params = ContinuousParams(c=c, B=B, f=0.0)
        result = optimal_lazy_continuous(params)
        atom = result.diagnostics['atom']
        simulated = cycle_long_run_value(result.policy, params)
        expected = B * c ** 3 / 8.0
        ok = (abs(atom - 1.0 / c) <= 1e-6 and abs(result.value - expected) <= 1e-6
              and abs(simulated - expected) <= 1e-6)
        passed &= ok
        rows.append({'c': c, 'B': B, 'atom': atom, 'value': result.value,
                     'simulated': simulated, 'ok': ok})
    return passed, {'instances': rows}


def bridge_policies() -> List[ContinuousPolicy]:
    """Flow policies (some with atoms) whose breakpoints and atom times lie on the 0.05 grid."""
    return [
        ContinuousPolicy(horizon=2.0, rates=(1.0,)),
        ContinuousPolicy(horizon=2.0, breakpoints=(0.0, 1.0), rates=(4.0, 0.0)),
        ContinuousPolicy(horizon=2.0, breakpoints=(0.0, 0.5), rates=(0.0, 2.0)),
        ContinuousPolicy(horizon=2.0, rates=(1.0,), atoms=((1.0, 2.0),)),
        ContinuousPolicy(horizon=2.0, breakpoints=(0.0, 0.5, 1.5), rates=(0.5, 3.0, 1.0),
                         atoms=((0.25, 1.0),)),
    ]


def bridge_error(policy: ContinuousPolicy, eps: float, params: ContinuousParams) -> float:
    """Max gap between the discretized trace and the exact variance at the round ends."""
    schedule, model = discretize(policy, eps, params)
    trace = simulate(schedule, model)
    times = eps * np.arange(1, len(trace) + 1)
    return float(np.max(np.abs(trace.v_post - variance_at(policy, times, v0=0.0))))


def suite_discretization_bridge(scale: Scale, rng: np.random.Generator) -> Tuple[bool, Dict[str, Any]]:
    """Discretized traces converge to the exact one at first order in eps."""
    params = ContinuousParams(c=1.0, B=10.0, f=0.0)
    eps_values = [0.05 / 2 ** k for k in range(4)]
    rows = []
    passed = True
    for policy in bridge_policies():
        errors = [bridge_error(policy, eps, params) for eps in eps_values]
        ratios = [a / b if b > 0 else math.inf for a, b in zip(errors, errors[1:])]
        ok = all(1.5 <= r <= 3.0 for r in ratios)
        passed &= ok
        rows.append({'errors': errors, 'ratios': ratios, 'ok': ok})
    return passed, {'eps': eps_values, 'policies': rows}


def _random_schedule(rng: np.random.Generator, length: int) -> np.ndarray:
    samples = np.where(rng.random(length) < 0.5, rng.uniform(0.0, 3.0, length), 0.0)
    if not np.any(samples > 0):
        samples[rng.integers(length)] = rng.uniform(0.1, 3.0)
    return samples


def suite_contraction(scale: Scale, rng: np.random.Generator) -> Tuple[bool, Dict[str, Any]]:
    """The one-period map contracts and the steady state does not depend on the start."""
    worst_ratio = 0.0
    worst_gap = 0.0
    for _ in range(scale.property_trials):
        params = random_params(rng)
        schedule = SamplingSchedule(tuple(_random_schedule(rng, int(rng.integers(1, 8)))), periodic=True)
        y, x = sorted(rng.uniform(0.0, 5.0, 2))
        if x - y < 1e-6:
            x = y + 1.0
        ratio = abs(psi(schedule, params, x) - psi(schedule, params, y)) / (x - y)
        worst_ratio = max(worst_ratio, ratio)
        a = steady_state(schedule, params, x0=0.0).v_post[-1]
        b = steady_state(schedule, params, x0=10.0).v_post[-1]
        worst_gap = max(worst_gap, abs(a - b))
    return worst_ratio < 1.0 and worst_gap <= 1e-10, {'max_ratio': worst_ratio, 'max_start_gap': worst_gap}


def suite_rebatching(scale: Scale, rng: np.random.Generator) -> Tuple[bool, Dict[str, Any]]:
    """Rebatching keeps variance and cumulative spend at or below the original at chosen rounds."""
    worst_var = -math.inf
    worst_spend = -math.inf
    for k in range(scale.property_trials):
        params = random_params(rng, fixed_cost=k % 2 == 1)
        n = int(rng.integers(2, 20))
        samples = _random_schedule(rng, n)
        chosen = sorted(rng.choice(np.arange(1, n + 1), size=int(rng.integers(1, n + 1)), replace=False))
        new = rebatch(samples, params, None, chosen)
        original = simulate(samples, params)
        rebatched = simulate(new, params)
        idx = np.asarray(chosen) - 1
        spend_old = np.cumsum(sampling_cost(original.s, params.z))[idx]
        spend_new = np.cumsum(sampling_cost(rebatched.s, params.z))[idx]
        worst_var = max(worst_var, float(np.max(rebatched.v_post[idx] - original.v_post[idx])))
        worst_spend = max(worst_spend, float(np.max(spend_new - spend_old)))
    return worst_var <= 1e-9 and worst_spend <= 1e-9, {
        'max_variance_excess': worst_var, 'max_spend_excess': worst_spend,
    }


def suite_binary_filter(scale: Scale, rng: np.random.Generator) -> Tuple[bool, Dict[str, Any]]:
    """Recursive filter equals path enumeration; the tuned threshold policy meets B = 6."""
    model = BinaryModel(eps=0.01, delta_sig=0.2, B=6.0)
    worst = 0.0
    for horizon in range(1, scale.filter_horizon + 1):
        for bits in itertools.product((0, 1), repeat=horizon):
            rounds = [(b,) for b in bits]
            a = filter_posteriors(rounds, model)
            b = forward_filter_enumeration(rounds, model)
            worst = max(worst, max(abs(x - y) for x, y in zip(a, b)))

    policy = tune_theta(model, mc_rounds=scale.binary_tune_rounds, seed=int(rng.integers(2 ** 31)))
    trace = run_threshold(model, policy, scale.binary_rounds, seed=int(rng.integers(2 ** 31)))
    mean = trace.mean_samples
    median = float(np.median(trace.samples))
    passed = worst <= 1e-12 and abs(mean - model.B) <= 0.2 and median <= mean
    return passed, {
        'max_filter_error': worst, 'theta': policy.theta, 'mean_samples': mean,
        'median_samples': median, 'accuracy': trace.accuracy,
    }


def suite_lazy_ceiling(scale: Scale, rng: np.random.Generator) -> Tuple[bool, Dict[str, Any]]:
    """Lazy policies never earn more than c/2, which on-off policies beat at large budgets."""
    worst = -math.inf
    for _ in range(scale.lazy_ceiling_policies):
        c = float(rng.uniform(0.2, 3.0))
        params = ContinuousParams(c=c, B=float(rng.uniform(0.1, 100.0)), f=float(rng.uniform(0.0, 1.0)))
        policy = lazy_cycle_policy(float(np.exp(rng.uniform(-4.0, 4.0))) / c, c)
        worst = max(worst, cycle_long_run_value(policy, params) - c / 2.0)

    # Uneven atoms through the exact simulator, budget aside
    worst_simulated = -math.inf
    for _ in range(scale.lazy_ceiling_policies):
        c = float(rng.uniform(0.2, 3.0))
        params = ContinuousParams(c=c, B=1.0, f=float(rng.uniform(0.0, 1.0)))
        policy = random_lazy_policy(rng, c, int(rng.integers(1, 8)))
        trace = simulate_continuous(policy, params, v0=c)
        worst_simulated = max(worst_simulated, trace.average_value - c / 2.0)

    vstar = vstar_estimate(ModelParams(rho=1.0, sigma=1.0, c=1.0, B=1e3)).value
    lazy = optimal_lazy_continuous(ContinuousParams(c=1.0, B=1e3)).value
    passed = worst <= 1e-9 and worst_simulated <= 1e-9 and vstar >= 0.9 and lazy <= 0.5
    return passed, {'max_excess_over_half_c': worst, 'max_simulated_excess': worst_simulated,
                    'vstar_large_budget': vstar, 'lazy_large_budget': lazy}


SUITES: Dict[str, Callable[[Scale, np.random.Generator], Tuple[bool, Dict[str, Any]]]] = {
    'worked-example': suite_worked_example,
    'onoff-monotone': suite_onoff_monotone,
    'optimality-bound': suite_optimality_bound,
    'lazy-half': suite_lazy_half,
    'continuous-closed-form': suite_continuous_closed_form,
    'discretization-bridge': suite_discretization_bridge,
    'contraction': suite_contraction,
    'rebatching': suite_rebatching,
    'binary-filter': suite_binary_filter,
    'lazy-ceiling': suite_lazy_ceiling,
}


# =============================================================================
# RUNNER
# =============================================================================

def run_suites(
    names: Optional[Sequence[str]] = None,
    full: bool = False,
    seed: int = 0,
    show_progress: bool = False,
) -> VerifyReport:
    """
    Run acceptance suites and collect a report.

    Each suite draws from its own generator seeded by (seed, suite index),
    so a single suite reproduces the numbers it has in a full run. A suite
    that raises is reported as failed with the error message.
    """
    order = list(SUITES)
    names = order if not names else list(names)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise KeyError(f"Unknown verify suite(s): {unknown}; available: {order}")

    scale = FULL if full else REDUCED
    results = []
    for name in tqdm(names, desc="Verify suites", disable=not show_progress):
        rng = np.random.default_rng([seed, order.index(name)])
        start = time.perf_counter()
        try:
            passed, details = SUITES[name](scale, rng)
            error = None
        except Exception as e:
            logger.exception(f"Suite {name} raised")
            passed, details, error = False, {}, f"{type(e).__name__}: {e}"
        seconds = time.perf_counter() - start
        logger.info(f"{'PASS' if passed else 'FAIL'} {name} ({seconds:.2f}s)")
        results.append(SuiteResult(name=name, passed=bool(passed), seconds=seconds,
                                   details=details, error=error))
    return VerifyReport(results=results, full=full, seed=seed)

# SPDX-License-Identifier: Apache-2.0
# DATABUY POLICY - DISCRETE SAMPLING SCHEDULES
# Simulation, periodic steady states, budget checks and policy transformations

"""
Discrete sampling policies.

Because the posterior variance does not depend on sample outcomes, every
Gaussian policy is a deterministic schedule of per-round sample counts.
This module represents schedules, simulates them, finds the steady state of
periodic schedules by iterating the one-period map, checks the banked
budget constraint, and implements the schedule transformations used by the
approximation arguments (rebatching and save-then-spend canonicalization).
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import (
    ConvergenceError,
    InfeasiblePolicyError,
    InvalidParameterError,
    InvalidScheduleError,
)
from .model import (
    ATOL,
    ModelParams,
    VarianceTrace,
    check_samples,
    kalman_step,
    posterior_variance,
    sampling_cost,
    samples_to_reach,
    trace_value,
)

logger = logging.getLogger(__name__)

# Relative tolerance when comparing spend against banked budget
BUDGET_RTOL = 1e-9


# =============================================================================
# POLICY TYPES
# =============================================================================

@dataclass(frozen=True)
class SamplingSchedule:
    """
    Per-round sample counts s_1..s_n.

    A periodic schedule repeats its samples with period `period`
    (which must divide the stored length; defaults to the full length).
    """
    samples: Tuple[float, ...]
    periodic: bool = False
    period: Optional[int] = None

    def __post_init__(self):
        samples = tuple(float(s) for s in self.samples)
        object.__setattr__(self, 'samples', samples)
        if not samples:
            raise InvalidScheduleError("Schedule must contain at least one round")
        for s in samples:
            if not s >= 0 or not math.isfinite(s):
                raise InvalidScheduleError(f"Sample counts must be finite and nonnegative, got {s}")
        if self.periodic:
            period = len(samples) if self.period is None else int(self.period)
            if period < 1 or len(samples) % period:
                raise InvalidScheduleError(
                    f"Period {period} does not divide schedule length {len(samples)}"
                )
            object.__setattr__(self, 'period', period)
        elif self.period is not None:
            raise InvalidScheduleError("Only periodic schedules carry a period")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.samples, dtype=float)

    def one_period(self) -> np.ndarray:
        """Samples of a single period (the whole schedule if not periodic)."""
        if self.periodic:
            return self.array[: self.period]
        return self.array

    def expand(self, horizon: int) -> np.ndarray:
        """Explicit samples for rounds 1..horizon."""
        if self.periodic:
            reps = -(-horizon // self.period)
            return np.tile(self.one_period(), reps)[:horizon]
        if horizon > len(self):
            raise InvalidScheduleError(
                f"Finite schedule of {len(self)} rounds cannot cover horizon {horizon}"
            )
        return self.array[:horizon]

    def to_dict(self, params: Optional[ModelParams] = None) -> Dict[str, Any]:
        data: Dict[str, Any] = {}
        if params is not None:
            data.update({'rho': params.rho, 'sigma': params.sigma, 'c': params.c,
                         'B': params.B, 'z': params.z})
        data['samples'] = list(self.samples)
        data['periodic'] = self.periodic
        if self.periodic and self.period != len(self):
            data['period'] = self.period
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'SamplingSchedule':
        return cls(
            samples=tuple(data['samples']),
            periodic=bool(data.get('periodic', False)),
            period=data.get('period'),
        )

    @classmethod
    def null(cls) -> 'SamplingSchedule':
        """The policy that never samples."""
        return cls(samples=(0.0,), periodic=True)


@dataclass(frozen=True)
class OnOffPolicy:
    """
    Period-T policy: an off interval followed by sampling at rate S.

    The on-fraction is alpha = min(B / S, 1).
    """
    T: int
    S: float

    def __post_init__(self):
        if int(self.T) != self.T or self.T < 1:
            raise InvalidParameterError(f"On-off period must be a positive integer, got {self.T}")
        if not self.S > 0:
            raise InvalidParameterError(f"On-off rate must be positive, got {self.S}")

    def alpha(self, B: float) -> float:
        return min(B / self.S, 1.0)

    def off_length(self, B: float) -> int:
        """Off rounds per period: ceil((1 - alpha) T), leaving at least one on round."""
        raw = (1.0 - self.alpha(B)) * self.T
        return min(int(math.ceil(raw - 1e-9)), self.T - 1)

    def to_dict(self) -> Dict[str, Any]:
        return {'kind': 'onoff', 'T': self.T, 'S': self.S}


@dataclass(frozen=True)
class LazyPolicy:
    """
    Sample only once the innovation variance reaches c.

    After `warmup` saving rounds the policy brings the variance to v_r, then
    every `delta` rounds takes `s` samples to return to v_r. `s` defaults to
    the steady-state count; `warmup` defaults to the smallest budget-valid,
    lazy start.
    """
    v_r: float
    delta: int
    s: Optional[float] = None
    warmup: Optional[int] = None

    def __post_init__(self):
        if not self.v_r > 0:
            raise InvalidParameterError(f"Target variance must be positive, got {self.v_r}")
        if int(self.delta) != self.delta or self.delta < 1:
            raise InvalidParameterError(f"Event spacing must be a positive integer, got {self.delta}")
        if self.s is not None and not self.s > 0:
            raise InvalidParameterError(f"Samples per event must be positive, got {self.s}")
        if self.warmup is not None and self.warmup < 0:
            raise InvalidParameterError(f"Warmup must be nonnegative, got {self.warmup}")

    def event_samples(self, params: ModelParams) -> float:
        if self.s is not None:
            return self.s
        return samples_to_reach(self.v_r + self.delta * params.rho, self.v_r, params.sigma)

    def to_dict(self) -> Dict[str, Any]:
        return {'kind': 'lazy', 'v_r': self.v_r, 'delta': self.delta,
                's': self.s, 'warmup': self.warmup}


@dataclass
class BudgetReport:
    """Outcome of checking every prefix against the banked budget."""
    valid: bool
    first_violation: Optional[int]
    spend: np.ndarray
    balance: np.ndarray

    def to_dict(self) -> Dict[str, Any]:
        return {
            'valid': self.valid,
            'first_violation': self.first_violation,
            'total_spend': float(self.spend.sum()),
            'min_balance': float(self.balance.min()) if len(self.balance) else 0.0,
        }


ScheduleLike = Union[SamplingSchedule, Sequence[float], np.ndarray]


def as_schedule(schedule: ScheduleLike) -> SamplingSchedule:
    if isinstance(schedule, SamplingSchedule):
        return schedule
    return SamplingSchedule(samples=tuple(np.asarray(schedule, dtype=float).ravel()))


def validate_schedule(schedule: ScheduleLike, params: ModelParams) -> SamplingSchedule:
    """Check a schedule against the model's sample mode."""
    schedule = as_schedule(schedule)
    for s in schedule.samples:
        check_samples(s, params)
    return schedule


# =============================================================================
# SIMULATION
# =============================================================================

def _budget_tolerance(params: ModelParams, horizon: int) -> float:
    return BUDGET_RTOL * max(1.0, params.B * horizon)


def simulate(
    schedule: ScheduleLike,
    params: ModelParams,
    v0: Optional[float] = None,
    horizon: Optional[int] = None,
) -> VarianceTrace:
    """
    Run the variance recursion over a schedule.

    Args:
        schedule: Schedule to follow.
        params: Model parameters.
        v0: Variance before round 1 (defaults to params.v0).
        horizon: Rounds to simulate (defaults to the stored length).

    Returns:
        VarianceTrace with balance B*t - sum of C(s) up to t.
    """
    schedule = validate_schedule(schedule, params)
    horizon = len(schedule) if horizon is None else int(horizon)
    samples = schedule.expand(horizon)
    v = params.v0 if v0 is None else float(v0)
    if not v >= 0:
        raise InvalidParameterError(f"Initial variance must be nonnegative, got {v}")

    v_pre = np.empty(horizon)
    v_post = np.empty(horizon)
    for i, s in enumerate(samples):
        v_pre[i] = v + params.rho
        v = posterior_variance(v_pre[i], s, params.sigma)
        v_post[i] = v

    spend = np.cumsum(sampling_cost(samples, params.z))
    balance = params.B * np.arange(1, horizon + 1) - spend
    return VarianceTrace.from_arrays(v_pre, samples, v_post, params.c, balance)


def psi(schedule: ScheduleLike, params: ModelParams, x: float) -> float:
    """One-period map: variance after a full period starting from variance x."""
    period = as_schedule(schedule).one_period()
    v = float(x)
    for s in period:
        v = posterior_variance(v + params.rho, s, params.sigma)
    return v


def steady_state(
    schedule: ScheduleLike,
    params: ModelParams,
    tol: float = 1e-12,
    max_iter: int = 1_000_000,
    x0: Optional[float] = None,
) -> VarianceTrace:
    """
    Periodic steady state of a periodic schedule.

    Iterates the one-period map from x0 (default c) until successive
    boundary variances differ by at most tol. The map is a contraction
    whenever the period contains a sample, so the fixed point is unique.

    Returns:
        VarianceTrace of one period started from the fixed point.
    """
    schedule = validate_schedule(schedule, params)
    period = schedule.one_period()
    if not np.any(period > 0):
        raise InvalidScheduleError("A period without samples has no finite steady state")

    x = params.c if x0 is None else float(x0)
    for iteration in range(1, max_iter + 1):
        y = psi(period, params, x)
        if abs(y - x) <= tol:
            logger.debug(f"Steady state after {iteration} iterations: v_R={y:.12g}")
            return simulate(SamplingSchedule(tuple(period)), params, v0=y)
        x = y
    raise ConvergenceError(f"Steady state did not converge within {max_iter} iterations")


def constant_rate_path(v_start: float, S: float, n: int, params: ModelParams) -> np.ndarray:
    """
    Posterior variances after each of n rounds at constant rate S > 0.

    Each round is a linear fractional map with an attracting fixed point
    v* and a repelling one u < 0, so the cross ratio (v - v*) / (v - u)
    shrinks by the constant factor F'(v*) per round.
    """
    a = S / params.sigma
    rho = params.rho
    root = math.sqrt(a * a * rho * rho + 4.0 * a * rho)
    v_star = 2.0 * rho / (a * rho + root)
    u = -(a * rho + root) / (2.0 * a)
    q = 1.0 / (1.0 + a * (v_star + rho)) ** 2

    w0 = (v_start - v_star) / (v_start - u)
    w = w0 * q ** np.arange(1, n + 1)
    return (v_star - u * w) / (1.0 - w)


# =============================================================================
# BUDGET
# =============================================================================

def validate_budget(
    schedule: ScheduleLike, params: ModelParams, horizon: Optional[int] = None
) -> BudgetReport:
    """
    Check sum_{t<=T} C(s_t) <= B*T for every prefix T.

    For a periodic schedule without an explicit horizon, one period is
    enough when the period itself is budget-balanced; otherwise periods are
    expanded until the first violation appears.
    """
    schedule = as_schedule(schedule)
    if horizon is None:
        horizon = len(schedule)
        if schedule.periodic:
            period = schedule.one_period()
            deficit = sampling_cost(period, params.z).sum() - params.B * len(period)
            if deficit > _budget_tolerance(params, len(period)):
                prefix = params.B * np.arange(1, len(period) + 1) - np.cumsum(
                    sampling_cost(period, params.z)
                )
                reps = int(math.ceil(max(prefix.min(), 0.0) / deficit)) + 2
                horizon = len(period) * reps
            else:
                horizon = len(period)

    samples = schedule.expand(int(horizon))
    spend = sampling_cost(samples, params.z)
    balance = params.B * np.arange(1, len(samples) + 1) - np.cumsum(spend)
    bad = np.flatnonzero(balance < -_budget_tolerance(params, len(samples)))
    first = int(bad[0]) + 1 if len(bad) else None
    return BudgetReport(valid=first is None, first_violation=first, spend=spend, balance=balance)


# =============================================================================
# LAZINESS
# =============================================================================

def is_lazy(schedule: ScheduleLike, params: ModelParams, v0: Optional[float] = None) -> bool:
    """True iff every sampling round has innovation variance at least c."""
    trace = simulate(schedule, params, v0=v0)
    sampled = trace.s > 0
    return bool(np.all(trace.v_pre[sampled] >= params.c - ATOL * max(1.0, params.c)))


def lazy_event_value(v_post: float, params: ModelParams) -> float:
    """
    Value accrued by one lazy event that leaves variance v_post.

    Sum over i >= 0 of max(c - v_post - i*rho, 0); for rho = 1 this is
    h(h+1)/2 + (h+1)(c - v - h) with h = floor(c - v).
    """
    gap = params.c - v_post
    if gap <= 0:
        return 0.0
    h = math.floor(gap / params.rho)
    return (h + 1) * gap - params.rho * h * (h + 1) / 2.0


def lazy_event_values(trace: VarianceTrace, cyclic: bool = False) -> List[float]:
    """
    Value accrued between each sampling event and the next.

    With cyclic=True the trace is one period of a steady state and the
    rounds before the first event belong to the last event.
    """
    events = np.flatnonzero(trace.s > 0)
    if len(events) == 0:
        return []
    values = []
    for k, start in enumerate(events):
        end = events[k + 1] if k + 1 < len(events) else len(trace)
        total = float(trace.value[start:end].sum())
        if cyclic and k + 1 == len(events):
            total += float(trace.value[: events[0]].sum())
        values.append(total)
    return values


# =============================================================================
# REBATCHING
# =============================================================================

def _ceil_samples(s: float, params: ModelParams) -> float:
    if params.fractional_samples:
        return s
    return float(math.ceil(s - 1e-9))


def rebatch(
    schedule: ScheduleLike,
    params: ModelParams,
    v0: Optional[float],
    timesteps: Sequence[int],
) -> SamplingSchedule:
    """
    Move all sampling to the given rounds while matching variance there.

    At each chosen round t_i the new schedule takes just enough samples to
    reach the original posterior variance v_{t_i}, or none when the
    new trace is already at or below it; the samples the original
    spread over (t_{i-1}, t_i] would have reached it or lower, so the new
    cumulative spend is never higher at a chosen round.

    Args:
        schedule: Original schedule.
        params: Model parameters.
        v0: Initial variance (defaults to params.v0).
        timesteps: Strictly increasing 1-based rounds within the schedule.
    """
    schedule = validate_schedule(schedule, params)
    n = len(schedule)
    steps = [int(t) for t in timesteps]
    if any(b <= a for a, b in zip(steps, steps[1:])):
        raise InvalidParameterError("Rebatch timesteps must be strictly increasing")
    if steps and (steps[0] < 1 or steps[-1] > n):
        raise InvalidParameterError(f"Rebatch timesteps must lie in [1, {n}]")

    original = simulate(schedule, params, v0=v0)
    chosen = set(steps)
    new = np.zeros(n)
    v = params.v0 if v0 is None else float(v0)
    for i in range(n):
        v_tilde = v + params.rho
        if i + 1 in chosen:
            # Rounded-up batches can leave the new trace below the original already
            target = min(original.v_post[i], v_tilde)
            s = samples_to_reach(v_tilde, target, params.sigma)
            # Round-off residue from an idle interval must not pay the fixed cost
            new[i] = 0.0 if s <= ATOL else _ceil_samples(s, params)
        v = posterior_variance(v_tilde, new[i], params.sigma)

    logger.debug(f"Rebatched {int(np.count_nonzero(schedule.array))} sampling rounds onto {len(steps)}")
    return SamplingSchedule(tuple(new))


# =============================================================================
# SAVE-THEN-SPEND CANONICALIZATION
# =============================================================================

def _first_qualifying_interval(trace: VarianceTrace, c: float) -> Optional[Tuple[int, int]]:
    """Earliest maximal above-c run [t2, t3) at or after the first sampling round (0-based)."""
    sampled = np.flatnonzero(trace.s > 0)
    if len(sampled) == 0:
        return None
    first = int(sampled[0])
    above = trace.v_post > c + ATOL * max(1.0, c)
    idx = np.flatnonzero(above[first:])
    if len(idx) == 0:
        return None
    t2 = first + int(idx[0])
    t3 = t2
    while t3 < len(trace) and above[t3]:
        t3 += 1
    return t2, t3


def _shift_move(
    samples: np.ndarray, params: ModelParams, v0: float, trace: VarianceTrace, t2: int, t3: int
) -> np.ndarray:
    """Move the above-c run [t2, t3) ahead of the sampled stretch that precedes it."""
    n = len(samples)
    sampled = np.flatnonzero(samples[:t2] > 0)
    new = samples.copy()

    if len(sampled) == 0:
        # The run starts at the first sampling round: fold its samples into t3
        new[t2:t3] = 0.0
    else:
        a = int(sampled[0])
        shift = t3 - t2
        segment = samples[a:t2].copy()
        new[a:t3] = 0.0
        new[a + shift:t3] = segment
        v_before = v0 if a == 0 else trace.v_post[a - 1]
        v_tilde = v_before + (shift + 1) * params.rho
        new[a + shift] = _ceil_samples(
            samples_to_reach(v_tilde, trace.v_post[a], params.sigma), params
        )

    if t3 < n:
        head = simulate(SamplingSchedule(tuple(new[:t3])), params, v0=v0) if t3 > 0 else None
        v_prev = v0 if head is None else head.v_post[-1]
        v_tilde = v_prev + params.rho
        target = min(trace.v_post[t3], v_tilde)
        s = samples_to_reach(v_tilde, target, params.sigma)
        new[t3] = 0.0 if s <= ATOL else _ceil_samples(s, params)
    return new


def canonicalize_save_spend(
    schedule: ScheduleLike, params: ModelParams, v0: Optional[float], R: int
) -> SamplingSchedule:
    """
    Rewrite the first R rounds into save-then-spend form.

    Repeatedly takes the earliest above-c run that follows a sampling round
    and moves it ahead of the sampled stretch before it, resizing the two
    boundary batches so every variance in the moved stretch is unchanged.
    Value never decreases. A move that would overdraw the budget of a
    budget-valid input is not made; the loop then stops early and logs it.
    """
    schedule = validate_schedule(schedule, params)
    if R < 1:
        raise InvalidParameterError(f"Horizon R must be positive, got {R}")
    v0 = params.v0 if v0 is None else float(v0)
    samples = schedule.expand(R).astype(float).copy()
    input_valid = validate_budget(samples, params).valid

    for _ in range(R + 1):
        trace = simulate(samples, params, v0=v0)
        interval = _first_qualifying_interval(trace, params.c)
        if interval is None:
            break
        moved = _shift_move(samples, params, v0, trace, *interval)
        if input_valid and not validate_budget(moved, params).valid:
            logger.warning(
                f"Save-then-spend move at rounds {interval[0] + 1}-{interval[1]} would overdraw "
                f"the budget; leaving the remaining schedule as is"
            )
            break
        samples = moved

    return SamplingSchedule(tuple(samples))


# =============================================================================
# RENDERING
# =============================================================================

def _render_onoff(policy: OnOffPolicy, params: ModelParams) -> np.ndarray:
    T = policy.T
    off = policy.off_length(params.B)
    n_on = T - off
    rate = policy.S
    available = params.B * T - params.z * n_on
    if available <= 0:
        raise InfeasiblePolicyError(
            f"Fixed cost {params.z} per on round exhausts the period budget {params.B * T}"
        )
    if rate * n_on > available:
        rate = available / n_on
    if not params.fractional_samples:
        rate = float(math.floor(rate + 1e-9))
    period = np.zeros(T)
    period[off:] = rate
    if off > 0:
        remainder = available - rate * n_on
        if not params.fractional_samples:
            remainder = float(math.floor(remainder + 1e-9))
        if remainder > ATOL * max(1.0, available):
            period[off] += remainder
    return period


def _first_batch(policy: LazyPolicy, params: ModelParams, r: int) -> float:
    """Samples that bring the variance to v_r after r saving rounds."""
    v_tilde = params.v0 + (r + 1) * params.rho
    if v_tilde <= policy.v_r:
        return 0.0
    return _ceil_samples(samples_to_reach(v_tilde, policy.v_r, params.sigma), params)


def lazy_warmup(policy: LazyPolicy, params: ModelParams, horizon: int) -> Optional[int]:
    """
    Smallest number of leading saving rounds that keeps the lazy rendering
    budget-valid and lazy; None when no start within the horizon is affordable.
    """
    s = _ceil_samples(policy.event_samples(params), params)
    rate_gap = s + params.z - params.B * policy.delta
    lazy_min = max(0, int(math.ceil((params.c - params.v0) / params.rho - 1 - 1e-9)))
    tol = _budget_tolerance(params, horizon)

    for r in range(lazy_min, horizon):
        first = _first_batch(policy, params, r)
        head = (first + (params.z if first > 0 else 0.0)) - params.B * (r + 1)
        n_events = (horizon - r - 1) // policy.delta
        worst = head + max(0.0, rate_gap * n_events)
        if head <= tol and worst <= tol:
            return r
    return None


def _render_lazy(policy: LazyPolicy, params: ModelParams, horizon: int) -> np.ndarray:
    if policy.v_r + policy.delta * params.rho < params.c - ATOL * max(1.0, params.c):
        raise InvalidParameterError(
            f"v_r + delta*rho = {policy.v_r + policy.delta * params.rho} is below c; "
            f"the policy would sample before the variance reaches c"
        )
    r = policy.warmup if policy.warmup is not None else lazy_warmup(policy, params, horizon)
    if r is None:
        raise InfeasiblePolicyError(
            f"Lazy policy (v_r={policy.v_r}, delta={policy.delta}) cannot be afforded "
            f"within {horizon} rounds"
        )
    samples = np.zeros(horizon)
    if r >= horizon:
        return samples
    samples[r] = _first_batch(policy, params, r)
    samples[r + policy.delta::policy.delta] = _ceil_samples(policy.event_samples(params), params)
    return samples


def render(
    policy: Union[OnOffPolicy, LazyPolicy], params: ModelParams, horizon: Optional[int] = None
) -> SamplingSchedule:
    """
    Explicit schedule for an on-off or lazy policy.

    On-off policies render one budget-balanced period (tiled to `horizon`
    when given): ceil((1 - alpha) T) idle rounds, then rate S, with any
    leftover period budget added to the first on round. Lazy policies need a
    horizon: saving rounds, a first batch down to v_r, then a batch every
    delta rounds.
    """
    if isinstance(policy, OnOffPolicy):
        period = _render_onoff(policy, params)
        if horizon is None:
            return SamplingSchedule(tuple(period), periodic=True)
        return SamplingSchedule(tuple(np.tile(period, -(-horizon // policy.T))[:horizon]))
    if isinstance(policy, LazyPolicy):
        if horizon is None:
            raise InvalidParameterError("Rendering a lazy policy requires a horizon")
        return SamplingSchedule(tuple(_render_lazy(policy, params, int(horizon))))
    raise InvalidParameterError(f"Cannot render policy of type {type(policy).__name__}")


def value_of(schedule: ScheduleLike, params: ModelParams) -> float:
    """Long-run value of a periodic schedule, finite-horizon value otherwise."""
    schedule = as_schedule(schedule)
    if schedule.periodic:
        if not np.any(schedule.one_period() > 0):
            return 0.0
        return trace_value(steady_state(schedule, params))
    return trace_value(simulate(schedule, params))

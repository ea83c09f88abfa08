# SPDX-License-Identifier: Apache-2.0
# DATABUY CONTINUOUS - CONTINUOUS-TIME VARIANCE MODEL
# Closed-form ODE evolution, atoms, flow-cost metering and the discretization bridge

"""
Continuous-time model.

Time is normalized so drift accrues at unit rate and one sample has unit
noise variance. A policy is a piecewise-constant sampling density s(t) plus
atoms a(t_i). Between atoms the variance obeys

    v'(t) = 1 - s(t) * v(t)^2

and an atom of mass a maps v to v / (1 + a v). Spend up to time t is the
integral of s, plus the atoms, plus the flow-cost measure phi of the
fixed cost f.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import InvalidParameterError, InvalidScheduleError
from .model import ModelParams
from .policy import SamplingSchedule

logger = logging.getLogger(__name__)

# |v * sqrt(s) - 1| below this is treated as the equilibrium
EQUILIBRIUM_TOL = 1e-9


# =============================================================================
# TYPES
# =============================================================================

@dataclass(frozen=True)
class ContinuousParams:
    """Outside-option loss c, budget rate B and flow/fixed cost f."""
    c: float = 1.0
    B: float = 1.0
    f: float = 0.0

    def __post_init__(self):
        if not (self.c > 0 and self.B > 0 and self.f >= 0):
            raise InvalidParameterError(
                f"Continuous parameters need c > 0, B > 0, f >= 0; got c={self.c}, "
                f"B={self.B}, f={self.f}"
            )

    @classmethod
    def from_model(cls, params: ModelParams) -> 'ContinuousParams':
        return cls(c=params.c, B=params.B, f=params.z)

    def to_dict(self) -> Dict[str, Any]:
        return {'c': self.c, 'B': self.B, 'f': self.f}


@dataclass(frozen=True)
class ContinuousPolicy:
    """
    Piecewise-constant flow plus atoms over [0, horizon].

    `breakpoints[i]` is the start of the piece with density `rates[i]`;
    the first breakpoint is 0. `atoms` holds (time, mass) pairs; with
    `atom_period` set they repeat every period up to the horizon.
    """
    horizon: float
    breakpoints: Tuple[float, ...] = (0.0,)
    rates: Tuple[float, ...] = (0.0,)
    atoms: Tuple[Tuple[float, float], ...] = ()
    atom_period: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, 'breakpoints', tuple(float(b) for b in self.breakpoints))
        object.__setattr__(self, 'rates', tuple(float(r) for r in self.rates))
        object.__setattr__(self, 'atoms', tuple((float(t), float(a)) for t, a in self.atoms))
        if not self.horizon > 0:
            raise InvalidScheduleError(f"Horizon must be positive, got {self.horizon}")
        if len(self.breakpoints) != len(self.rates) or not self.breakpoints:
            raise InvalidScheduleError("Each flow breakpoint needs exactly one rate")
        if self.breakpoints[0] != 0.0:
            raise InvalidScheduleError("The first flow breakpoint must be 0")
        if any(b <= a for a, b in zip(self.breakpoints, self.breakpoints[1:])):
            raise InvalidScheduleError("Flow breakpoints must be strictly increasing")
        if any(r < 0 for r in self.rates):
            raise InvalidScheduleError("Flow densities must be nonnegative")
        times = [t for t, _ in self.atoms]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise InvalidScheduleError("Atom times must be strictly increasing")
        if any(a < 0 for _, a in self.atoms) or any(t < 0 for t in times):
            raise InvalidScheduleError("Atom times and masses must be nonnegative")
        if self.atom_period is not None and not self.atom_period > 0:
            raise InvalidScheduleError("Atom period must be positive")

    def atom_list(self) -> List[Tuple[float, float]]:
        """All atoms within [0, horizon], periodic repeats expanded."""
        if self.atom_period is None:
            return [(t, a) for t, a in self.atoms if t <= self.horizon]
        out = []
        k = 0
        while True:
            shifted = [(t + k * self.atom_period, a) for t, a in self.atoms]
            shifted = [(t, a) for t, a in shifted if t <= self.horizon]
            if not shifted:
                break
            out.extend(shifted)
            k += 1
        return out

    def rate_at(self, t: float) -> float:
        idx = int(np.searchsorted(self.breakpoints, t, side='right')) - 1
        return self.rates[max(idx, 0)]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'horizon': self.horizon,
            'breakpoints': list(self.breakpoints),
            'rates': list(self.rates),
            'atoms': [list(a) for a in self.atoms],
            'atom_period': self.atom_period,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ContinuousPolicy':
        return cls(
            horizon=data['horizon'],
            breakpoints=tuple(data.get('breakpoints', (0.0,))),
            rates=tuple(data.get('rates', (0.0,))),
            atoms=tuple(tuple(a) for a in data.get('atoms', ())),
            atom_period=data.get('atom_period'),
        )


@dataclass
class AtomRecord:
    t: float
    v_left: float
    v_after: float
    mass: float


@dataclass
class ContinuousTrace:
    """Dense variance samples, atom jumps, cumulative spend and averages."""
    t: np.ndarray
    v: np.ndarray
    spend: np.ndarray
    atoms: List[AtomRecord]
    average_cost: float
    average_value: float
    total_spend: float
    flow_cost: float
    budget_valid: Optional[bool] = None
    first_violation: Optional[float] = None

    COLUMNS = ('t', 'v', 'spend')

    def rows(self):
        for i in range(len(self.t)):
            yield [self.t[i], self.v[i], self.spend[i]]

    def columns(self) -> Dict[str, np.ndarray]:
        return {'t': self.t, 'v': self.v, 'spend': self.spend}


# =============================================================================
# VARIANCE DYNAMICS
# =============================================================================

def evolve(v0: float, s_const: float, dt: float) -> float:
    """
    Exact solution of v' = 1 - s v^2 after time dt at constant density s.

    With k = sqrt(s) and u = k v, u follows tanh below the equilibrium
    1/k and coth above it.
    """
    if v0 < 0 or s_const < 0 or dt < 0:
        raise InvalidParameterError(
            f"evolve needs nonnegative inputs, got v0={v0}, s={s_const}, dt={dt}"
        )
    if s_const == 0:
        return v0 + dt
    k = math.sqrt(s_const)
    u0 = k * v0
    if abs(u0 - 1.0) < EQUILIBRIUM_TOL:
        return 1.0 / k
    if u0 < 1.0:
        return math.tanh(k * dt + math.atanh(u0)) / k
    return 1.0 / (k * math.tanh(k * dt + math.atanh(1.0 / u0)))


def apply_atom(v: float, a: float) -> float:
    """Variance after an atom of mass a: v / (1 + a v)."""
    if v < 0 or a < 0:
        raise InvalidParameterError(f"apply_atom needs v >= 0 and a >= 0, got v={v}, a={a}")
    if math.isinf(v):
        return 1.0 / a if a > 0 else v
    return v / (1.0 + a * v)


def _log_cosh(x: float) -> float:
    x = abs(x)
    return x + math.log1p(math.exp(-2.0 * x)) - math.log(2.0)


def _log_sinh(x: float) -> float:
    return x + math.log1p(-math.exp(-2.0 * x)) - math.log(2.0)


def _integral_v(v0: float, s: float, dt: float) -> float:
    """Integral of v over [0, dt] starting from v0 at density s."""
    if dt <= 0:
        return 0.0
    if s == 0:
        return v0 * dt + 0.5 * dt * dt
    k = math.sqrt(s)
    u0 = k * v0
    if abs(u0 - 1.0) < EQUILIBRIUM_TOL:
        return dt / k
    if u0 < 1.0:
        a0 = math.atanh(u0)
        return (_log_cosh(k * dt + a0) - _log_cosh(a0)) / s
    b0 = math.atanh(1.0 / u0)
    return (_log_sinh(k * dt + b0) - _log_sinh(b0)) / s


def _time_to_reach(v0: float, s: float, target: float) -> Optional[float]:
    """Time for v to move from v0 to target at density s, or None if it never does."""
    if target == v0:
        return 0.0
    if s == 0:
        return target - v0 if target > v0 else None
    k = math.sqrt(s)
    v_eq = 1.0 / k
    if abs(k * v0 - 1.0) < EQUILIBRIUM_TOL:
        return None
    if v0 < v_eq:
        if not v0 < target < v_eq:
            return None
        return (math.atanh(k * target) - math.atanh(k * v0)) / k
    if not v_eq < target < v0:
        return None
    return (math.atanh(1.0 / (k * target)) - math.atanh(1.0 / (k * v0))) / k


def _integral_loss(v0: float, s: float, dt: float, c: float) -> float:
    """Integral of min(v, c) over a piece, splitting at the crossing of c."""
    if dt <= 0:
        return 0.0
    cross = _time_to_reach(v0, s, c)
    if cross is None or cross >= dt:
        v_end = evolve(v0, s, dt)
        if max(v0, v_end) <= c:
            return _integral_v(v0, s, dt)
        if min(v0, v_end) >= c:
            return c * dt
        # Numerically at c at one end
        return min(_integral_v(v0, s, dt), c * dt)
    if v0 < c:
        return _integral_v(v0, s, cross) + c * (dt - cross)
    return c * cross + _integral_v(c, s, dt - cross)


# =============================================================================
# FLOW COST
# =============================================================================

@dataclass
class FlowCostMeter:
    """
    Flow-cost measure phi of a policy.

    phi has density f while sampling and over idle gaps of length <= 1
    that end with sampling resuming; when sampling starts for the first
    time, or resumes after a gap longer than 1, phi has a point mass f.
    Trailing idle time costs nothing.
    """
    f: float
    densities: List[Tuple[float, float]] = field(default_factory=list)   # [start, end) at rate f
    masses: List[float] = field(default_factory=list)                     # times of point masses f

    @classmethod
    def for_policy(cls, policy: ContinuousPolicy, f: float) -> 'FlowCostMeter':
        meter = cls(f=f)
        if f == 0:
            return meter

        intervals = []
        bounds = list(policy.breakpoints) + [policy.horizon]
        for start, end, rate in zip(bounds[:-1], bounds[1:], policy.rates):
            end = min(end, policy.horizon)
            if rate > 0 and end > start:
                intervals.append([start, end])
        for t, a in policy.atom_list():
            if a > 0:
                intervals.append([t, t])
        intervals.sort()

        merged: List[List[float]] = []
        for start, end in intervals:
            if merged and start <= merged[-1][1]:
                merged[-1][1] = max(merged[-1][1], end)
            else:
                merged.append([start, end])

        previous_end = None
        for start, end in merged:
            if previous_end is None or start - previous_end > 1.0:
                meter.masses.append(start)
            else:
                meter.densities.append((previous_end, start))
            if end > start:
                meter.densities.append((start, end))
            previous_end = end
        return meter

    def total(self) -> float:
        return self.f * (len(self.masses) + sum(e - s for s, e in self.densities))

    def cumulative(self, t: float) -> float:
        """phi([0, t]), point masses at t included."""
        mass = sum(1 for m in self.masses if m <= t)
        dens = sum(max(0.0, min(e, t) - s) for s, e in self.densities)
        return self.f * (mass + dens)


# =============================================================================
# SIMULATION
# =============================================================================

def _event_times(policy: ContinuousPolicy, atoms: Sequence[Tuple[float, float]]) -> List[float]:
    times = {0.0, policy.horizon}
    times.update(b for b in policy.breakpoints if b < policy.horizon)
    times.update(t for t, _ in atoms)
    return sorted(times)


def simulate_continuous(
    policy: ContinuousPolicy,
    params: ContinuousParams,
    v0: float = 0.0,
    output_step: Optional[float] = None,
) -> ContinuousTrace:
    """
    Exact piecewise evolution of a continuous policy.

    Args:
        policy: Flow and atoms.
        params: c (for loss/value), B (for the budget check), f (flow cost).
        v0: Variance at time 0, before any atom at time 0.
        output_step: Spacing of the dense output grid (default horizon/1000).

    Returns:
        ContinuousTrace with exact average cost/value over [0, horizon].
    """
    if v0 < 0:
        raise InvalidParameterError(f"Initial variance must be nonnegative, got {v0}")
    horizon = policy.horizon
    step = horizon / 1000.0 if output_step is None else float(output_step)
    if not step > 0:
        raise InvalidParameterError(f"output_step must be positive, got {step}")

    atoms = policy.atom_list()
    atom_mass = {t: a for t, a in atoms}
    meter = FlowCostMeter.for_policy(policy, params.f)
    events = _event_times(policy, atoms)

    # Left end state of each piece after applying atoms at its start
    piece_start: List[Tuple[float, float, float]] = []   # (t, v_after_atoms, rate)
    records: List[AtomRecord] = []
    loss = 0.0
    flow_samples = 0.0
    v = float(v0)
    for t0, t1 in zip(events[:-1], events[1:]):
        if t0 in atom_mass:
            v_left = v
            v = apply_atom(v, atom_mass[t0])
            records.append(AtomRecord(t=t0, v_left=v_left, v_after=v, mass=atom_mass[t0]))
        rate = policy.rate_at(t0)
        piece_start.append((t0, v, rate))
        loss += _integral_loss(v, rate, t1 - t0, params.c)
        flow_samples += rate * (t1 - t0)
        v = evolve(v, rate, t1 - t0)
    if horizon in atom_mass and horizon not in [r.t for r in records]:
        v_left = v
        v = apply_atom(v, atom_mass[horizon])
        records.append(AtomRecord(t=horizon, v_left=v_left, v_after=v, mass=atom_mass[horizon]))

    grid = np.union1d(np.arange(0.0, horizon + 0.5 * step, step), np.asarray(events))
    grid = grid[grid <= horizon]
    starts = np.asarray([p[0] for p in piece_start])
    v_out = np.empty(len(grid))
    spend_out = np.empty(len(grid))
    atom_times = np.asarray([r.t for r in records])
    atom_masses = np.asarray([r.mass for r in records])
    for i, t in enumerate(grid):
        j = max(int(np.searchsorted(starts, t, side='right')) - 1, 0)
        ts, vs, rate = piece_start[j]
        v_out[i] = evolve(vs, rate, t - ts) if t > ts else vs
        if t >= horizon and records and records[-1].t == horizon:
            v_out[i] = records[-1].v_after
        flow = sum(
            p[2] * (min(t, nxt) - p[0])
            for p, nxt in zip(piece_start, list(starts[1:]) + [horizon])
            if p[0] < t
        )
        spend_out[i] = flow + atom_masses[atom_times <= t].sum() + meter.cumulative(t)

    total_spend = flow_samples + sum(a for _, a in atoms) + meter.total()
    valid, violation = _check_continuous_budget(policy, atoms, meter, params.B, events)
    average_cost = loss / horizon
    logger.debug(
        f"Continuous run: horizon={horizon}, atoms={len(records)}, "
        f"value={params.c - average_cost:.6g}, spend={total_spend:.6g}"
    )
    return ContinuousTrace(
        t=grid,
        v=v_out,
        spend=spend_out,
        atoms=records,
        average_cost=average_cost,
        average_value=params.c - average_cost,
        total_spend=total_spend,
        flow_cost=meter.total(),
        budget_valid=valid,
        first_violation=violation,
    )


def _check_continuous_budget(
    policy: ContinuousPolicy,
    atoms: Sequence[Tuple[float, float]],
    meter: FlowCostMeter,
    B: float,
    events: Sequence[float],
) -> Tuple[bool, Optional[float]]:
    """Spend is piecewise linear between events, so checking event times is exact."""
    checkpoints = sorted(set(events) | {e for _, e in meter.densities} | set(meter.masses))
    bounds = list(policy.breakpoints) + [policy.horizon]
    tol = 1e-9 * max(1.0, B * policy.horizon)
    for t in checkpoints:
        flow = sum(
            r * max(0.0, min(t, end) - start)
            for start, end, r in zip(bounds[:-1], bounds[1:], policy.rates)
        )
        spent = flow + sum(a for ta, a in atoms if ta <= t) + meter.cumulative(t)
        if spent > B * t + tol:
            return False, t
    return True, None


# =============================================================================
# DISCRETIZATION
# =============================================================================

def discretize(
    policy: ContinuousPolicy, eps: float, params: ContinuousParams
) -> Tuple[SamplingSchedule, ModelParams]:
    """
    Discrete instance approximating a continuous policy with rounds of length eps.

    Round k stands for time k*eps: drift rho = eps, budget B*eps per round,
    fixed cost f*eps per sampling round, and the round takes the flow over
    [(k-1) eps, k eps) plus every atom whose nearest grid point is k eps.
    """
    n = int(round(policy.horizon / eps))
    if n < 1 or abs(n * eps - policy.horizon) > 1e-9 * policy.horizon:
        raise InvalidParameterError(f"eps={eps} does not divide the horizon {policy.horizon}")

    bounds = np.asarray(list(policy.breakpoints) + [policy.horizon])
    rates = np.asarray(policy.rates)
    edges = np.arange(n + 1) * eps
    samples = np.zeros(n)
    for k in range(n):
        lo, hi = edges[k], edges[k + 1]
        overlap = np.clip(np.minimum(bounds[1:], hi) - np.maximum(bounds[:-1], lo), 0.0, None)
        samples[k] = float(np.dot(overlap, rates))
    for t, a in policy.atom_list():
        k = min(max(int(round(t / eps)), 1), n)
        samples[k - 1] += a

    model = ModelParams(rho=eps, sigma=1.0, c=params.c, B=params.B * eps, z=params.f * eps,
                        v0=0.0, fractional_samples=True)
    return SamplingSchedule(tuple(samples)), model


# =============================================================================
# LAZY POLICY CONSTRUCTIONS
# =============================================================================

def lazy_cycle_policy(atom: float, c: float) -> ContinuousPolicy:
    """
    One steady cycle of a lazy atomic policy: an atom at time 0 applied to
    variance c, followed by the idle gap until the variance is back at c.
    """
    gap = c - c / (1.0 + atom * c)
    return ContinuousPolicy(horizon=gap, atoms=((0.0, atom),))


def save_then_spend_policy(
    atom: float, params: ContinuousParams, horizon: float, v0: float = 0.0
) -> ContinuousPolicy:
    """
    Finite-horizon lazy policy: idle until the budget covers all remaining
    atoms, then an atom each time the variance returns to c.
    """
    gap = params.c - params.c / (1.0 + atom * params.c)
    per_atom = atom + params.f * min(gap, 1.0)
    # First atom from variance v0 + r, the rest from c
    best: List[Tuple[float, float]] = []
    r = max(params.c - v0, 0.0)
    while r < horizon:
        first = 1.0 / (params.c / (1.0 + atom * params.c)) - 1.0 / (v0 + r)
        n_more = int((horizon - r) // gap)
        times = [r + k * gap for k in range(n_more + 1) if r + k * gap <= horizon]
        spend = first + params.f + per_atom * (len(times) - 1)
        if all(first + params.f + per_atom * k <= params.B * t + 1e-12
               for k, t in enumerate(times)) and spend <= params.B * horizon + 1e-12:
            best = [(times[0], first)] + [(t, atom) for t in times[1:]]
            break
        r += gap
    return ContinuousPolicy(horizon=horizon, atoms=tuple(best))


def cycle_long_run_value(policy: ContinuousPolicy, params: ContinuousParams) -> float:
    """
    Long-run value of repeating a single lazy cycle, saving between cycles
    when the budget cannot fund one cycle per cycle length.

    The cycle starts at variance c; in steady repetition the gap before the
    next atom equals the cycle length, so the flow cost per cycle is
    f * min(1, horizon).
    """
    trace = simulate_continuous(policy, params, v0=params.c)
    spend = sum(a for _, a in policy.atom_list()) + params.f * min(1.0, policy.horizon)
    per_cycle = trace.average_value * policy.horizon
    return per_cycle / max(policy.horizon, spend / params.B)


def variance_at(policy: ContinuousPolicy, times: Sequence[float], v0: float = 0.0) -> np.ndarray:
    """Exact variance v(t) (after any atom at t) at each requested time."""
    times = np.asarray(times, dtype=float)
    atoms = policy.atom_list()
    atom_mass = {t: a for t, a in atoms}
    events = _event_times(policy, atoms)

    starts, states, rates = [], [], []
    v = float(v0)
    for t0, t1 in zip(events[:-1], events[1:]):
        if t0 in atom_mass:
            v = apply_atom(v, atom_mass[t0])
        starts.append(t0)
        states.append(v)
        rates.append(policy.rate_at(t0))
        v = evolve(v, rates[-1], t1 - t0)
    end_state = apply_atom(v, atom_mass[policy.horizon]) if policy.horizon in atom_mass else v

    out = np.empty(len(times))
    for i, t in enumerate(times):
        if t >= policy.horizon:
            out[i] = end_state
            continue
        j = max(int(np.searchsorted(starts, t, side='right')) - 1, 0)
        out[i] = evolve(states[j], rates[j], t - starts[j])
    return out

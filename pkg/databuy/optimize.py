# SPDX-License-Identifier: Apache-2.0
# DATABUY OPTIMIZE - POLICY OPTIMIZERS AND THE DP ORACLE
# On-off and lazy optimizers, the V* estimate and a certified brute-force bracket

"""
Policy optimizers.

    optimal_onoff_for_T      best on-off policy of period T (z = 0)
    vstar_estimate           doubles T and extrapolates the on-off value to its limit
    render_doubling          on-off periods of doubling length, concatenated
    optimal_lazy_discrete    best lazy policy in the discrete model
    optimal_lazy_continuous  best lazy atom size in the continuous model
    regular_atomic_continuous  equally spaced atoms, no saving phase
    dp_oracle                upper/lower bracket on the finite-horizon optimum

One-dimensional searches scan a coarse grid first and then refine with
golden-section search inside the best bracket, so a flat or zero region
never strands the search.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq
from tqdm import tqdm

from .continuous import (
    ContinuousParams,
    ContinuousPolicy,
    lazy_cycle_policy,
    save_then_spend_policy,
)
from .errors import InvalidParameterError, ModelRestrictionError
from .model import ATOL, ModelParams
from .policy import (
    LazyPolicy,
    OnOffPolicy,
    SamplingSchedule,
    constant_rate_path,
    render,
)

logger = logging.getLogger(__name__)

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

# Exhaustive search over on-round counts up to this period
EXHAUSTIVE_MAX_T = 512

# Cap on the assumed shrink ratio of doubling increments when extrapolating V*
MAX_TAIL_RATIO = 0.75


# =============================================================================
# RESULT TYPE
# =============================================================================

@dataclass
class OptResult:
    """
    Outcome of an optimizer.

    `value + cost == c`. `schedule` holds an explicit budget-valid rendering
    when the optimizer produces one without a horizon (one on-off period,
    the oracle's certificate schedule).
    """
    policy: Any
    value: float
    cost: float
    diagnostics: Dict[str, Any] = field(default_factory=dict)
    schedule: Optional[SamplingSchedule] = None

    def to_dict(self) -> Dict[str, Any]:
        policy = self.policy.to_dict() if hasattr(self.policy, 'to_dict') else self.policy
        out = {
            'policy': policy,
            'value': self.value,
            'cost': self.cost,
            'diagnostics': _jsonable(self.diagnostics),
        }
        if self.schedule is not None:
            out['schedule'] = self.schedule.to_dict()
        return out


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def _result(policy: Any, value: float, c: float, **diagnostics) -> OptResult:
    schedule = diagnostics.pop('schedule', None)
    return OptResult(policy=policy, value=value, cost=c - value,
                     diagnostics=diagnostics, schedule=schedule)


# =============================================================================
# ONE-DIMENSIONAL SEARCH
# =============================================================================

def golden_section(
    fn: Callable[[float], float],
    lo: float,
    hi: float,
    tol: float = 1e-12,
    max_iter: int = 300,
    scan: int = 33,
) -> Tuple[float, float]:
    """
    Maximize a unimodal (or quasiconcave) function on [lo, hi].

    A scan of `scan` evenly spaced points picks the bracket around the best
    point; golden-section search then narrows it to `tol`.

    Returns:
        (argmax, max)
    """
    if not hi > lo:
        return lo, fn(lo)
    xs = np.linspace(lo, hi, scan)
    fs = [fn(x) for x in xs]
    k = int(np.argmax(fs))
    best_x, best_f = float(xs[k]), float(fs[k])
    a, b = float(xs[max(k - 1, 0)]), float(xs[min(k + 1, scan - 1)])

    x1 = b - GOLDEN * (b - a)
    x2 = a + GOLDEN * (b - a)
    f1, f2 = fn(x1), fn(x2)
    for _ in range(max_iter):
        if b - a <= tol * max(1.0, abs(a) + abs(b)):
            break
        if f1 >= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - GOLDEN * (b - a)
            f1 = fn(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + GOLDEN * (b - a)
            f2 = fn(x2)

    for x, f in ((x1, f1), (x2, f2)):
        if f > best_f:
            best_x, best_f = x, f
    return best_x, best_f


def golden_section_int(fn: Callable[[int], float], lo: int, hi: int) -> Tuple[int, float]:
    """Integer variant: golden narrowing, then an exhaustive check of the last few points."""
    cache: Dict[int, float] = {}

    def f(n: int) -> float:
        if n not in cache:
            cache[n] = fn(n)
        return cache[n]

    a, b = lo, hi
    while b - a > 4:
        x1 = int(round(b - GOLDEN * (b - a)))
        x2 = int(round(a + GOLDEN * (b - a)))
        if x1 == x2:
            x2 = x1 + 1
        if f(x1) >= f(x2):
            b = x2
        else:
            a = x1
    best = max(range(a, b + 1), key=lambda n: (f(n), -n))
    return best, f(best)


# =============================================================================
# ON-OFF POLICIES
# =============================================================================

def _require_onoff_model(params: ModelParams) -> None:
    if params.z > 0:
        raise ModelRestrictionError(
            f"On-off optimality holds only without a fixed cost (z={params.z}); "
            f"use optimal_lazy_discrete for z > 0"
        )
    if not params.fractional_samples:
        raise ModelRestrictionError("On-off optimization requires fractional samples")


def _onoff_period_trace(params: ModelParams, T: int, n: int) -> np.ndarray:
    """
    Steady-state posterior variances over one period of T - n off rounds
    followed by n rounds at rate B*T/n.

    The period-start variance x solves w(x) = q^n w(x + L rho), where w is
    the cross ratio that the constant-rate map scales by q each round.
    """
    L = T - n
    S = params.B * T / n
    a = S / params.sigma
    rho = params.rho
    root = math.sqrt(a * a * rho * rho + 4.0 * a * rho)
    v_star = 2.0 * rho / (a * rho + root)
    if L == 0:
        return np.full(T, v_star)

    u = -(a * rho + root) / (2.0 * a)
    qn = (1.0 / (1.0 + a * (v_star + rho)) ** 2) ** n

    def w(y: float) -> float:
        return (y - v_star) / (y - u)

    def gap(x: float) -> float:
        return w(x) - qn * w(x + L * rho)

    hi = v_star + L * rho + 1.0
    while gap(hi) <= 0:
        hi *= 2.0
    x = v_star if gap(v_star) >= 0 else brentq(gap, v_star, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)

    off = x + rho * np.arange(1, L + 1)
    on = constant_rate_path(x + L * rho, S, n, params)
    return np.concatenate([off, on])


def _onoff_value(params: ModelParams, T: int, n: int) -> float:
    v = _onoff_period_trace(params, T, n)
    return float(np.mean(np.maximum(params.c - v, 0.0)))


def optimal_onoff_for_T(params: ModelParams, T: int) -> OptResult:
    """
    Best on-off policy of period T.

    For a fixed number n of on rounds the value only grows with the rate,
    so the best rate spends the whole period budget: S = B*T/n with
    T - n idle rounds. The search is over n.

    Raises:
        ModelRestrictionError: z > 0 or integer sample mode.
    """
    _require_onoff_model(params)
    if int(T) != T or T < 1:
        raise InvalidParameterError(f"Period must be a positive integer, got {T}")
    T = int(T)

    if T <= EXHAUSTIVE_MAX_T:
        values = np.array([_onoff_value(params, T, n) for n in range(1, T + 1)])
        # Prefer the larger n on ties: lower rate, same value
        n = int(T - np.argmax(values[::-1]))
        value = float(values[n - 1])
        search = 'exhaustive'
    else:
        n, value = golden_section_int(lambda k: _onoff_value(params, T, k), 1, T)
        search = 'golden'

    policy = OnOffPolicy(T=T, S=params.B * T / n)
    logger.debug(f"On-off T={T}: n_on={n}, S={policy.S:.6g}, value={value:.12g}")
    return _result(
        policy, value, params.c,
        T=T, n_on=n, alpha=policy.alpha(params.B), search=search,
        binding='budget',
        schedule=render(policy, params),
    )


def _doubling_tail(values: Sequence[float]) -> float:
    """
    Gain still to come past the last period, assuming the increments of
    successive doublings keep shrinking by their last observed ratio.
    """
    if len(values) < 3:
        return 0.0
    d_prev = values[-2] - values[-3]
    d = values[-1] - values[-2]
    if d <= 0 or d_prev <= 0:
        return 0.0
    r = min(d / d_prev, MAX_TAIL_RATIO)
    return d * r / (1.0 - r)


def vstar_estimate(
    params: ModelParams,
    tol: float = 1e-6,
    T0: int = 1,
    max_T: int = 4096,
    min_doublings: int = 3,
    show_progress: bool = False,
) -> OptResult:
    """
    Estimate V* = sup_T Val(s^T) by doubling the on-off period.

    On-off values approach V* like O(1/T), so each doubling adds the
    geometric tail of the increments to the best value seen. Stops once two
    successive estimates differ by less than tol (after at least
    `min_doublings` doublings) or T exceeds max_T.

    The returned value is the extrapolated estimate. The policy and schedule
    are the best on-off policy seen; its value, a certified lower bound on
    V*, is diagnostics['certified_lower'].
    """
    _require_onoff_model(params)
    best: Optional[OptResult] = None
    history: List[Tuple[int, float]] = []
    estimates: List[float] = []
    converged = False
    periods = []
    T = int(T0)
    while T <= max_T:
        periods.append(T)
        T *= 2

    for k, T in enumerate(tqdm(periods, desc="V* doubling", disable=not show_progress)):
        result = optimal_onoff_for_T(params, T)
        history.append((T, result.value))
        if best is None or result.value > best.value:
            best = result
        values = [v for _, v in history]
        estimates.append(min(max(best.value, values[-1] + _doubling_tail(values)), params.c))
        logger.debug(f"V* doubling T={T}: value={result.value:.12g}, estimate={estimates[-1]:.12g}")
        if k >= max(min_doublings, 1) and abs(estimates[-1] - estimates[-2]) < tol:
            converged = True
            break

    if not converged:
        logger.warning(f"V* estimate did not converge to tol={tol} by T={history[-1][0]}")
    estimate = estimates[-1]
    logger.info(f"V* estimate {estimate:.10g} (best on-off {best.value:.10g} at T={best.diagnostics['T']})")
    diagnostics = dict(best.diagnostics)
    diagnostics.update(history=history, estimates=estimates, converged=converged, tol=tol,
                       certified_lower=best.value, tail=estimate - best.value)
    return OptResult(policy=best.policy, value=estimate, cost=params.c - estimate,
                     diagnostics=diagnostics, schedule=best.schedule)


def render_doubling(params: ModelParams, horizon: int, T0: int = 1) -> SamplingSchedule:
    """
    Concatenate one period of the optimal on-off policy for T = T0, 2 T0, ...
    until the horizon is filled.

    Every period starts with its idle rounds and is budget-balanced, so a
    truncated final period is still budget-valid.
    """
    _require_onoff_model(params)
    if horizon < 1:
        raise InvalidParameterError(f"horizon must be >= 1, got {horizon}")
    blocks = []
    filled = 0
    T = int(T0)
    while filled < horizon:
        period = optimal_onoff_for_T(params, T).schedule.array
        blocks.append(period[: horizon - filled])
        filled += len(blocks[-1])
        T *= 2
    return SamplingSchedule(tuple(np.concatenate(blocks)))


# =============================================================================
# LAZY POLICIES (DISCRETE)
# =============================================================================

def _lazy_samples(params: ModelParams, delta: int, v_r: float) -> float:
    return params.sigma * delta * params.rho / (v_r * (v_r + delta * params.rho))


def _lazy_event_sum(params: ModelParams, delta: int, v_r: float) -> float:
    i = np.arange(delta)
    return float(np.maximum(params.c - v_r - i * params.rho, 0.0).sum())


def _v_r_for_samples(params: ModelParams, delta: int, s: float) -> float:
    """Target variance reached by s samples from innovation v_r + delta*rho."""
    dr = delta * params.rho
    return 0.5 * (-dr + math.sqrt(dr * dr + 4.0 * params.sigma * dr / s))


def lazy_value_density(params: ModelParams, delta: int, v_r: float) -> float:
    """Value per unit of spend of one lazy event: Sigma / (s + z)."""
    return _lazy_event_sum(params, delta, v_r) / (_lazy_samples(params, delta, v_r) + params.z)


def lazy_long_run_value(
    params: ModelParams, delta: int, v_r: float, s: Optional[float] = None
) -> float:
    """
    Long-run value of the lazy policy (v_r, delta), saving first if needed.

    An event costs s + z and yields Sigma; events come every delta rounds,
    or every (s + z)/B rounds on average when the budget cannot keep up.
    """
    s = _lazy_samples(params, delta, v_r) if s is None else s
    cycle = max(delta, (s + params.z) / params.B)
    return _lazy_event_sum(params, delta, v_r) / cycle


def optimal_lazy_discrete(params: ModelParams, max_saving_rounds: float = 1e6) -> OptResult:
    """
    Best lazy policy in the discrete model.

    For each event spacing delta the long-run value is
    min(Sigma/delta, B*Sigma/(s + z)) as a function of v_r: the minimum of a
    decreasing and a quasiconcave function, hence quasiconcave. Candidates
    are its golden-section maximum, the budget root (s + z = B*delta) and
    the lazy lower end v_r = c - delta*rho. In integer mode s is rounded
    down and up and v_r recomputed.

    Returns the null policy (value 0) when every candidate needs more than
    `max_saving_rounds` rounds of saving per event.
    """
    rho, c = params.rho, params.c
    tiny = 1e-12 * c
    candidates: List[Tuple[float, int, float, float]] = []    # (value, delta, v_r, s)

    def consider(delta: int, v_r: float, s: Optional[float] = None) -> None:
        lo = max(c - delta * rho, 0.0)
        if not (v_r > 0 and v_r < c and v_r + ATOL * max(1.0, c) >= lo):
            return
        s = _lazy_samples(params, delta, v_r) if s is None else s
        if (s + params.z) / params.B > max_saving_rounds:
            return
        candidates.append((lazy_long_run_value(params, delta, v_r, s), delta, v_r, s))

    n_delta = max(1, int(math.ceil(c / rho - 1e-12)))
    for delta in range(1, n_delta + 1):
        lo = max(c - delta * rho, tiny)
        v_best, _ = golden_section(lambda v: lazy_long_run_value(params, delta, v), lo, c * (1 - 1e-12))
        points = [v_best, lo]
        K = params.B * delta - params.z
        if K > 0:
            points.append(_v_r_for_samples(params, delta, K))

        for v_r in points:
            if params.fractional_samples:
                consider(delta, v_r)
                continue
            s_real = _lazy_samples(params, delta, max(v_r, tiny))
            for k in {math.floor(s_real), math.ceil(s_real), math.floor(K + 1e-9) if K > 0 else 0}:
                if k >= 1:
                    consider(delta, _v_r_for_samples(params, delta, k), float(k))

    if not candidates or max(candidates)[0] <= 0:
        logger.info("No affordable lazy event; returning the null policy")
        return _result(SamplingSchedule.null(), 0.0, c, binding='infeasible', candidates=len(candidates))

    value, delta, v_r, s = max(candidates)
    saving = (s + params.z) / params.B > delta + ATOL
    policy = LazyPolicy(v_r=v_r, delta=delta, s=None if params.fractional_samples else s)
    logger.info(f"Lazy discrete optimum: delta={delta}, v_r={v_r:.6g}, s={s:.6g}, value={value:.10g}")
    return _result(
        policy, value, c,
        delta=delta, v_r=v_r, samples_per_event=s,
        density=lazy_value_density(params, delta, v_r) if params.fractional_samples
        else _lazy_event_sum(params, delta, v_r) / (s + params.z),
        binding='saving' if saving else 'budget',
        candidates=len(candidates),
    )


# =============================================================================
# LAZY POLICIES (CONTINUOUS)
# =============================================================================

def _cont_gap(s: float, c: float) -> float:
    return s * c * c / (1.0 + s * c)


def _cont_cost(s: float, params: ContinuousParams) -> float:
    return s + params.f * min(1.0, _cont_gap(s, params.c))


def continuous_lazy_value(s: float, params: ContinuousParams) -> float:
    """Long-run value of atoms of size s applied whenever the variance reaches c."""
    gap = _cont_gap(s, params.c)
    return 0.5 * gap * gap / max(gap, _cont_cost(s, params) / params.B)


def optimal_lazy_continuous(params: ContinuousParams) -> OptResult:
    """
    Best lazy atom size in the continuous model.

    An atom of size s applied at variance c opens a gap c - c/(1 + sc);
    the variance climbs back in that much time, accruing half its square in
    value. With f = 0 the optimum is closed form; otherwise the value is
    maximized over log s and compared against the budget-binding roots of
    B * gap = s + f * min(1, gap).
    """
    c, B, f = params.c, params.B, params.f
    if f == 0:
        if B < 2.0 / (c * c):
            s, binding = 1.0 / c, 'saving'
        else:
            s, binding = (B * c * c - 1.0) / c, 'budget'
        # Exact at the optimum; avoids round-off from the generic formula
        value = B * c ** 3 / 8.0 if binding == 'saving' else 0.5 * (c - 1.0 / (B * c))
        candidates = [(value, s)]
    else:
        candidates = []
        log_s, val = golden_section(
            lambda x: continuous_lazy_value(math.exp(x), params),
            math.log(1e-8 / c), math.log(1e8 / c), tol=1e-14,
        )
        candidates.append((val, math.exp(log_s)))

        def budget_gap(x: float) -> float:
            s_ = math.exp(x)
            return B * _cont_gap(s_, c) - _cont_cost(s_, params)

        grid = np.linspace(math.log(1e-8 / c), math.log(1e8 / c), 400)
        signs = np.sign([budget_gap(x) for x in grid])
        for k in np.flatnonzero(signs[:-1] * signs[1:] < 0):
            root = brentq(budget_gap, grid[k], grid[k + 1], xtol=1e-14)
            candidates.append((continuous_lazy_value(math.exp(root), params), math.exp(root)))
        value, s = max(candidates)
        gap = _cont_gap(s, c)
        binding = 'saving' if _cont_cost(s, params) / B > gap * (1 + 1e-9) else 'budget'

    gap = _cont_gap(s, c)
    logger.info(f"Lazy continuous optimum: atom={s:.6g}, gap={gap:.6g}, value={value:.10g}")
    return _result(
        lazy_cycle_policy(s, c), value, c,
        atom=s, gap=gap, binding=binding,
        density=0.5 * gap * gap / _cont_cost(s, params),
        candidates=len(candidates),
    )


def render_continuous_lazy(result: OptResult, params: ContinuousParams, horizon: float):
    """Finite-horizon save-then-spend rendering of a continuous lazy optimum."""
    return save_then_spend_policy(result.diagnostics['atom'], params, horizon)


def regular_atomic_continuous(params: ContinuousParams) -> OptResult:
    """
    Equally spaced atoms from the start, with no saving phase.

    When the lazy optimum is already budget-binding it is regular and is
    returned. Otherwise the post-atom variance is pinned at c/2 and the
    spacing r is the positive root of

        (1/w - 1/(w + r)) + f * min(r, 1) = B * r

    whose left side is concave in r and vanishes at 0.
    """
    lazy = optimal_lazy_continuous(params)
    if lazy.diagnostics['binding'] == 'budget':
        lazy.diagnostics['regular'] = 'lazy'
        return lazy

    c, B, f = params.c, params.B, params.f
    w = c / 2.0

    def balance(r: float) -> float:
        return (1.0 / w - 1.0 / (w + r)) + f * min(r, 1.0) - B * r

    if 1.0 / (w * w) + f <= B:
        lazy.diagnostics['regular'] = 'lazy'
        return lazy

    lo = 1e-12 * max(1.0, c)
    hi = max(c, 1.0)
    while balance(hi) > 0:
        hi *= 2.0
    r = brentq(balance, lo, hi, xtol=1e-14)

    atom = 1.0 / w - 1.0 / (w + r)
    value = (max(c - w, 0.0) ** 2 - max(c - w - r, 0.0) ** 2) / (2.0 * r)
    logger.info(f"Regular atomic policy: spacing={r:.6g}, atom={atom:.6g}, value={value:.10g}")
    policy = ContinuousPolicy(horizon=r, atoms=((0.0, atom),))
    return _result(policy, value, c, atom=atom, spacing=r, post_atom=w,
                   binding='budget', regular='pinned')


# =============================================================================
# DP ORACLE
# =============================================================================

def _variance_grid(params: ModelParams, horizon: int, size: int) -> np.ndarray:
    top = params.v0 + horizon * params.rho
    split = min(2.0 * params.c, top)
    n_lin = max(size // 2, 2) if top > split else size
    grid = np.linspace(0.0, split, n_lin)
    if top > split:
        grid = np.concatenate([grid, np.geomspace(split, top, size - n_lin + 1)[1:]])
    return np.unique(np.append(grid, params.v0))


def _upper_bound(
    params: ModelParams, horizon: int, grid: np.ndarray, show_progress: bool
) -> Tuple[float, float]:
    """
    Lagrangian bound: for any lam >= 0 the optimum is at most
    (lam*B*T + max over unconstrained policies of sum(r - lam*C)) / T.

    States round down; reaching the cell [g_j, g_{j+1}) is credited the
    value at g_j and charged the cost of reaching g_{j+1}. Both are
    optimistic, so the grid value bounds the true one.
    """
    c, rho, sigma = params.c, params.rho, params.sigma
    M = len(grid)
    reward = np.maximum(c - grid, 0.0)
    v_tilde = grid + rho
    upper_edge = np.append(grid[1:], np.inf)
    cell_top = np.append(grid[1:], np.inf) + rho

    cost_lb = params.z + sigma * np.maximum(1.0 / upper_edge[None, :] - 1.0 / v_tilde[:, None], 0.0)
    reachable = grid[None, :] < cell_top[:, None]
    idle_next = np.searchsorted(grid, v_tilde, side='right') - 1
    idle_reward = np.maximum(c - v_tilde, 0.0)
    start = int(np.searchsorted(grid, params.v0, side='right') - 1)

    def dual(lam: float) -> float:
        J = np.zeros(M)
        penalized = np.where(reachable, reward[None, :] - lam * cost_lb, -np.inf)
        for _ in range(horizon):
            sample = (penalized + J[None, :]).max(axis=1)
            J = np.maximum(sample, idle_reward + J[idle_next])
        return (lam * params.B * horizon + J[start]) / horizon

    evals = tqdm(desc="Oracle upper bound", disable=not show_progress, unit="eval")
    cache: Dict[float, float] = {}

    def f(lam: float) -> float:
        if lam not in cache:
            cache[lam] = dual(lam)
            evals.update(1)
        return cache[lam]

    hi = 1.0 / max(c, params.B)
    for _ in range(80):
        if f(2.0 * hi) >= f(hi):
            break
        hi *= 2.0
    a, b = 0.0, 2.0 * hi
    for _ in range(80):
        x1 = b - GOLDEN * (b - a)
        x2 = a + GOLDEN * (b - a)
        if f(x1) <= f(x2):
            b = x2
        else:
            a = x1
        if b - a <= 1e-9 * max(1.0, b):
            break
    evals.close()
    lam, value = min(cache.items(), key=lambda kv: kv[1])
    return min(value, c), lam


def _lower_bound(
    params: ModelParams,
    horizon: int,
    grid: np.ndarray,
    units_per_round: int,
    budget_levels: int,
    show_progress: bool,
) -> Tuple[float, SamplingSchedule]:
    """
    Value of an explicit budget-valid policy found by DP over
    (round, variance gridpoint, banked budget in units of B/units_per_round).

    States round up and costs round up to whole units, so the tracked
    value never exceeds the value the schedule actually earns.
    """
    c, rho, sigma = params.c, params.rho, params.sigma
    V = len(grid)
    m = units_per_round
    K = budget_levels
    unit = params.B / m
    reward = np.maximum(c - grid, 0.0)
    v_tilde = grid + rho
    idle_next = np.minimum(np.searchsorted(grid, v_tilde * (1 - 1e-12), side='left'), V - 1)

    with np.errstate(divide='ignore'):
        inv = np.where(grid > 0, 1.0 / np.where(grid > 0, grid, 1.0), np.inf)
    samples = sigma * (inv[None, :] - 1.0 / v_tilde[:, None])
    reachable = (grid[None, :] < v_tilde[:, None]) & np.isfinite(samples)
    samples = np.where(reachable, samples, 0.0)
    if not params.fractional_samples:
        samples = np.ceil(samples - 1e-9)
    units = np.where(reachable, np.ceil((samples + params.z) / unit - 1e-9), K + 1).astype(np.int64)
    reachable &= units <= K - 1

    available = np.minimum(np.arange(K) + m, K - 1)
    actions = np.empty((horizon, V, K), dtype=np.int32)
    L = np.zeros((V, K))
    for t in tqdm(range(horizon - 1, -1, -1), desc="Oracle lower bound", disable=not show_progress):
        new = np.empty((V, K))
        for i in range(V):
            best = idle_reward = reward[idle_next[i]] + L[idle_next[i], available]
            choice = np.full(K, -1, dtype=np.int32)
            js = np.flatnonzero(reachable[i])
            if len(js):
                bank = available[None, :] - units[i, js][:, None]
                ok = bank >= 0
                vals = np.where(ok, reward[js][:, None] + L[js[:, None], np.maximum(bank, 0)], -np.inf)
                k = np.argmax(vals, axis=0)
                top = vals[k, np.arange(K)]
                better = top > idle_reward
                best = np.where(better, top, idle_reward)
                choice = np.where(better, js[k], -1).astype(np.int32)
            new[i] = best
            actions[t, i] = choice
        L = new

    start = int(np.searchsorted(grid, params.v0))
    schedule = []
    i, b = start, 0
    for t in range(horizon):
        a = int(available[b])
        j = int(actions[t, i, b])
        if j < 0:
            schedule.append(0.0)
            i, b = int(idle_next[i]), a
        else:
            schedule.append(float(samples[i, j]))
            i, b = j, a - int(units[i, j])
    return float(L[start, 0]) / horizon, SamplingSchedule(tuple(schedule))


def dp_oracle(
    params: ModelParams,
    horizon: int,
    v_grid: int = 400,
    budget_grid: int = 200,
    lower_v_grid: Optional[int] = None,
    units_per_round: int = 4,
    tolerance: float = 0.05,
    show_progress: bool = False,
) -> OptResult:
    """
    Certified bracket on the optimal average value over `horizon` rounds.

    The upper bound is a Lagrangian relaxation: the prefix budget constraints
    are replaced by a single priced total-spend constraint, and the resulting
    unconstrained DP runs on a rounded-down variance grid. The dual is
    minimized over the price. This bounds the direct budget-tracking DP from
    above, so it can be looser than that DP would be, but it needs no budget
    axis. The lower bound is the tracked value of a budget-valid schedule from
    a rounded-up DP over (variance, banked budget units), which never exceeds
    what that schedule earns.

    Args:
        params: Model parameters (v0 is the starting variance).
        horizon: Number of rounds T.
        v_grid: Variance gridpoints for the upper bound.
        budget_grid: Banked-budget levels for the lower bound.
        lower_v_grid: Variance gridpoints for the lower bound (default min(v_grid, 200)).
        units_per_round: Budget units accrued per round in the lower bound.
        tolerance: Slack above tolerance * c is reported as a warning.
        show_progress: Show tqdm progress bars.

    Returns:
        OptResult whose value is the lower bound, whose schedule is the
        budget-valid policy certifying it, and whose diagnostics carry
        'lower', 'upper' and 'slack'.
    """
    if horizon < 1:
        raise InvalidParameterError(f"Oracle horizon must be >= 1, got {horizon}")
    if v_grid < 4 or budget_grid < 2 or units_per_round < 1:
        raise InvalidParameterError("Oracle grids are too small")

    grid_up = _variance_grid(params, horizon, v_grid)
    grid_lo = _variance_grid(params, horizon, lower_v_grid or min(v_grid, 200))
    levels = min(budget_grid, units_per_round * (horizon + 1) + 1)

    upper, lam = _upper_bound(params, horizon, grid_up, show_progress)
    lower, schedule = _lower_bound(params, horizon, grid_lo, units_per_round, levels, show_progress)
    upper = max(upper, lower)
    slack = upper - lower
    if slack > tolerance * params.c:
        logger.warning(
            f"Oracle bracket [{lower:.6g}, {upper:.6g}] is wider than {tolerance:.0%} of c; "
            f"refine the grids"
        )
    logger.info(f"Oracle T={horizon}: lower={lower:.8g}, upper={upper:.8g}, slack={slack:.3g}")
    return _result(
        schedule, lower, params.c,
        lower=lower, upper=upper, slack=slack, lam=lam, horizon=horizon,
        v_grid=len(grid_up), lower_v_grid=len(grid_lo), budget_levels=levels,
        units_per_round=units_per_round, within_tolerance=bool(slack <= tolerance * params.c),
        schedule=schedule,
    )

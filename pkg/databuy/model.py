# SPDX-License-Identifier: Apache-2.0
# DATABUY MODEL - GAUSSIAN DRIFT ESTIMATION
# Parameters, the one-round variance recursion, trace accounting and a world simulator

"""
Gaussian drift model.

A hidden state x_t drifts by N(0, rho) every round. Each sample is x_t plus
N(0, sigma) noise. After drift the posterior variance is the innovation
variance v_tilde = v + rho; taking s samples in the round brings it to

    v' = v_tilde / (1 + (s / sigma) * v_tilde)

The decision maker either guesses (loss v') or takes the outside option
(loss c), so the per-round loss is min(v', c) and the per-round value over
the null policy is max(c - v', 0).

Conventions:
    - Drift is applied once at the start of a round; all samples of that
      round act on the same innovation variance.
    - Accounting starts at round 1, after the first innovation.
    - In fractional mode a fraction alpha of a sample is one sample with
      noise variance sigma / alpha; integer mode rejects non-integers.
"""

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

from .errors import InvalidParameterError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

# Absolute tolerance for comparisons of closed-form quantities
ATOL = 1e-12


# =============================================================================
# PARAMETERS
# =============================================================================

@dataclass(frozen=True)
class ModelParams:
    """
    Parameters of the Gaussian instance.

    Attributes:
        rho: Drift variance per round.
        sigma: Noise variance of a single sample.
        c: Loss of the outside option.
        B: Budget accrued per round.
        z: Fixed cost paid in every round with at least one sample.
        v0: Posterior variance before round 1 (defaults to rho).
        fractional_samples: Allow non-integer sample counts.
    """
    rho: float = 1.0
    sigma: float = 1.0
    c: float = 0.75
    B: float = 1.0
    z: float = 0.0
    v0: Optional[float] = None
    fractional_samples: bool = True

    def __post_init__(self):
        for name in ('rho', 'sigma', 'c', 'B'):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise InvalidParameterError(f"{name} must be positive and finite, got {value}")
        if not (self.z >= 0 and math.isfinite(self.z)):
            raise InvalidParameterError(f"z must be nonnegative and finite, got {self.z}")
        if self.v0 is None:
            object.__setattr__(self, 'v0', float(self.rho))
        elif not (self.v0 >= 0 and math.isfinite(self.v0)):
            raise InvalidParameterError(f"v0 must be nonnegative and finite, got {self.v0}")

    def with_(self, **changes) -> 'ModelParams':
        """Copy with some fields replaced."""
        return replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ModelParams':
        known = {'rho', 'sigma', 'c', 'B', 'z', 'v0', 'fractional_samples'}
        unknown = set(data) - known
        if unknown:
            raise InvalidParameterError(f"Unknown model parameters: {sorted(unknown)}")
        return cls(**data)


def check_samples(s: float, params: ModelParams) -> float:
    """Validate one sample count against the model's sample mode."""
    if not s >= 0:
        raise InvalidParameterError(f"Sample count must be nonnegative, got {s}")
    if not params.fractional_samples and abs(s - round(s)) > ATOL:
        raise InvalidParameterError(f"Integer sample mode rejects fractional count {s}")
    return float(s)


def sampling_cost(s: ArrayLike, z: float) -> ArrayLike:
    """Budget charged for s samples in one round: s + z when s > 0."""
    s = np.asarray(s, dtype=float)
    cost = s + z * (s > 0)
    return float(cost) if cost.ndim == 0 else cost


# =============================================================================
# VARIANCE RECURSION
# =============================================================================

def innovation(v: float, params: ModelParams) -> float:
    """Variance after one round of drift: v + rho."""
    if not v >= 0:
        raise InvalidParameterError(f"Variance must be nonnegative, got {v}")
    return v + params.rho


def posterior_variance(v_tilde: ArrayLike, s: ArrayLike, sigma: float) -> ArrayLike:
    """
    Variance after s samples taken against innovation variance v_tilde.

    Works elementwise on arrays; no drift is applied.
    """
    return v_tilde / (1.0 + (s / sigma) * v_tilde)


def kalman_step(v: float, s: float, params: ModelParams) -> float:
    """
    One full round: drift, then s samples.

    Args:
        v: Posterior variance at the end of the previous round.
        s: Samples taken this round.
        params: Model parameters.

    Returns:
        (v + rho) / (1 + (s / sigma) * (v + rho))
    """
    s = check_samples(s, params)
    return posterior_variance(innovation(v, params), s, params.sigma)


def samples_to_reach(v_from: float, v_target: float, sigma: float) -> float:
    """
    Samples that move variance v_from down to v_target with no drift in between.

    Inverse of posterior_variance: sigma * (1/v_target - 1/v_from).
    """
    if not v_target > 0:
        raise InvalidParameterError(f"Target variance must be positive, got {v_target}")
    if v_target > v_from + ATOL * max(1.0, abs(v_from)):
        raise InvalidParameterError(
            f"Target variance {v_target} exceeds starting variance {v_from}; "
            f"samples cannot raise variance"
        )
    if math.isinf(v_from):
        return sigma / v_target
    return max(sigma * (1.0 / v_target - 1.0 / v_from), 0.0)


# =============================================================================
# TRACES
# =============================================================================

@dataclass
class VarianceTrace:
    """
    Per-round variance record of a deterministic sampling schedule.

    All columns are numpy arrays of equal length; t starts at 1.
    """
    t: np.ndarray
    v_pre: np.ndarray
    s: np.ndarray
    v_post: np.ndarray
    loss: np.ndarray
    value: np.ndarray
    balance: np.ndarray
    c: float

    COLUMNS = ('t', 'v_pre', 's', 'v_post', 'loss', 'value', 'balance')

    @classmethod
    def from_arrays(
        cls,
        v_pre: Sequence[float],
        s: Sequence[float],
        v_post: Sequence[float],
        c: float,
        balance: Optional[Sequence[float]] = None,
    ) -> 'VarianceTrace':
        v_post = np.asarray(v_post, dtype=float)
        n = len(v_post)
        return cls(
            t=np.arange(1, n + 1),
            v_pre=np.asarray(v_pre, dtype=float),
            s=np.asarray(s, dtype=float),
            v_post=v_post,
            loss=np.minimum(v_post, c),
            value=np.maximum(c - v_post, 0.0),
            balance=np.zeros(n) if balance is None else np.asarray(balance, dtype=float),
            c=float(c),
        )

    def __len__(self) -> int:
        return len(self.v_post)

    def rows(self) -> Iterable[List[float]]:
        """Yield rows in COLUMNS order."""
        for i in range(len(self)):
            yield [getattr(self, name)[i] for name in self.COLUMNS]

    def columns(self) -> Dict[str, np.ndarray]:
        return {name: np.asarray(getattr(self, name)) for name in self.COLUMNS}


def trace_cost(trace: VarianceTrace) -> float:
    """Average per-round loss min(v_t, c)."""
    if len(trace) == 0:
        raise InvalidParameterError("Cannot average an empty trace")
    return float(np.mean(trace.loss))


def trace_value(trace: VarianceTrace) -> float:
    """Average per-round value max(c - v_t, 0)."""
    if len(trace) == 0:
        raise InvalidParameterError("Cannot average an empty trace")
    return float(np.mean(trace.value))


# =============================================================================
# WORLD SIMULATION
# =============================================================================

@dataclass
class WorldTrace:
    """
    One generative run of the hidden state and the Bayesian estimate.

    Columns have one entry per round; `sample_mean` is the mean of that
    round's draws (nan when no sample was taken).
    """
    t: np.ndarray
    x: np.ndarray
    samples: np.ndarray
    sample_mean: np.ndarray
    posterior_mean: np.ndarray
    posterior_var: np.ndarray
    sq_error: np.ndarray
    seed: Optional[int] = None


@dataclass
class WorldEnsemble:
    """Squared-error statistics over many independent world paths."""
    posterior_var: np.ndarray
    mse: np.ndarray
    stderr: np.ndarray
    n_paths: int
    extra: Dict[str, Any] = field(default_factory=dict)


def _expand_samples(schedule: Any, horizon: int) -> np.ndarray:
    if hasattr(schedule, 'expand'):
        return np.asarray(schedule.expand(horizon), dtype=float)
    samples = np.asarray(schedule, dtype=float)
    if len(samples) < horizon:
        raise InvalidParameterError(
            f"Schedule has {len(samples)} rounds but horizon {horizon} was requested"
        )
    return samples[:horizon]


def _run_world(
    samples: np.ndarray, params: ModelParams, rng: np.random.Generator, n_paths: int
) -> Dict[str, np.ndarray]:
    horizon = len(samples)
    x = rng.normal(0.0, math.sqrt(params.v0), size=n_paths)
    mean = np.zeros(n_paths)
    v = params.v0

    xs = np.empty((horizon, n_paths))
    ybar = np.full((horizon, n_paths), np.nan)
    means = np.empty((horizon, n_paths))
    variances = np.empty(horizon)

    for i, s in enumerate(samples):
        x = x + rng.normal(0.0, math.sqrt(params.rho), size=n_paths)
        v_tilde = innovation(v, params)
        v = kalman_step(v, s, params)
        if s > 0:
            # The mean of s draws is sufficient: one draw with noise sigma / s
            y = x + rng.normal(0.0, math.sqrt(params.sigma / s), size=n_paths)
            gain = v_tilde / (v_tilde + params.sigma / s)
            mean = mean + gain * (y - mean)
            ybar[i] = y
        xs[i] = x
        means[i] = mean
        variances[i] = v

    return {'x': xs, 'ybar': ybar, 'mean': means, 'var': variances}


def simulate_world(schedule: Any, params: ModelParams, horizon: int, seed: Optional[int] = None) -> WorldTrace:
    """
    Draw one hidden-state path and run the posterior-mean estimator on it.

    Args:
        schedule: A SamplingSchedule or a sequence of per-round sample counts.
        params: Model parameters.
        horizon: Number of rounds.
        seed: Seed for np.random.default_rng.

    Returns:
        WorldTrace whose posterior_var equals the analytic variance trace.
    """
    if horizon < 1:
        raise InvalidParameterError(f"horizon must be >= 1, got {horizon}")
    samples = _expand_samples(schedule, horizon)
    for s in samples:
        check_samples(s, params)

    run = _run_world(samples, params, np.random.default_rng(seed), n_paths=1)
    x = run['x'][:, 0]
    mean = run['mean'][:, 0]
    return WorldTrace(
        t=np.arange(1, horizon + 1),
        x=x,
        samples=samples,
        sample_mean=run['ybar'][:, 0],
        posterior_mean=mean,
        posterior_var=run['var'],
        sq_error=(mean - x) ** 2,
        seed=seed,
    )


def simulate_world_ensemble(
    schedule: Any, params: ModelParams, horizon: int, n_paths: int, seed: Optional[int] = None
) -> WorldEnsemble:
    """Monte Carlo estimate of the estimator's per-round MSE over n_paths paths."""
    samples = _expand_samples(schedule, horizon)
    for s in samples:
        check_samples(s, params)
    run = _run_world(samples, params, np.random.default_rng(seed), n_paths=n_paths)
    err = (run['mean'] - run['x']) ** 2
    mse = err.mean(axis=1)
    stderr = err.std(axis=1, ddof=1) / math.sqrt(n_paths)
    logger.debug(f"World ensemble: {n_paths} paths x {horizon} rounds")
    return WorldEnsemble(posterior_var=run['var'], mse=mse, stderr=stderr, n_paths=n_paths)

# SPDX-License-Identifier: Apache-2.0
# DATABUY BINARY - TWO-STATE MARKOV EXTENSION
# Bayesian filtering of noisy bits, threshold policies and budget tuning

"""
Binary-Markov model.

The hidden bit x_t flips each round with probability eps. Every sample
matches the bit with probability 1/2 + delta_sig. The posterior is the
single number p = P(x_t = 1 | history); a threshold policy keeps sampling
while p lies in [theta, 1 - theta] and then guesses the more likely state.

The entropy form of the threshold (sample while the posterior entropy is
above H(theta)) makes the same decisions, since binary entropy falls
strictly with |p - 1/2|; posterior_entropy is exposed for reporting only.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from scipy.special import entr
from tqdm import tqdm

from .errors import InvalidParameterError

logger = logging.getLogger(__name__)

DEFAULT_CAP = 10_000


# =============================================================================
# TYPES
# =============================================================================

@dataclass(frozen=True)
class BinaryModel:
    """
    Attributes:
        eps: Per-round flip probability, in (0, 1/2).
        delta_sig: Signal advantage, in (0, 1/2); a sample is correct w.p. 1/2 + delta_sig.
        B: Average sample budget per round.
        p0: Prior P(x_0 = 1).
    """
    eps: float = 0.01
    delta_sig: float = 0.2
    B: float = 6.0
    p0: float = 0.5

    def __post_init__(self):
        if not 0 < self.eps < 0.5:
            raise InvalidParameterError(f"eps must lie in (0, 1/2), got {self.eps}")
        if not 0 < self.delta_sig < 0.5:
            raise InvalidParameterError(f"delta_sig must lie in (0, 1/2), got {self.delta_sig}")
        if not self.B > 0:
            raise InvalidParameterError(f"B must be positive, got {self.B}")
        if not 0 <= self.p0 <= 1:
            raise InvalidParameterError(f"p0 must lie in [0, 1], got {self.p0}")

    def to_dict(self) -> Dict[str, Any]:
        return {'eps': self.eps, 'delta_sig': self.delta_sig, 'B': self.B, 'p0': self.p0}


@dataclass(frozen=True)
class ThresholdPolicy:
    """Sample while theta <= p <= 1 - theta, at most `cap` samples per round."""
    theta: float
    cap: int = DEFAULT_CAP
    diagnostics: Dict[str, Any] = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        if not 0 < self.theta < 0.5:
            raise InvalidParameterError(f"theta must lie in (0, 1/2), got {self.theta}")
        if int(self.cap) != self.cap or self.cap < 0:
            raise InvalidParameterError(f"cap must be a nonnegative integer, got {self.cap}")

    def in_band(self, p: float) -> bool:
        return self.theta <= p <= 1.0 - self.theta

    def to_dict(self) -> Dict[str, Any]:
        return {'kind': 'threshold', 'theta': self.theta, 'cap': self.cap}


@dataclass
class BinaryTrace:
    """Per-round record of a threshold run plus summary statistics."""
    t: np.ndarray
    x: np.ndarray
    samples: np.ndarray
    p_prior: np.ndarray
    p: np.ndarray
    guess: np.ndarray
    correct: np.ndarray
    cap_hits: int = 0
    budget_pauses: int = 0
    seed: Optional[int] = None

    COLUMNS = ('t', 'x', 'p', 'samples', 'guess', 'correct')

    @property
    def accuracy(self) -> float:
        return float(np.mean(self.correct))

    @property
    def mean_samples(self) -> float:
        return float(np.mean(self.samples))

    @property
    def histogram(self) -> np.ndarray:
        return np.bincount(self.samples.astype(np.int64))

    def rows(self):
        for i in range(len(self.t)):
            yield [self.t[i], self.x[i], self.p[i], self.samples[i], self.guess[i], self.correct[i]]

    def columns(self) -> Dict[str, np.ndarray]:
        return {name: np.asarray(getattr(self, name)) for name in self.COLUMNS}

    def summary(self) -> Dict[str, Any]:
        return {
            'rounds': int(len(self.t)),
            'accuracy': self.accuracy,
            'mean_samples': self.mean_samples,
            'median_samples': float(np.median(self.samples)),
            'max_samples': int(self.samples.max()) if len(self.samples) else 0,
            'cap_hits': self.cap_hits,
            'budget_pauses': self.budget_pauses,
        }


@dataclass
class SampleRate:
    """Monte Carlo estimate of samples per round with its standard error."""
    mean: float
    stderr: float
    replications: int
    rounds: int


# =============================================================================
# FILTERING
# =============================================================================

def drift(p: float, eps: float) -> float:
    """Posterior after one round of possible flips: p(1 - eps) + (1 - p) eps."""
    if not 0 <= p <= 1:
        raise InvalidParameterError(f"Probability must lie in [0, 1], got {p}")
    return p * (1.0 - eps) + (1.0 - p) * eps


def bayes_update(p: float, bit: int, delta_sig: float) -> float:
    """Posterior after observing one sample bit."""
    if not 0 <= p <= 1:
        raise InvalidParameterError(f"Probability must lie in [0, 1], got {p}")
    hit, miss = 0.5 + delta_sig, 0.5 - delta_sig
    if bit:
        num = p * hit
        den = num + (1.0 - p) * miss
    else:
        num = p * miss
        den = num + (1.0 - p) * hit
    return num / den


def posterior_entropy(p):
    """Binary entropy in bits."""
    p = np.asarray(p, dtype=float)
    h = (entr(p) + entr(1.0 - p)) / math.log(2.0)
    return float(h) if h.ndim == 0 else h


def filter_posteriors(
    signals_per_round: Sequence[Sequence[int]], model: BinaryModel, p0: Optional[float] = None
) -> List[float]:
    """Posterior after each round from iterated drift and bayes_update."""
    p = model.p0 if p0 is None else p0
    out = []
    for bits in signals_per_round:
        p = drift(p, model.eps)
        for bit in bits:
            p = bayes_update(p, bit, model.delta_sig)
        out.append(p)
    return out


def forward_filter_enumeration(
    signals_per_round: Sequence[Sequence[int]], model: BinaryModel, p0: Optional[float] = None
) -> List[float]:
    """
    Posteriors P(x_t = 1 | signals up to t) by summing over every hidden path.

    Exponential in the horizon; meant as an independent check of the
    recursive filter for short horizons.
    """
    p0 = model.p0 if p0 is None else p0
    T = len(signals_per_round)
    paths = np.array(list(itertools.product((0, 1), repeat=T + 1)), dtype=np.int8)
    weight = np.where(paths[:, 0] == 1, p0, 1.0 - p0)
    hit, miss = 0.5 + model.delta_sig, 0.5 - model.delta_sig

    out = []
    for t, bits in enumerate(signals_per_round, start=1):
        flipped = paths[:, t] != paths[:, t - 1]
        weight = weight * np.where(flipped, model.eps, 1.0 - model.eps)
        for bit in bits:
            weight = weight * np.where(paths[:, t] == bit, hit, miss)
        out.append(float(weight[paths[:, t] == 1].sum() / weight.sum()))
    return out


# =============================================================================
# THRESHOLD POLICY
# =============================================================================

def _run(
    model: BinaryModel,
    policy: ThresholdPolicy,
    horizon: int,
    rng: np.random.Generator,
    ex_post: bool = False,
    record: bool = True,
) -> Dict[str, Any]:
    hit = 0.5 + model.delta_sig
    delay = int(math.ceil(math.sqrt(horizon))) if ex_post else 0

    x = int(rng.random() < model.p0)
    p = model.p0
    samples = np.zeros(horizon, dtype=np.int64)
    if record:
        xs = np.zeros(horizon, dtype=np.int8)
        priors = np.zeros(horizon)
        posts = np.zeros(horizon)
    cap_hits = 0
    pauses = 0
    spent = 0

    for t in range(horizon):
        if rng.random() < model.eps:
            x = 1 - x
        p = drift(p, model.eps)
        if record:
            priors[t] = p
        k = 0
        if t >= delay:
            while policy.in_band(p) and k < policy.cap:
                if ex_post and spent + 1 > model.B * (t + 1):
                    pauses += 1
                    break
                bit = x if rng.random() < hit else 1 - x
                p = bayes_update(p, bit, model.delta_sig)
                k += 1
                spent += 1
            else:
                if k >= policy.cap and policy.in_band(p):
                    cap_hits += 1
        samples[t] = k
        if record:
            xs[t] = x
            posts[t] = p

    out = {'samples': samples, 'cap_hits': cap_hits, 'budget_pauses': pauses}
    if record:
        out.update(x=xs, p_prior=priors, p=posts)
    return out


def run_threshold(
    model: BinaryModel,
    policy: ThresholdPolicy,
    horizon: int,
    seed: Optional[int] = None,
    ex_post: bool = False,
) -> BinaryTrace:
    """
    Run a threshold policy for `horizon` rounds.

    Each round: the bit may flip, the posterior drifts, samples are drawn
    while the posterior stays inside the band (up to the cap), and the
    guess is 1 iff p >= 1/2.

    With ex_post=True sampling starts only after ceil(sqrt(horizon))
    rounds and a sample is taken only if it keeps total samples within
    B * t, so the budget holds for every prefix.
    """
    if horizon < 1:
        raise InvalidParameterError(f"horizon must be >= 1, got {horizon}")
    run = _run(model, policy, horizon, np.random.default_rng(seed), ex_post=ex_post)
    guess = (run['p'] >= 0.5).astype(np.int8)
    if run['cap_hits']:
        logger.warning(f"Per-round sample cap {policy.cap} reached in {run['cap_hits']} rounds")
    return BinaryTrace(
        t=np.arange(1, horizon + 1),
        x=run['x'],
        samples=run['samples'],
        p_prior=run['p_prior'],
        p=run['p'],
        guess=guess,
        correct=(guess == run['x']).astype(np.int8),
        cap_hits=run['cap_hits'],
        budget_pauses=run['budget_pauses'],
        seed=seed,
    )


def expected_samples_per_round(
    model: BinaryModel,
    theta: float,
    mc_rounds: int = 100_000,
    seed: Optional[int] = None,
    cap: int = DEFAULT_CAP,
    replications: int = 10,
    episode_horizon: Optional[int] = None,
    show_progress: bool = False,
) -> SampleRate:
    """
    Long-run sampling rate of a threshold policy.

    `mc_rounds` are split over independent replications seeded from
    SeedSequence(seed).spawn, so the estimate does not depend on execution
    order; the standard error comes from the spread of replication means.
    With `episode_horizon` set, each replication instead averages fresh
    episodes of that many rounds started from p0.
    """
    if replications < 2:
        raise InvalidParameterError("At least two replications are needed for a standard error")
    policy = ThresholdPolicy(theta=theta, cap=cap)
    per_rep = max(mc_rounds // replications, 1)
    means = np.empty(replications)
    children = np.random.SeedSequence(seed).spawn(replications)
    for r, child in enumerate(tqdm(children, desc="MC replications", disable=not show_progress)):
        rng = np.random.default_rng(child)
        if episode_horizon is None:
            counts = _run(model, policy, per_rep, rng, record=False)['samples']
        else:
            n_episodes = max(per_rep // episode_horizon, 1)
            counts = np.concatenate([
                _run(model, policy, episode_horizon, rng, record=False)['samples']
                for _ in range(n_episodes)
            ])
        means[r] = counts.mean()
    mean = float(means.mean())
    stderr = float(means.std(ddof=1) / math.sqrt(replications))
    logger.debug(f"theta={theta:.6g}: {mean:.4f} +/- {stderr:.4f} samples/round")
    return SampleRate(mean=mean, stderr=stderr, replications=replications,
                      rounds=per_rep * replications)


def exact_expected_samples(
    model: BinaryModel, theta: float, horizon: int, cap: int = 8
) -> float:
    """
    Exact expected samples per round over `horizon` rounds from p0.

    Tracks the joint distribution of (hidden bit, posterior), merging
    equal posteriors; exponential in horizon * cap, so keep both small.
    """
    policy = ThresholdPolicy(theta=theta, cap=cap)
    hit = 0.5 + model.delta_sig
    states: Dict[tuple, float] = {(1, model.p0): model.p0, (0, model.p0): 1.0 - model.p0}
    total = 0.0

    def add(table: Dict[tuple, float], x: int, p: float, prob: float) -> None:
        key = (x, round(p, 14))
        table[key] = table.get(key, 0.0) + prob

    for _ in range(horizon):
        drifted: Dict[tuple, float] = {}
        for (x, p), prob in states.items():
            q = drift(p, model.eps)
            add(drifted, x, q, prob * (1.0 - model.eps))
            add(drifted, 1 - x, q, prob * model.eps)

        settled: Dict[tuple, float] = {}
        frontier = drifted
        for depth in range(cap + 1):
            nxt: Dict[tuple, float] = {}
            for (x, p), prob in frontier.items():
                if not policy.in_band(p) or depth == cap:
                    add(settled, x, p, prob)
                    continue
                total += prob
                add(nxt, x, bayes_update(p, x, model.delta_sig), prob * hit)
                add(nxt, x, bayes_update(p, 1 - x, model.delta_sig), prob * (1.0 - hit))
            frontier = nxt
            if not frontier:
                break
        states = settled
    return total / horizon


def tune_theta(
    model: BinaryModel,
    B: Optional[float] = None,
    tol: float = 0.05,
    seed: Optional[int] = 0,
    theta_min: float = 1e-6,
    theta_max: float = 0.5 - 1e-9,
    mc_rounds: int = 50_000,
    cap: int = DEFAULT_CAP,
    max_iter: int = 60,
    show_progress: bool = False,
) -> ThresholdPolicy:
    """
    Lowest threshold whose sampling rate stays within budget B.

    Bisection with common random numbers (the same seed at every theta).
    Stops once the rate lies in [B - tol, B]. If even theta_min samples
    less than B, theta_min is returned with a diagnostic.
    """
    B = model.B if B is None else B
    if not B > 0:
        raise InvalidParameterError(f"B must be positive, got {B}")

    def rate(theta: float) -> SampleRate:
        return expected_samples_per_round(model, theta, mc_rounds=mc_rounds, seed=seed, cap=cap)

    floor = rate(theta_min)
    if floor.mean <= B:
        logger.warning(
            f"Budget {B} exceeds the rate {floor.mean:.4g} reachable at theta={theta_min}; "
            f"returning the floor"
        )
        return ThresholdPolicy(theta=theta_min, cap=cap, diagnostics={
            'rate': floor.mean, 'stderr': floor.stderr, 'iterations': 0,
            'status': 'budget_not_binding',
        })

    lo, hi = theta_min, theta_max
    hi_rate = rate(hi)
    iterations = 0
    for iterations in tqdm(range(1, max_iter + 1), desc="Tuning theta", disable=not show_progress):
        if hi_rate.mean >= B - tol:
            break
        mid = 0.5 * (lo + hi)
        est = rate(mid)
        if est.mean > B:
            lo = mid
        else:
            hi, hi_rate = mid, est

    status = 'tuned' if hi_rate.mean >= B - tol else 'max_iter'
    logger.info(f"Tuned theta={hi:.6g}: {hi_rate.mean:.4f} samples/round (budget {B})")
    return ThresholdPolicy(theta=hi, cap=cap, diagnostics={
        'rate': hi_rate.mean, 'stderr': hi_rate.stderr, 'iterations': iterations,
        'status': status,
    })

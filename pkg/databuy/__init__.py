"""
databuy: budgeted data purchasing for a drifting estimate

A hidden state drifts every round; a decision maker buys noisy samples
from a per-round budget that can be banked, and either guesses the state
or takes an outside option. databuy simulates sampling policies, computes
their steady states and values, optimizes on-off and lazy policies,
brackets the finite-horizon optimum with a dynamic-programming oracle, and
covers a continuous-time variant and a binary Markov variant.

Quick Start:
    >>> from databuy import ModelParams, SamplingSchedule, steady_state, trace_cost
    >>> params = ModelParams(rho=1.0, sigma=1.0, c=0.75, B=1.0)
    >>> round(trace_cost(steady_state(SamplingSchedule((0.0, 2.0), periodic=True), params)), 6)
    0.582107

    # Optimizers
    >>> from databuy.optimize import optimal_onoff_for_T
    >>> optimal_onoff_for_T(params, 2).policy.S
    2.0
"""

__version__ = "0.1.0"
__author__ = "databuy contributors"

from .errors import (
    ArchiveError,
    ConfigError,
    ConvergenceError,
    DatabuyError,
    InfeasiblePolicyError,
    InvalidParameterError,
    InvalidScheduleError,
    ModelRestrictionError,
)
from .model import ModelParams, VarianceTrace, kalman_step, trace_cost, trace_value
from .policy import (
    LazyPolicy,
    OnOffPolicy,
    SamplingSchedule,
    simulate,
    steady_state,
    validate_budget,
)

__all__ = [
    "ModelParams",
    "VarianceTrace",
    "kalman_step",
    "trace_cost",
    "trace_value",
    "SamplingSchedule",
    "OnOffPolicy",
    "LazyPolicy",
    "simulate",
    "steady_state",
    "validate_budget",
    "DatabuyError",
    "InvalidParameterError",
    "InvalidScheduleError",
    "InfeasiblePolicyError",
    "ModelRestrictionError",
    "ConvergenceError",
    "ConfigError",
    "ArchiveError",
    "__version__",
]


# Lazy imports for the scipy-backed and I/O modules
def __getattr__(name):
    if name in ("optimal_onoff_for_T", "vstar_estimate", "optimal_lazy_discrete",
                "optimal_lazy_continuous", "dp_oracle", "OptResult"):
        from . import optimize
        return getattr(optimize, name)
    if name in ("ContinuousParams", "ContinuousPolicy", "simulate_continuous"):
        from . import continuous
        return getattr(continuous, name)
    if name in ("BinaryModel", "ThresholdPolicy", "run_threshold", "tune_theta"):
        from . import binary
        return getattr(binary, name)
    if name in ("ResultsReader", "ResultsWriter"):
        from . import loader
        return getattr(loader, name)
    if name in ("ExperimentConfig", "load_config", "save_config"):
        from . import protocol
        return getattr(protocol, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")

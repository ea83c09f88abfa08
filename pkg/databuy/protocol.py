# SPDX-License-Identifier: Apache-2.0
# DATABUY PROTOCOL - EXPERIMENT SCHEMA AND EXPORTS
# Versioned JSON experiment configs, policy specs and CSV/JSON writers

"""
Databuy experiment protocol (databuy-v1).

An experiment config is a JSON document:

    {
      "schema_version": "databuy-v1",
      "family": "discrete" | "continuous" | "binary",
      "name": "...",
      "model":     {...},   # ModelParams / ContinuousParams (+ v0) / BinaryModel fields
      "policy":    {...},   # optional policy spec, see build_policy
      "optimizer": {...},   # optional {"kind": ..., ...}
      "oracle":    {...},   # optional dp_oracle arguments
      "horizon": 100, "seed": 0, "output_step": 0.01, "out_dir": "results"
    }

Unknown top-level keys are kept in `extra` and written back unchanged.
"""

import csv
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Sequence, Union

from .binary import BinaryModel, ThresholdPolicy
from .continuous import ContinuousParams, ContinuousPolicy
from .errors import ConfigError, DatabuyError
from .model import ModelParams
from .policy import LazyPolicy, OnOffPolicy, SamplingSchedule

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "databuy-v1"


class ModelFamily(Enum):
    """Model family of an experiment."""
    DISCRETE = "discrete"
    CONTINUOUS = "continuous"
    BINARY = "binary"


class OptimizerKind(Enum):
    ONOFF = "onoff"
    VSTAR = "vstar"
    LAZY_DISCRETE = "lazy-discrete"
    LAZY_CONTINUOUS = "lazy-continuous"
    REGULAR_CONTINUOUS = "regular-continuous"


# Optimizers valid for each family
FAMILY_OPTIMIZERS = {
    ModelFamily.DISCRETE: {OptimizerKind.ONOFF, OptimizerKind.VSTAR, OptimizerKind.LAZY_DISCRETE},
    ModelFamily.CONTINUOUS: {OptimizerKind.LAZY_CONTINUOUS, OptimizerKind.REGULAR_CONTINUOUS},
    ModelFamily.BINARY: set(),
}

# CSV column order per trace type
DISCRETE_COLUMNS = ('t', 'v_pre', 's', 'v_post', 'loss', 'value', 'balance')
CONTINUOUS_COLUMNS = ('t', 'v', 'spend')
BINARY_COLUMNS = ('t', 'x', 'p', 'samples', 'guess', 'correct')


@dataclass
class ExperimentConfig:
    """
    One experiment: a model family, its parameters and what to run.

    Exactly one model family per config; the `model` block is interpreted
    by that family.
    """
    family: str = ModelFamily.DISCRETE.value
    model: Dict[str, Any] = field(default_factory=dict)
    name: str = "experiment"
    schema_version: str = SCHEMA_VERSION
    policy: Optional[Dict[str, Any]] = None
    optimizer: Optional[Dict[str, Any]] = None
    oracle: Optional[Dict[str, Any]] = None
    horizon: Optional[Union[int, float]] = None
    seed: Optional[int] = None
    output_step: Optional[float] = None
    out_dir: str = "results"

    extra: Dict[str, Any] = field(default_factory=dict)

    KNOWN_FIELDS = (
        'family', 'model', 'name', 'schema_version', 'policy', 'optimizer', 'oracle',
        'horizon', 'seed', 'output_step', 'out_dir',
    )

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(
                f"Unsupported schema version {self.schema_version!r}; expected {SCHEMA_VERSION!r}"
            )
        try:
            ModelFamily(self.family)
        except ValueError:
            raise ConfigError(
                f"Unknown model family {self.family!r}; "
                f"expected one of {[f.value for f in ModelFamily]}"
            ) from None
        if self.optimizer is not None:
            kind = self.optimizer.get('kind')
            try:
                parsed = OptimizerKind(kind)
            except ValueError:
                raise ConfigError(f"Unknown optimizer kind {kind!r}") from None
            if parsed not in FAMILY_OPTIMIZERS[self.model_family]:
                raise ConfigError(f"Optimizer {kind!r} does not apply to the {self.family} family")

    @property
    def model_family(self) -> ModelFamily:
        return ModelFamily(self.family)

    def to_dict(self) -> Dict[str, Any]:
        """Convert to a JSON-ready dictionary."""
        result = {name: getattr(self, name) for name in self.KNOWN_FIELDS}
        result.update(self.extra)
        return result

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ExperimentConfig':
        """Create from a dictionary; unknown keys go to `extra`."""
        if not isinstance(data, dict):
            raise ConfigError(f"Config must be a JSON object, got {type(data).__name__}")
        known = {k: v for k, v in data.items() if k in cls.KNOWN_FIELDS}
        extra = {k: v for k, v in data.items() if k not in cls.KNOWN_FIELDS and not k.startswith('_')}
        if 'schema_version' not in known:
            raise ConfigError("Config is missing 'schema_version'")
        return cls(**known, extra=extra)


# =============================================================================
# LOAD / SAVE
# =============================================================================

def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """Read and validate an experiment config."""
    path = Path(path)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config {path} is not valid JSON: {e}") from e
    config = ExperimentConfig.from_dict(data)
    build_model(config)
    logger.debug(f"Loaded config {config.name!r} ({config.family}) from {path}")
    return config


def save_config(config: ExperimentConfig, path: Union[str, Path]) -> None:
    write_json(config.to_dict(), path)


def write_json(data: Dict[str, Any], path: Union[str, Path]) -> None:
    """Sorted keys and a trailing newline, so identical data gives identical bytes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write('\n')


# =============================================================================
# BUILDERS
# =============================================================================

def build_model(config: ExperimentConfig) -> Any:
    """ModelParams, ContinuousParams or BinaryModel for the config's family."""
    block = dict(config.model)
    try:
        if config.model_family is ModelFamily.DISCRETE:
            return ModelParams.from_dict(block)
        if config.model_family is ModelFamily.CONTINUOUS:
            block.pop('v0', None)
            return ContinuousParams(**block)
        return BinaryModel(**block)
    except TypeError as e:
        raise ConfigError(f"Invalid {config.family} model block: {e}") from e
    except DatabuyError as e:
        raise ConfigError(f"Invalid {config.family} model block: {e}") from e


def continuous_v0(config: ExperimentConfig) -> float:
    return float(config.model.get('v0', 0.0))


def build_policy(config: ExperimentConfig) -> Any:
    """
    Policy object for the config's `policy` block.

    Kinds: discrete 'schedule' | 'onoff' | 'lazy' | 'null';
    continuous 'continuous'; binary 'threshold' (its 'ex_post' flag is read
    by the runner, not the policy).
    """
    spec = config.policy
    if spec is None:
        return None
    spec = dict(spec)
    kind = spec.pop('kind', 'schedule' if 'samples' in spec else None)
    family = config.model_family
    try:
        if family is ModelFamily.DISCRETE:
            if kind == 'schedule':
                return SamplingSchedule.from_dict(spec)
            if kind == 'null':
                return SamplingSchedule.null()
            if kind == 'onoff':
                return OnOffPolicy(**spec)
            if kind == 'lazy':
                return LazyPolicy(**spec)
        elif family is ModelFamily.CONTINUOUS and kind == 'continuous':
            return ContinuousPolicy.from_dict(spec)
        elif family is ModelFamily.BINARY and kind == 'threshold':
            spec.pop('ex_post', None)
            return ThresholdPolicy(**spec)
    except (TypeError, KeyError) as e:
        raise ConfigError(f"Invalid {kind!r} policy: {e}") from e
    except DatabuyError as e:
        raise ConfigError(f"Invalid {kind!r} policy: {e}") from e
    raise ConfigError(f"Policy kind {kind!r} does not apply to the {config.family} family")


# =============================================================================
# CSV EXPORT
# =============================================================================

def _format(value: Any) -> str:
    if isinstance(value, (int,)) or (hasattr(value, 'dtype') and value.dtype.kind in 'iub'):
        return str(int(value))
    return format(float(value), '.17g')


def write_csv(path: Union[str, Path], columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> int:
    """Write rows under a fixed header; returns the number of data rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_format(v) for v in row])
            n += 1
    logger.debug(f"Wrote {n} rows to {path}")
    return n


def write_discrete_csv(trace, path: Union[str, Path]) -> int:
    return write_csv(path, DISCRETE_COLUMNS, trace.rows())


def write_continuous_csv(trace, path: Union[str, Path]) -> int:
    return write_csv(path, CONTINUOUS_COLUMNS, trace.rows())


def write_binary_csv(trace, path: Union[str, Path]) -> int:
    return write_csv(path, BINARY_COLUMNS, trace.rows())

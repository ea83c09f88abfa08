# SPDX-License-Identifier: Apache-2.0

"""Tests for experiment configs, policy specs and CSV/JSON exports."""

import json

import numpy as np
import pytest

from databuy.binary import BinaryModel, ThresholdPolicy
from databuy.continuous import ContinuousParams, ContinuousPolicy
from databuy.errors import ConfigError
from databuy.model import ModelParams
from databuy.policy import LazyPolicy, OnOffPolicy, SamplingSchedule, simulate
from databuy.protocol import (
    DISCRETE_COLUMNS,
    SCHEMA_VERSION,
    ExperimentConfig,
    build_model,
    build_policy,
    continuous_v0,
    load_config,
    save_config,
    write_csv,
    write_discrete_csv,
    write_json,
)


def _config(**overrides):
    data = {'schema_version': SCHEMA_VERSION, 'family': 'discrete',
            'model': {'rho': 1.0, 'sigma': 1.0, 'c': 0.75, 'B': 1.0}}
    data.update(overrides)
    return ExperimentConfig.from_dict(data)


class TestExperimentConfig:

    def test_round_trip_keeps_unknown_keys(self, tmp_path):
        config = _config(name='k2', notes='first try', horizon=50)
        path = tmp_path / 'k2.json'
        save_config(config, path)
        loaded = load_config(path)
        assert loaded.name == 'k2'
        assert loaded.horizon == 50
        assert loaded.extra == {'notes': 'first try'}
        assert json.loads(path.read_text())['notes'] == 'first try'

    def test_underscore_keys_dropped(self):
        assert _config(_comment='ignored').extra == {}

    def test_schema_version_required(self):
        with pytest.raises(ConfigError, match="schema_version"):
            ExperimentConfig.from_dict({'family': 'discrete'})
        with pytest.raises(ConfigError, match="Unsupported"):
            _config(schema_version='databuy-v0')

    def test_unknown_family(self):
        with pytest.raises(ConfigError, match="family"):
            _config(family='poisson')

    def test_optimizer_must_fit_family(self):
        assert _config(optimizer={'kind': 'onoff', 'T': 2}).optimizer['T'] == 2
        with pytest.raises(ConfigError, match="does not apply"):
            _config(optimizer={'kind': 'lazy-continuous'})
        with pytest.raises(ConfigError, match="Unknown optimizer"):
            _config(optimizer={'kind': 'annealing'})

    def test_not_an_object(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict([1, 2])

    def test_invalid_json(self, tmp_path):
        path = tmp_path / 'bad.json'
        path.write_text('{"schema_version": ')
        with pytest.raises(ConfigError, match="not valid JSON"):
            load_config(path)

    def test_bad_model_block_rejected_on_load(self, tmp_path):
        path = tmp_path / 'bad_model.json'
        write_json({'schema_version': SCHEMA_VERSION, 'model': {'rho': -1.0}}, path)
        with pytest.raises(ConfigError):
            load_config(path)
        write_json({'schema_version': SCHEMA_VERSION, 'model': {'drift': 1.0}}, path)
        with pytest.raises(ConfigError):
            load_config(path)


class TestBuilders:

    def test_models(self):
        assert build_model(_config()) == ModelParams(c=0.75)
        continuous = _config(family='continuous', model={'c': 2.0, 'B': 0.5, 'v0': 0.3})
        assert build_model(continuous) == ContinuousParams(c=2.0, B=0.5)
        assert continuous_v0(continuous) == 0.3
        binary = _config(family='binary', model={'eps': 0.02})
        assert build_model(binary) == BinaryModel(eps=0.02)

    def test_discrete_policies(self):
        assert build_policy(_config()) is None
        schedule = build_policy(_config(policy={'samples': [0, 2], 'periodic': True}))
        assert schedule == SamplingSchedule((0.0, 2.0), periodic=True)
        assert build_policy(_config(policy={'kind': 'null'})) == SamplingSchedule.null()
        assert build_policy(_config(policy={'kind': 'onoff', 'T': 4, 'S': 2.0})) == OnOffPolicy(4, 2.0)
        lazy = build_policy(_config(policy={'kind': 'lazy', 'v_r': 0.3, 'delta': 1}))
        assert lazy == LazyPolicy(v_r=0.3, delta=1)

    def test_continuous_policy(self):
        config = _config(family='continuous', model={},
                         policy={'kind': 'continuous', 'horizon': 2.0, 'atoms': [[1.0, 1.0]]})
        assert build_policy(config) == ContinuousPolicy(horizon=2.0, atoms=((1.0, 1.0),))

    def test_threshold_policy_ignores_ex_post(self):
        config = _config(family='binary', model={},
                         policy={'kind': 'threshold', 'theta': 0.1, 'ex_post': True})
        assert build_policy(config) == ThresholdPolicy(theta=0.1)

    def test_kind_must_fit_family(self):
        with pytest.raises(ConfigError, match="does not apply"):
            build_policy(_config(policy={'kind': 'threshold', 'theta': 0.1}))

    def test_bad_policy_fields(self):
        with pytest.raises(ConfigError):
            build_policy(_config(policy={'kind': 'onoff', 'T': 0, 'S': 1.0}))
        with pytest.raises(ConfigError):
            build_policy(_config(policy={'kind': 'onoff', 'period': 2}))


class TestExports:

    def test_csv_format(self, tmp_path):
        path = tmp_path / 'rows.csv'
        n = write_csv(path, ('t', 'x'), [[np.int64(1), 0.5], [2, 1.0 / 3.0]])
        assert n == 2
        assert path.read_text().splitlines() == ['t,x', '1,0.5', '2,0.33333333333333331']

    def test_trace_csv_repeatable(self, tmp_path, worked):
        trace = simulate(SamplingSchedule((0.0, 2.0), periodic=True), worked, horizon=8)
        write_discrete_csv(trace, tmp_path / 'a.csv')
        write_discrete_csv(trace, tmp_path / 'b.csv')
        a = (tmp_path / 'a.csv').read_bytes()
        assert a == (tmp_path / 'b.csv').read_bytes()
        assert a.decode().splitlines()[0] == ','.join(DISCRETE_COLUMNS)
        assert len(a.decode().splitlines()) == 9

    def test_json_sorted_with_newline(self, tmp_path):
        path = tmp_path / 'nested' / 'out.json'
        write_json({'b': 1, 'a': [1.5]}, path)
        text = path.read_text()
        assert text.endswith('\n')
        assert text.index('"a"') < text.index('"b"')

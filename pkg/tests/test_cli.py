# SPDX-License-Identifier: Apache-2.0

"""Tests for the command-line front-end."""

import json
import math

import pytest

from databuy import cli
from databuy import policy as policy_module
from databuy.loader import ResultsReader
from databuy.protocol import SCHEMA_VERSION, ExperimentConfig, write_json


def _write_config(path, **fields):
    data = {'schema_version': SCHEMA_VERSION, 'family': 'discrete', 'name': 'run',
            'model': {'rho': 1.0, 'sigma': 1.0, 'c': 0.75, 'B': 1.0}}
    data.update(fields)
    write_json(data, path)
    return str(path)


class TestCommands:

    def test_simulate_steady_state(self, tmp_path):
        config = ExperimentConfig.from_dict({
            'schema_version': SCHEMA_VERSION, 'name': 'k1',
            'model': {'rho': 1.0, 'sigma': 1.0, 'c': 0.75, 'B': 1.0},
            'policy': {'samples': [1.0], 'periodic': True},
        })
        summary = cli.cmd_simulate(config, tmp_path)
        assert summary['mode'] == 'steady_state'
        assert summary['average_cost'] == pytest.approx((math.sqrt(5.0) - 1.0) / 2.0, abs=1e-9)
        assert summary['budget']['valid']
        assert (tmp_path / 'k1_trace.csv').exists()
        assert json.loads((tmp_path / 'k1_summary.json').read_text())['name'] == 'k1'

    def test_simulate_null_policy(self, tmp_path):
        config = ExperimentConfig.from_dict({
            'schema_version': SCHEMA_VERSION, 'name': 'null',
            'model': {'c': 0.75}, 'policy': {'kind': 'null'}, 'horizon': 20,
        })
        summary = cli.cmd_simulate(config, tmp_path)
        assert summary['average_value'] == 0.0
        assert summary['rounds'] == 20

    def test_simulate_continuous(self, tmp_path):
        config = ExperimentConfig.from_dict({
            'schema_version': SCHEMA_VERSION, 'family': 'continuous', 'name': 'atoms',
            'model': {'c': 1.0, 'B': 1.0},
            'policy': {'kind': 'continuous', 'horizon': 2.0, 'atoms': [[1.0, 1.0]]},
            'output_step': 0.1,
        })
        summary = cli.cmd_simulate(config, tmp_path)
        assert summary['atoms'] == 1
        assert summary['budget']['valid']

    def test_simulate_binary(self, tmp_path):
        config = ExperimentConfig.from_dict({
            'schema_version': SCHEMA_VERSION, 'family': 'binary', 'name': 'bits',
            'model': {'B': 6.0}, 'policy': {'kind': 'threshold', 'theta': 0.05},
            'horizon': 200, 'seed': 1,
        })
        summary = cli.cmd_simulate(config, tmp_path)
        assert summary['rounds'] == 200
        assert summary['theta'] == 0.05
        assert not summary['ex_post']

    def test_optimize_onoff(self, tmp_path):
        config = ExperimentConfig.from_dict({
            'schema_version': SCHEMA_VERSION, 'name': 'k2',
            'model': {'rho': 1.0, 'sigma': 1.0, 'c': 0.75, 'B': 1.0},
            'optimizer': {'kind': 'onoff', 'T': 2},
        })
        report = cli.cmd_optimize(config, tmp_path)
        assert report['policy'] == {'kind': 'onoff', 'T': 2, 'S': pytest.approx(2.0)}
        assert report['budget']['valid']
        assert (tmp_path / 'k2_optimize.json').exists()

    def test_optimize_lazy_discrete(self, tmp_path):
        config = ExperimentConfig.from_dict({
            'schema_version': SCHEMA_VERSION, 'name': 'lazy',
            'model': {'rho': 1.0, 'sigma': 1.0, 'c': 0.75, 'B': 1.0, 'z': 0.2},
            'optimizer': {'kind': 'lazy-discrete'}, 'horizon': 100,
        })
        report = cli.cmd_optimize(config, tmp_path)
        assert report['budget']['valid']
        assert report['budget']['horizon'] == 100

    def test_oracle(self, tmp_path):
        config = ExperimentConfig.from_dict({
            'schema_version': SCHEMA_VERSION, 'name': 'orc',
            'model': {'rho': 1.0, 'sigma': 1.0, 'c': 0.75, 'B': 1.0},
            'oracle': {'horizon': 10, 'v_grid': 40, 'budget_grid': 40},
        })
        report = cli.cmd_oracle(config, tmp_path)
        assert report['certificate_budget']['valid']
        assert report['certificate_value'] >= report['diagnostics']['lower'] - 1e-9
        assert (tmp_path / 'orc_certificate.csv').exists()

    def test_verify_writes_report(self, tmp_path):
        report = cli.cmd_verify(['worked-example', 'contraction'], seed=3, out_dir=tmp_path)
        assert report.passed
        data = json.loads((tmp_path / 'verify.json').read_text())
        assert [s['name'] for s in data['suites']] == ['worked-example', 'contraction']
        assert data['scale'] == 'reduced'

    def test_repro_is_repeatable(self, tmp_path):
        first = cli.cmd_repro(tmp_path / 'a', seed=0, tune_rounds=2_000)
        cli.cmd_repro(tmp_path / 'b', seed=0, tune_rounds=2_000)
        assert first['worked_example']['two_on_two_off']['printed'] == '0.576'
        assert first['worked_example']['every_other_round']['printed'] == '0.582'
        assert first['onoff_T2']['S'] == pytest.approx(2.0)
        for name in ('repro.json', 'repro.dbr', 'figure1_two_rate.csv',
                     'figure2_lazy_continuous.csv', 'figure3_binary.csv'):
            assert (tmp_path / 'a' / name).read_bytes() == (tmp_path / 'b' / name).read_bytes()
        with ResultsReader(tmp_path / 'a' / 'repro.dbr') as reader:
            assert 'figure3_binary' in reader.run_ids


class TestMain:
    """Exit codes and printed reports."""

    def test_simulate_without_config(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(['simulate'])
        assert exc.value.code == 1

    def test_simulate_with_config(self, tmp_path, capsys):
        path = _write_config(tmp_path / 'k1.json', policy={'samples': [0.0, 2.0], 'periodic': True})
        cli.main(['simulate', '--config', path, '--out', str(tmp_path / 'out')])
        assert '0.5821067812' in capsys.readouterr().out
        assert (tmp_path / 'out' / 'run_summary.json').exists()

    def test_onoff_rejects_fixed_cost(self, tmp_path, capsys):
        path = _write_config(tmp_path / 'z.json',
                             model={'rho': 1.0, 'sigma': 1.0, 'c': 0.75, 'B': 1.0, 'z': 0.5})
        with pytest.raises(SystemExit) as exc:
            cli.main(['optimize', '--config', path, '--kind', 'onoff', '--T', '2',
                      '--out', str(tmp_path)])
        assert exc.value.code == 1
        assert 'fixed cost' in capsys.readouterr().out

    def test_optimize_continuous_json(self, tmp_path, capsys):
        cli.main(['optimize', '--kind', 'lazy-continuous', '--out', str(tmp_path), '--json'])
        report = json.loads(capsys.readouterr().out)
        assert report['value'] == pytest.approx(0.125)
        assert report['budget']['valid']

    def test_verify_passes(self, tmp_path):
        cli.main(['verify', '--suite', 'worked-example', '--out', str(tmp_path)])
        assert json.loads((tmp_path / 'verify.json').read_text())['passed'] is True

    def test_verify_failure_exit_code(self, monkeypatch):
        monkeypatch.setattr(policy_module, 'posterior_variance',
                            lambda v, s, sigma: v / (1.0 + 1.01 * (s / sigma) * v))
        with pytest.raises(SystemExit) as exc:
            cli.main(['verify', '--suite', 'worked-example'])
        assert exc.value.code == 2

    def test_unknown_suite(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(['verify', '--suite', 'nope'])
        assert exc.value.code == 1

    def test_info(self, tmp_path, capsys):
        cli.cmd_repro(tmp_path, tune_rounds=2_000)
        capsys.readouterr()
        cli.main(['info', str(tmp_path / 'repro.dbr')])
        out = capsys.readouterr().out
        assert 'Runs: 6' in out
        assert 'worked_every_round' in out

    def test_info_missing_file(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            cli.main(['info', str(tmp_path / 'missing.dbr')])
        assert exc.value.code == 1

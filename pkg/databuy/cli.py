# SPDX-License-Identifier: Apache-2.0
# DATABUY CLI - COMMAND-LINE FRONT-END
# simulate / optimize / oracle / verify / repro / info

"""
Command-line interface.

Every command reads an optional experiment config (JSON, see
databuy.protocol), writes CSV/JSON files into the output directory and
prints a short report. Exit codes: 0 success, 1 usage or config error,
2 failed verification.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

import numpy as np

from . import __version__
from .binary import BinaryModel, run_threshold, tune_theta
from .continuous import ContinuousParams, ContinuousPolicy, simulate_continuous
from .errors import ConfigError, DatabuyError
from .loader import ResultsReader, ResultsWriter
from .model import ModelParams, trace_cost, trace_value
from .optimize import (
    dp_oracle,
    optimal_lazy_continuous,
    optimal_lazy_discrete,
    optimal_onoff_for_T,
    regular_atomic_continuous,
    render_continuous_lazy,
    vstar_estimate,
)
from .policy import (
    LazyPolicy,
    OnOffPolicy,
    SamplingSchedule,
    render,
    simulate,
    steady_state,
    validate_budget,
)
from .protocol import (
    ExperimentConfig,
    ModelFamily,
    build_model,
    build_policy,
    continuous_v0,
    load_config,
    write_binary_csv,
    write_continuous_csv,
    write_discrete_csv,
    write_json,
)
from .verify import (
    WORKED_COSTS,
    WORKED_EXAMPLE,
    WORKED_SCHEDULES,
    VerifyReport,
    run_suites,
    truncate3,
)

logger = logging.getLogger(__name__)

# Rounds used when a lazy policy or a finite rendering needs a horizon and none is configured
DEFAULT_HORIZON = 1000
DEFAULT_CONTINUOUS_HORIZON = 10.0
DEFAULT_BINARY_HORIZON = 2000

CONTINUOUS_OPTIMIZERS = ('lazy-continuous', 'regular-continuous')


def default_config(family: str = ModelFamily.DISCRETE.value) -> ExperimentConfig:
    """Worked-example instance for commands run without --config."""
    if family == ModelFamily.CONTINUOUS.value:
        return ExperimentConfig(family=family, name='continuous', model={'c': 1.0, 'B': 1.0, 'f': 0.0})
    if family == ModelFamily.BINARY.value:
        return ExperimentConfig(family=family, name='binary', model=BinaryModel().to_dict())
    return ExperimentConfig(
        family=family, name='worked_example',
        model={'rho': 1.0, 'sigma': 1.0, 'c': 0.75, 'B': 1.0, 'z': 0.0},
    )


# =============================================================================
# SIMULATE
# =============================================================================

def _simulate_discrete(config: ExperimentConfig, params: ModelParams, out_dir: Path) -> Dict[str, Any]:
    policy = build_policy(config)
    if policy is None:
        policy = SamplingSchedule.null()
    horizon = config.horizon
    if isinstance(policy, LazyPolicy):
        if horizon is None:
            raise ConfigError("Simulating a lazy policy requires 'horizon'")
        schedule = render(policy, params, int(horizon))
    elif isinstance(policy, OnOffPolicy):
        schedule = render(policy, params, None if horizon is None else int(horizon))
    else:
        schedule = policy

    if schedule.periodic and horizon is None and np.any(schedule.one_period() > 0):
        trace = steady_state(schedule, params)
        budget = validate_budget(schedule, params)
        mode = 'steady_state'
    else:
        n = len(schedule) if horizon is None else int(horizon)
        trace = simulate(schedule, params, horizon=n)
        budget = validate_budget(schedule, params, horizon=n)
        mode = 'finite'

    if not budget.valid:
        logger.warning(f"Schedule overdraws the budget at round {budget.first_violation}")
    write_discrete_csv(trace, out_dir / f"{config.name}_trace.csv")
    return {
        'mode': mode,
        'rounds': len(trace),
        'average_cost': trace_cost(trace),
        'average_value': trace_value(trace),
        'budget': budget.to_dict(),
    }


def _simulate_continuous(config: ExperimentConfig, params: ContinuousParams, out_dir: Path) -> Dict[str, Any]:
    policy = build_policy(config)
    if policy is None:
        policy = ContinuousPolicy(horizon=float(config.horizon or DEFAULT_CONTINUOUS_HORIZON))
    trace = simulate_continuous(policy, params, v0=continuous_v0(config), output_step=config.output_step)
    write_continuous_csv(trace, out_dir / f"{config.name}_trace.csv")
    return {
        'horizon': policy.horizon,
        'average_cost': trace.average_cost,
        'average_value': trace.average_value,
        'total_spend': trace.total_spend,
        'flow_cost': trace.flow_cost,
        'atoms': len(trace.atoms),
        'budget': {'valid': trace.budget_valid, 'first_violation': trace.first_violation},
    }


def _simulate_binary(
    config: ExperimentConfig, model: BinaryModel, out_dir: Path, show_progress: bool
) -> Dict[str, Any]:
    policy = build_policy(config)
    ex_post = bool((config.policy or {}).get('ex_post', False))
    if policy is None:
        policy = tune_theta(model, seed=config.seed, show_progress=show_progress)
    trace = run_threshold(model, policy, int(config.horizon or DEFAULT_BINARY_HORIZON),
                          seed=config.seed, ex_post=ex_post)
    write_binary_csv(trace, out_dir / f"{config.name}_trace.csv")
    summary = trace.summary()
    summary.update(theta=policy.theta, ex_post=ex_post, tuning=dict(policy.diagnostics))
    return summary


def cmd_simulate(config: ExperimentConfig, out_dir: Path, show_progress: bool = False) -> Dict[str, Any]:
    """Simulate the configured policy; writes <name>_trace.csv and <name>_summary.json."""
    model = build_model(config)
    family = config.model_family
    if family is ModelFamily.DISCRETE:
        summary = _simulate_discrete(config, model, out_dir)
    elif family is ModelFamily.CONTINUOUS:
        summary = _simulate_continuous(config, model, out_dir)
    else:
        summary = _simulate_binary(config, model, out_dir, show_progress)
    summary.update(family=config.family, name=config.name)
    write_json(summary, out_dir / f"{config.name}_summary.json")
    return summary


# =============================================================================
# OPTIMIZE / ORACLE
# =============================================================================

def cmd_optimize(config: ExperimentConfig, out_dir: Path, show_progress: bool = False) -> Dict[str, Any]:
    """Run the configured optimizer; writes <name>_optimize.json."""
    if config.optimizer is None:
        raise ConfigError("Config has no 'optimizer' block")
    spec = dict(config.optimizer)
    kind = spec.pop('kind')
    model = build_model(config)

    if kind == 'onoff':
        if 'T' not in spec:
            raise ConfigError("The onoff optimizer needs 'T'")
        result = optimal_onoff_for_T(model, int(spec['T']))
    elif kind == 'vstar':
        result = vstar_estimate(model, tol=float(spec.get('tol', 1e-6)),
                                max_T=int(spec.get('max_T', 4096)), show_progress=show_progress)
    elif kind == 'lazy-discrete':
        result = optimal_lazy_discrete(model, max_saving_rounds=float(spec.get('max_saving_rounds', 1e6)))
    elif kind == 'lazy-continuous':
        result = optimal_lazy_continuous(model)
    else:
        result = regular_atomic_continuous(model)

    report = result.to_dict()
    report.update(kind=kind, family=config.family, name=config.name)
    horizon = config.horizon

    if isinstance(result.policy, OnOffPolicy):
        report['budget'] = validate_budget(result.schedule, model).to_dict()
    elif isinstance(result.policy, LazyPolicy):
        n = int(horizon or DEFAULT_HORIZON)
        report['budget'] = validate_budget(render(result.policy, model, n), model).to_dict()
        report['budget']['horizon'] = n
    elif kind == 'lazy-continuous':
        rendered = render_continuous_lazy(result, model, float(horizon or DEFAULT_CONTINUOUS_HORIZON))
        run = simulate_continuous(rendered, model)
        report['rendered'] = rendered.to_dict()
        report['budget'] = {'valid': run.budget_valid, 'first_violation': run.first_violation,
                            'horizon': rendered.horizon, 'average_value': run.average_value}

    write_json(report, out_dir / f"{config.name}_optimize.json")
    return report


def cmd_oracle(config: ExperimentConfig, out_dir: Path, show_progress: bool = False) -> Dict[str, Any]:
    """Bracket the finite-horizon optimum; writes <name>_oracle.json and the certificate trace."""
    if config.model_family is not ModelFamily.DISCRETE:
        raise ConfigError("The oracle runs on the discrete model only")
    params = build_model(config)
    spec = dict(config.oracle or {})
    horizon = spec.pop('horizon', config.horizon)
    if horizon is None:
        raise ConfigError("The oracle needs a horizon (oracle.horizon or horizon)")
    try:
        result = dp_oracle(params, int(horizon), show_progress=show_progress, **spec)
    except TypeError as e:
        raise ConfigError(f"Invalid oracle block: {e}") from e

    trace = simulate(result.schedule, params)
    write_discrete_csv(trace, out_dir / f"{config.name}_certificate.csv")
    report = result.to_dict()
    report.update(family=config.family, name=config.name,
                  certificate_value=trace_value(trace),
                  certificate_budget=validate_budget(result.schedule, params).to_dict())
    write_json(report, out_dir / f"{config.name}_oracle.json")
    return report


def cmd_verify(
    names: Optional[Sequence[str]] = None,
    full: bool = False,
    seed: int = 0,
    out_dir: Optional[Path] = None,
    show_progress: bool = False,
) -> VerifyReport:
    """Run acceptance suites; writes verify.json when an output directory is given."""
    report = run_suites(names, full=full, seed=seed, show_progress=show_progress)
    if out_dir is not None:
        write_json(report.to_dict(), out_dir / 'verify.json')
    return report


# =============================================================================
# REPRO
# =============================================================================

def two_rate_schedule(low: float = 0.25, high: float = 1.75, block: int = 10, blocks: int = 6) -> SamplingSchedule:
    """Alternating low/high sampling blocks; the variance keeps chasing the current rate."""
    samples = np.concatenate([np.full(block, low if k % 2 == 0 else high) for k in range(blocks)])
    return SamplingSchedule(tuple(samples))


def cmd_repro(
    out_dir: Path, seed: int = 0, tune_rounds: int = 50_000, show_progress: bool = False
) -> Dict[str, Any]:
    """
    Reproduce the worked-example costs and the three figure data files.

    Writes figure1_two_rate.csv, figure2_lazy_continuous.csv,
    figure3_binary.csv, repro.json and repro.dbr. Fixed seeds make
    repeated runs byte-identical.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    report: Dict[str, Any] = {'seed': seed, 'worked_example': {}}

    with ResultsWriter(out_dir / 'repro.dbr') as writer:
        for name, samples in WORKED_SCHEDULES.items():
            schedule = SamplingSchedule(samples, periodic=True)
            trace = steady_state(schedule, WORKED_EXAMPLE)
            cost = trace_cost(trace)
            entry = {'samples': list(samples), 'cost': cost, 'expected': WORKED_COSTS[name],
                     'printed': f"{truncate3(cost):.3f}"}
            report['worked_example'][name] = entry
            writer.append_run(f"worked_{name}", trace.columns(), {'summary': entry})

        onoff = optimal_onoff_for_T(WORKED_EXAMPLE, 2)
        report['onoff_T2'] = {'S': onoff.policy.S, 'value': onoff.value, 'cost': onoff.cost}

        # Figure 1: two alternating rates
        schedule = two_rate_schedule()
        trace = simulate(schedule, WORKED_EXAMPLE)
        write_discrete_csv(trace, out_dir / 'figure1_two_rate.csv')
        fig1 = {'average_value': trace_value(trace),
                'budget': validate_budget(schedule, WORKED_EXAMPLE).to_dict()}
        report['figure1'] = fig1
        writer.append_run('figure1_two_rate', trace.columns(), {'summary': fig1})

        # Figure 2: continuous lazy optimum, rendered save-then-spend
        params = ContinuousParams(c=1.0, B=1.0, f=0.0)
        lazy = optimal_lazy_continuous(params)
        policy = render_continuous_lazy(lazy, params, DEFAULT_CONTINUOUS_HORIZON)
        run = simulate_continuous(policy, params, v0=0.0, output_step=0.01)
        write_continuous_csv(run, out_dir / 'figure2_lazy_continuous.csv')
        fig2 = {'atom': lazy.diagnostics['atom'], 'long_run_value': lazy.value,
                'average_value': run.average_value, 'budget_valid': run.budget_valid}
        report['figure2'] = fig2
        writer.append_run('figure2_lazy_continuous', run.columns(),
                          {'summary': fig2, 'policy': policy.to_dict()})

        # Figure 3: tuned threshold policy at B = 6
        model = BinaryModel(eps=0.01, delta_sig=0.2, B=6.0)
        tuned = tune_theta(model, seed=seed, mc_rounds=tune_rounds, show_progress=show_progress)
        bits = run_threshold(model, tuned, DEFAULT_BINARY_HORIZON, seed=seed)
        write_binary_csv(bits, out_dir / 'figure3_binary.csv')
        fig3 = dict(bits.summary(), theta=tuned.theta, tuning=dict(tuned.diagnostics))
        report['figure3'] = fig3
        writer.append_run('figure3_binary', bits.columns(),
                          {'summary': fig3, 'model': model.to_dict()})

    write_json(report, out_dir / 'repro.json')
    return report


# =============================================================================
# CLI
# =============================================================================

def _resolve_config(args, family: Optional[str] = None) -> ExperimentConfig:
    config = load_config(args.config) if args.config else default_config(family or ModelFamily.DISCRETE.value)
    if args.seed is not None:
        config.seed = args.seed
    if args.out is not None:
        config.out_dir = args.out
    return config


def _emit(report: Dict[str, Any], as_json: bool) -> None:
    if as_json:
        print(json.dumps(report, indent=2, sort_keys=True))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', '-c', type=str, default=None, help='Experiment config (JSON)')
    common.add_argument('--out', '-o', type=str, default=None, help='Output directory (overrides out_dir)')
    common.add_argument('--seed', type=int, default=None, help='Random seed (overrides seed)')
    common.add_argument('--json', action='store_true', help='Print the report as JSON')
    common.add_argument('--verbose', '-v', action='store_true', help='Verbose output')

    parser = argparse.ArgumentParser(
        prog='databuy',
        description='databuy: budgeted data purchasing for drifting estimates',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
    # Steady state of a configured schedule
    databuy simulate --config experiments/worked_example.json --out results/

    # Best on-off policy of period 2 on the worked example
    databuy optimize --kind onoff --T 2

    # Certified bracket on the 100-round optimum
    databuy oracle --config experiments/oracle.json

    # Acceptance suites (reduced scale; add --full for acceptance scale)
    databuy verify
    databuy verify --suite worked-example

    # Worked-example numbers and figure data
    databuy repro --out results/

    # List runs in a results archive
    databuy info results/repro.dbr
"""
    )
    parser.add_argument('--version', action='version', version=f'databuy {__version__}')
    subparsers = parser.add_subparsers(dest='command', help='Commands')

    subparsers.add_parser('simulate', parents=[common], help='Simulate a configured policy')

    optimize_parser = subparsers.add_parser('optimize', parents=[common], help='Run a policy optimizer')
    optimize_parser.add_argument('--kind', type=str, default=None,
                                 choices=['onoff', 'vstar', 'lazy-discrete', 'lazy-continuous',
                                          'regular-continuous'],
                                 help='Optimizer (overrides optimizer.kind)')
    optimize_parser.add_argument('--T', type=int, default=None, help='On-off period')

    oracle_parser = subparsers.add_parser('oracle', parents=[common], help='Bracket the finite-horizon optimum')
    oracle_parser.add_argument('--horizon', type=int, default=None, help='Rounds (overrides oracle.horizon)')

    verify_parser = subparsers.add_parser('verify', parents=[common], help='Run acceptance suites')
    verify_parser.add_argument('--full', action='store_true', help='Run at acceptance scale')
    verify_parser.add_argument('--suite', type=str, action='append', default=None,
                               help='Run only this suite (repeatable)')

    subparsers.add_parser('repro', parents=[common], help='Reproduce worked-example numbers and figure data')

    info_parser = subparsers.add_parser('info', help='Show runs in a .dbr results archive')
    info_parser.add_argument('file', type=str, help='.dbr file to inspect')
    return parser


def main(argv=None):
    """CLI entry point."""
    parser = build_parser()
    args = parser.parse_args(argv)

    log_level = logging.DEBUG if getattr(args, 'verbose', False) else logging.INFO
    logging.basicConfig(
        level=log_level,
        format='%(asctime)s - %(levelname)s - %(message)s'
    )
    show_progress = not getattr(args, 'json', False)

    if args.command == 'simulate':
        try:
            if not args.config:
                raise ConfigError("simulate needs --config")
            config = _resolve_config(args)
            out_dir = Path(config.out_dir)
            summary = cmd_simulate(config, out_dir, show_progress=show_progress)
        except (DatabuyError, FileNotFoundError) as e:
            print(f"❌ Simulation failed: {e}")
            sys.exit(1)
        if args.json:
            _emit(summary, True)
        else:
            print(f"✅ Simulated {config.name} ({config.family})")
            print(f"   Avg cost:  {summary['average_cost']:.10g}" if 'average_cost' in summary
                  else f"   Accuracy:  {summary['accuracy']:.4f}")
            if 'average_value' in summary:
                print(f"   Avg value: {summary['average_value']:.10g}")
            if 'budget' in summary:
                print(f"   Budget:    {'valid' if summary['budget']['valid'] else 'VIOLATED'}")
            print(f"   Output:    {out_dir.absolute()}")

    elif args.command == 'optimize':
        try:
            family = (ModelFamily.CONTINUOUS.value
                      if args.kind in CONTINUOUS_OPTIMIZERS else None)
            config = _resolve_config(args, family)
            if args.kind is not None or args.T is not None:
                optimizer = dict(config.optimizer or {})
                if args.kind is not None:
                    optimizer['kind'] = args.kind
                if args.T is not None:
                    optimizer['T'] = args.T
                config = ExperimentConfig.from_dict(dict(config.to_dict(), optimizer=optimizer))
            out_dir = Path(config.out_dir)
            report = cmd_optimize(config, out_dir, show_progress=show_progress)
        except (DatabuyError, FileNotFoundError) as e:
            print(f"❌ Optimization failed: {e}")
            sys.exit(1)
        if args.json:
            _emit(report, True)
        else:
            print(f"✅ {report['kind']} optimum for {config.name}")
            print(f"   Value:     {report['value']:.10g}")
            print(f"   Cost:      {report['cost']:.10g}")
            print(f"   Policy:    {report['policy']}")
            if 'budget' in report:
                print(f"   Budget:    {'valid' if report['budget']['valid'] else 'VIOLATED'}")

    elif args.command == 'oracle':
        try:
            config = _resolve_config(args)
            if args.horizon is not None:
                config.oracle = dict(config.oracle or {}, horizon=args.horizon)
            elif config.oracle is None and config.horizon is None:
                config.horizon = 100
            out_dir = Path(config.out_dir)
            report = cmd_oracle(config, out_dir, show_progress=show_progress)
        except (DatabuyError, FileNotFoundError) as e:
            print(f"❌ Oracle failed: {e}")
            sys.exit(1)
        if args.json:
            _emit(report, True)
        else:
            d = report['diagnostics']
            print(f"✅ Oracle bracket over {d['horizon']} rounds")
            print(f"   Lower:     {d['lower']:.10g}")
            print(f"   Upper:     {d['upper']:.10g}")
            print(f"   Slack:     {d['slack']:.3g}{'' if d['within_tolerance'] else '  (above tolerance)'}")

    elif args.command == 'verify':
        try:
            report = cmd_verify(args.suite, full=args.full, seed=args.seed or 0,
                                out_dir=Path(args.out) if args.out else None,
                                show_progress=show_progress)
        except KeyError as e:
            print(f"❌ Verification failed: {e}")
            sys.exit(1)
        data = report.to_dict()
        if args.json:
            _emit(data, True)
        else:
            print(f"🔍 Verify ({data['scale']} scale)")
            for result in report.results:
                mark = '✅' if result.passed else '❌'
                suffix = f"  {result.error}" if result.error else ''
                print(f"   {mark} {result.name:<24} {result.seconds:7.2f}s{suffix}")
        if not report.passed:
            sys.exit(2)

    elif args.command == 'repro':
        out_dir = Path(args.out or 'results')
        try:
            report = cmd_repro(out_dir, seed=args.seed or 0, show_progress=show_progress)
        except (DatabuyError, OSError) as e:
            print(f"❌ Reproduction failed: {e}")
            sys.exit(1)
        if args.json:
            _emit(report, True)
        else:
            print(f"✅ Reproduction complete")
            for name, entry in report['worked_example'].items():
                print(f"   {name:<18} cost {entry['printed']}")
            print(f"   On-off T=2: S={report['onoff_T2']['S']:g}")
            print(f"   Output:    {out_dir.absolute()}")

    elif args.command == 'info':
        try:
            with ResultsReader(args.file) as reader:
                print(f"📦 Results archive: {args.file}")
                print(f"   Runs: {len(reader)}")
                for run_id in reader.run_ids:
                    run = reader.read_run(run_id)
                    columns = ', '.join(f"{k}[{len(v)}]" for k, v in run['tensors'].items())
                    print(f"     {run_id}: {columns}")
        except (DatabuyError, FileNotFoundError) as e:
            print(f"❌ Failed to read file: {e}")
            sys.exit(1)

    else:
        parser.print_help()


if __name__ == '__main__':
    main()

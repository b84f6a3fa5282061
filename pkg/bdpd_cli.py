"""
BDPD Command Line
Front end for the estimation toolkit, including:
- fit: single (alpha, lambda) multistart fit with its sandwich variance
- chain: chain roots from lambda = 1 to 0 with per-lambda variances and global minimizers
- profile: objective landscape over a parameter grid (sample or mixture truth)
- tune: determinant-of-variance selection of (alpha, lambda)
- simulate: contamination studies with supplement-layout tables and trend reports
- diagnose: spurious-minimum report for one (alpha, lambda)

Exit status 0 on success, 2 on usage errors, 3 on numerical failures.
"""

import argparse
import logging
import sys
from dataclasses import fields
from textwrap import dedent
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from bdpd_errors import NUMERICAL_FAILURES, USAGE_FAILURES, BdpdError, InvalidInputError
from bridge_divergence import BridgeConfig, ModelComponent, PointMass
from bridge_optimizer import (
    CHAIN_DISAGREEMENT,
    StartSpec,
    chain_fit,
    global_comparison,
    grid_minima,
    interior_root,
    multistart_global,
    profile_objective,
    spurious_report,
)
from data_io import gspec_from_json, read_data, write_results
from model_families import FamilyModel, make_family
from run_config import FORMATS, RunConfig, parse_contaminant, parse_profile_grid
from sandwich_variance import sandwich, tune
from simulation_engine import DESIGNS, ContaminationSpec, SimConfig, design_spec, run_study
from trend_analyzer import StudyTrendAnalyzer

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3

# (json payload, tabular form for csv/xlsx or None)
CommandOutput = Tuple[Dict[str, Any], Any]


def _family(cfg: RunConfig) -> FamilyModel:
    return make_family(cfg.family, cfg.fixed_mean, cfg.fixed_sd)


def _variance_entry(family: FamilyModel, theta, data, bridge: BridgeConfig) -> Dict[str, Any]:
    try:
        return sandwich(family, theta, data, bridge).to_dict()
    except BdpdError as exc:
        logger.warning("Warning: no sandwich variance at %s: %s", bridge.label(), exc)
        return {'error': str(exc)}


def run_fit(cfg: RunConfig) -> CommandOutput:
    family = _family(cfg)
    x = read_data(cfg.data)
    bridge = cfg.bridge_config()
    starts = StartSpec.for_family(family, x, cfg.seed)
    fit = multistart_global(family, x, bridge, starts)
    payload: Dict[str, Any] = {
        'command': 'fit',
        'family': family.describe(),
        'alpha': bridge.alpha,
        'lambda': bridge.lam,
        'n': int(x.size),
        'fit': fit.to_dict(family.param_names),
        'sandwich': _variance_entry(family, fit.theta_hat, x, bridge),
        'warnings': [],
    }
    if bridge.lam < 1.0:
        root = interior_root(family, x, bridge.alpha, bridge.lam, starts)
        if np.max(np.abs(root.theta_hat - fit.theta_hat)) > CHAIN_DISAGREEMENT:
            message = (f"global minimizer {fit.theta_hat.tolist()} differs from the chain root "
                       f"{root.theta_hat.tolist()}; the global minimizer may be spurious")
            logger.warning("Warning: %s", message)
            payload['warnings'].append(message)
            payload['chain_root'] = root.to_dict(family.param_names)
    table = pd.DataFrame([{**{'alpha': bridge.alpha, 'lambda': bridge.lam},
                           **dict(zip(family.param_names, fit.theta_hat.tolist())),
                           'objective': fit.objective, 'gradient_norm': fit.gradient_norm}])
    logger.info("✓ fit %s: theta=%s", bridge.label(), fit.theta_hat)
    return payload, table


def run_chain(cfg: RunConfig) -> CommandOutput:
    family = _family(cfg)
    x = read_data(cfg.data)
    starts = StartSpec.for_family(family, x, cfg.seed)
    path = chain_fit(family, x, cfg.alpha, cfg.lambda_grid, starts)
    table = path.to_frame(family.param_names)
    table['det_V'] = [
        _variance_entry(family, fit.theta_hat, x, BridgeConfig(cfg.alpha, lam)).get('det_V', float('nan'))
        for lam, fit in zip(path.lambdas, path.fits)
    ]
    wide_starts = StartSpec.for_family(family, x, cfg.seed, boundary_starts=True)
    comparison = global_comparison(family, x, path, wide_starts)
    for name in family.param_names:
        table[f"global_{name}"] = comparison[f"global_{name}"].to_numpy()
    table['global_objective'] = comparison['global_objective'].to_numpy()
    table['disagrees'] = comparison['disagrees'].to_numpy()

    warnings: List[str] = []
    for _, row in table[table['disagrees']].iterrows():
        warnings.append(f"lambda={row['lambda']:g}: multistart global minimizer differs from the chain root "
                        f"(possible spurious minimum)")
    payload = {
        'command': 'chain',
        'family': family.describe(),
        'alpha': cfg.alpha,
        'n': int(x.size),
        'max_step': path.max_step,
        'dpd_fit': path.global_fit.to_dict(family.param_names) if path.global_fit else None,
        'path': table.to_dict(orient='records'),
        'warnings': warnings,
    }
    logger.info("✓ chain alpha=%g complete over %d lambda values", cfg.alpha, len(path.lambdas))
    return payload, table


def run_profile(cfg: RunConfig) -> CommandOutput:
    family = _family(cfg)
    bridge = cfg.bridge_config()
    source = gspec_from_json(cfg.gspec) if cfg.gspec else read_data(cfg.data)
    axis = parse_profile_grid(cfg.grid, cfg.log_grid)
    if family.dim == 1:
        grid = axis
    else:
        if not cfg.theta:
            raise InvalidInputError("location-scale profiles need --theta MU for the fixed location")
        grid = np.column_stack([np.full(axis.size, cfg.theta[0]), axis])
    table = profile_objective(family, source, bridge, grid)
    payload = {
        'command': 'profile',
        'family': family.describe(),
        'alpha': bridge.alpha,
        'lambda': bridge.lam,
        'profile': table.to_dict(orient='records'),
        'grid_minima': grid_minima(table).to_dict(orient='records') if family.dim == 1 else [],
    }
    return payload, table


def run_tune(cfg: RunConfig) -> CommandOutput:
    family = _family(cfg)
    x = read_data(cfg.data)
    starts = StartSpec.for_family(family, x, cfg.seed)
    result = tune(family, x, cfg.alpha_grid, cfg.lambda_grid, starts, cfg.threads)
    payload = {'command': 'tune', 'family': family.describe(), 'n': int(x.size)}
    payload.update(result.to_dict())
    return payload, result.table


def _contamination(cfg: RunConfig) -> ContaminationSpec:
    if cfg.design:
        return design_spec(cfg.design, cfg.epsilon)
    family = _family(cfg)
    theta = cfg.theta if cfg.theta is not None else family.standard_theta().tolist()
    majority = ModelComponent(family, tuple(theta))
    if cfg.contaminant:
        contaminant = parse_contaminant(cfg.contaminant)
    else:
        contaminant = PointMass(family.location(majority.theta_array))
    return ContaminationSpec(majority, contaminant, cfg.epsilon)


def run_simulate(cfg: RunConfig) -> CommandOutput:
    spec = _contamination(cfg)
    config = SimConfig(spec=spec, n=cfg.n, reps=cfg.reps, master_seed=cfg.seed,
                       alpha_grid=cfg.alpha_grid, lambda_grid=cfg.lambda_grid,
                       threads=cfg.threads)
    report = run_study(config)
    if cfg.trend_report:
        StudyTrendAnalyzer(report).export_trend_report(cfg.trend_report)
    return report.to_dict(), report


def run_diagnose(cfg: RunConfig) -> CommandOutput:
    family = _family(cfg)
    x = read_data(cfg.data)
    starts = StartSpec.for_family(family, x, cfg.seed)
    report = spurious_report(family, x, cfg.alpha, cfg.lam, starts)
    payload = {'command': 'diagnose'}
    payload.update(report.to_dict(family.param_names))
    return payload, report.ray


COMMAND_RUNNERS: Dict[str, Callable[[RunConfig], CommandOutput]] = {
    'fit': run_fit,
    'chain': run_chain,
    'profile': run_profile,
    'tune': run_tune,
    'simulate': run_simulate,
    'diagnose': run_diagnose,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='JSON file of option values (flags override it)')
    common.add_argument('--family', help='exponential-scale, normal-location-scale, normal-mean '
                                         'or normal-scale (Default = normal-scale)')
    common.add_argument('--fixed-mean', dest='fixed_mean', type=float,
                        help='Fixed mean of the normal-scale family (Default = 0)')
    common.add_argument('--fixed-sd', dest='fixed_sd', type=float,
                        help='Fixed standard deviation of the normal-mean family (Default = 1)')
    common.add_argument('--alpha', type=float, help='Robustness parameter in [0, 1] (Default = 0.5)')
    common.add_argument('--lambda', dest='lam', type=float, help='Bridge parameter in [0, 1] (Default = 1)')
    common.add_argument('--alpha-grid', dest='alpha_grid',
                        help="Alpha grid, 'a,b,c' or 'start:stop:step' (Default = 0:1:0.2)")
    common.add_argument('--lambda-grid', dest='lambda_grid',
                        help="Descending lambda grid from 1 to 0 (Default = 1:0:-0.1)")
    common.add_argument('--data', help='CSV file with one observation per line')
    common.add_argument('--seed', type=int, help='Master seed for starts and replications (Default = 129)')
    common.add_argument('--threads', type=int, help='Worker processes (Default = 1)')
    common.add_argument('--out', help='Output file (Default = stdout)')
    common.add_argument('--format', choices=FORMATS, help='Output format (Default = json)')
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument('--verbose', action='store_true', help='Debug logging')
    verbosity.add_argument('--quiet', action='store_true', help='Warnings and errors only')

    parser = argparse.ArgumentParser(
        prog='bdpd',
        description=dedent('''
        Minimum bridge density power divergence estimation
        -----------------------------------------------------------
        Fit, chain, profile, tune, simulate and diagnose estimators
        that bridge the DPD (lambda = 1) and the LDPD (lambda = 0).
        '''),
        formatter_class=argparse.RawDescriptionHelpFormatter)
    subparsers = parser.add_subparsers(dest='command', required=True,
                                       help='For detailed usage of each command: bdpd command -h')

    subparsers.add_parser('fit', parents=[common], help='Multistart fit at one (alpha, lambda)')
    subparsers.add_parser('chain', parents=[common], help='Chain roots from lambda = 1 down to 0')

    parser_p = subparsers.add_parser('profile', parents=[common], help='Objective over a parameter grid')
    parser_p.add_argument('--grid', help="Scale or single-parameter grid 'lo:hi:count'")
    parser_p.add_argument('--log-grid', dest='log_grid', action='store_true', default=None,
                          help='Geometric spacing for --grid')
    parser_p.add_argument('--gspec', help='JSON mixture truth for a population profile')
    parser_p.add_argument('--theta', help='Fixed location for location-scale profiles')

    subparsers.add_parser('tune', parents=[common], help='Select (alpha, lambda) by det V')

    parser_s = subparsers.add_parser('simulate', parents=[common], help='Contamination study')
    parser_s.add_argument('--design', choices=sorted(DESIGNS), help='Built-in contamination design')
    parser_s.add_argument('--epsilon', type=float, help='Contamination fraction (Default = 0)')
    parser_s.add_argument('--contaminant', help="'slab:LO:HI' or 'point:X'")
    parser_s.add_argument('--theta', help="Majority parameter, e.g. '1' or '0,1'")
    parser_s.add_argument('--n', type=int, help='Sample size (Default = 100)')
    parser_s.add_argument('--reps', type=int, help='Replications (Default = 1000)')
    parser_s.add_argument('--trend-report', dest='trend_report', help='Write a text trend report here')

    subparsers.add_parser('diagnose', parents=[common], help='Spurious-minimum report at one (alpha, lambda)')
    return parser


def configure_logging(args: argparse.Namespace):
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format='%(levelname)s %(name)s: %(message)s', stream=sys.stderr)
    logging.getLogger().setLevel(level)
    return level


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    names = {f.name for f in fields(RunConfig)} - {'command'}
    return {key: value for key, value in vars(args).items() if key in names}


def parse_and_dispatch(argv: Optional[List[str]] = None) -> int:
    """
    Run one command

    Args:
        argv: Arguments without the program name (Default = sys.argv[1:])

    Returns:
        Exit status: 0 success, 2 usage error, 3 numerical failure
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    configure_logging(args)

    try:
        cfg = RunConfig.load(args.command, args.config, _overrides(args)).validate()
        payload, tabular = COMMAND_RUNNERS[cfg.command](cfg)
        if cfg.format == 'json':
            write_results(payload, 'json', cfg.out)
        else:
            write_results(tabular, cfg.format, cfg.out)
    except USAGE_FAILURES as exc:
        logger.error("Error: %s", exc)
        return EXIT_USAGE
    except NUMERICAL_FAILURES as exc:
        logger.error("Numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except OSError as exc:
        logger.error("Error: %s", exc)
        return EXIT_USAGE
    return EXIT_OK


def main():
    sys.exit(parse_and_dispatch())


if __name__ == '__main__':
    main()

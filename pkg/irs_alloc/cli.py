#!/usr/bin/env python3
"""
Command-line front end: generate scenarios, solve them, run sweeps and re-check stored designs.

Exit codes:
    0  success
    2  QoS infeasible (or a stored design fails verification)
    3  not converged
    4  input error
"""
import argparse
import json
import logging
import sys
from dataclasses import replace
from typing import List, Optional

import numpy as np
import yaml

from irs_alloc import __version__
from irs_alloc.bench import (ES_CAP, METHOD_ALIASES, METHODS, WORST_CASE_SAMPLES, ExperimentSpec, MethodOutcome,
                             assess, load_defaults, run_experiment, solve_method)
from irs_alloc.chansim import CsiErrorSpec, GeometryConfig, estimate_with_error
from irs_alloc.gbd import DEFAULT_DELTA, GbdAborted
from irs_alloc.model import ScenarioConfig
from irs_alloc.robust import RANK_RATIO_TOL
from irs_alloc.sca import ScaConfig
from irs_alloc.scenario import Scenario, Solution, json_default

logger = logging.getLogger(__name__)

### EXIT CODES
EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_NOT_CONVERGED = 3
EXIT_INPUT_ERROR = 4

POWER_RTOL = 1e-4
LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'


def _print(doc: dict):
    print(json.dumps(doc, indent=1, default=json_default))


def cmd_gen(args: argparse.Namespace) -> int:
    defaults = load_defaults(args.defaults)
    scenario = dict(defaults.get('scenario') or {})
    for key, value in (('M', args.M), ('K', args.K), ('N', args.N), ('B_bits', args.bits),
                       ('gamma_db', args.gamma_db), ('sigma2_dbm', args.sigma2_dbm)):
        if value is not None:
            scenario[key] = value
    if not scenario:
        raise ValueError("no scenario defaults found; pass --M, --K, --N, --bits and --gamma-db")
    cfg = ScenarioConfig.from_dict(scenario)
    geo = GeometryConfig.from_dict(defaults.get('geometry') or {})
    scn = Scenario.generate(cfg, geo, args.seed, kappa=args.kappa, estimate_seed=args.estimate_seed)
    scn.save(args.output)
    _print({'output': args.output, 'md5': scn.md5, 'M': cfg.M, 'K': cfg.K, 'N': cfg.N, 'L': cfg.L,
            'robust_estimate': scn.estimate is not None})
    return EXIT_OK


def _exit_code(out: MethodOutcome) -> int:
    if out.converged:
        return EXIT_OK
    if out.infeasible:
        return EXIT_INFEASIBLE
    return EXIT_NOT_CONVERGED


def redraw_estimate(scn: Scenario, kappa: float, seed: int) -> Scenario:
    """Replaces the stored estimate with a fresh draw at error level `kappa`."""
    est = estimate_with_error(scn.ch, CsiErrorSpec(kappa=kappa), seed, scn.cfg)
    return replace(scn, estimate=est, kappa=kappa, estimate_seed=seed)


def cmd_solve(args: argparse.Namespace) -> int:
    scn = Scenario.load(args.scenario)
    md5 = scn.md5
    redrawn = None
    if args.robust and args.kappa is not None:
        redrawn = {'kappa': args.kappa, 'seed': args.seed if args.estimate_seed is None else args.estimate_seed}
        scn = redraw_estimate(scn, redrawn['kappa'], redrawn['seed'])
    defaults = load_defaults(args.defaults)
    sca_cfg = ScaConfig.from_dict(defaults.get('sca'))
    if args.mu0 is not None:
        sca_cfg = replace(sca_cfg, mu0=args.mu0)
    try:
        out = solve_method(args.method, scn, robust=args.robust, seed=args.seed, delta=args.delta,
                           sca_cfg=sca_cfg, es_cap=args.es_cap, workers=args.workers, max_iter=args.max_iter)
    except GbdAborted as e:
        logger.error(f"[solve] decomposition aborted at {e.selection.idx}: {e}")
        return EXIT_NOT_CONVERGED
    check = assess(out, scn, args.samples, args.seed)
    min_slack = check.min_slack if np.isfinite(check.min_slack) else None
    info = dict(out.info, min_slack=min_slack, certified=check.certified, rank_ratio=check.rank_ratio)
    if redrawn:
        info['estimate'] = redrawn
    sol = Solution(method=out.method, status=out.status, selection=out.selection, beamformer=out.beamformer,
                   power_watts=out.power, robust=args.robust, scenario_md5=md5, iterations=out.iterations,
                   info=info)
    if args.output:
        sol.save(args.output)
    if args.trace:
        with open(args.trace, 'w') as f:
            for row in out.trace:
                f.write(json.dumps(row, default=json_default) + '\n')
    doc = sol.to_dict()
    doc.pop('W')
    _print(doc)
    return _exit_code(out)


def cmd_sweep(args: argparse.Namespace) -> int:
    spec = ExperimentSpec.load(args.spec, load_defaults(args.defaults))
    if args.output:
        spec = replace(spec, output=args.output)
    if not spec.output:
        raise ValueError("sweep needs an output prefix (experiment.output or --output)")
    result = run_experiment(spec, workers=args.workers)
    errors = sum(1 for row in result.rows if row.error)
    if errors:
        logger.warning(f"[sweep] {errors} of {len(result.rows)} rows ended with an error")
    _print({'rows': len(result.rows), 'errors': errors, 'files': result.paths})
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    scn = Scenario.load(args.scenario)
    sol = Solution.load(args.solution)
    md5 = scn.md5
    if sol.scenario_md5 and sol.scenario_md5 != md5:
        raise ValueError(f"solution was computed for scenario {sol.scenario_md5}, {args.scenario} is {md5}")
    if sol.info.get('estimate'):
        scn = redraw_estimate(scn, float(sol.info['estimate']['kappa']), int(sol.info['estimate']['seed']))
    if sol.beamformer is None or sol.selection is None:
        _print({'ok': False, 'reason': f"stored design has no beamformer (status {sol.status})"})
        return EXIT_INFEASIBLE
    if sol.robust and scn.estimate is None:
        raise ValueError("robust solution needs a scenario with a channel estimate")
    direct_only = sol.selection.N == 0 and scn.cfg.N > 0
    if not direct_only and sol.selection.N != scn.cfg.N:
        raise ValueError(f"stored selection has {sol.selection.N} elements, scenario has N={scn.cfg.N}")
    ratios = sol.info.get('rank_ratios')
    out = MethodOutcome(sol.method, sol.status, True, False, sol.selection, sol.beamformer, sol.power_watts,
                        direct_only=direct_only, robust=sol.robust,
                        info={'rank_ratios': ratios} if ratios else {})
    check = assess(out, scn, args.samples, args.seed)
    power = sol.beamformer.power
    checks = {'qos': bool(check.min_slack >= -args.tol),
              'power': bool(np.isclose(power, sol.power_watts, rtol=POWER_RTOL, atol=0.0))}
    if sol.robust:
        checks['certified'] = bool(check.certified)
        if check.rank_ratio is not None:
            checks['rank_one'] = bool(check.rank_ratio <= RANK_RATIO_TOL)
    ok = all(checks.values())
    _print({'ok': ok, 'checks': checks, 'min_slack': check.min_slack, 'power_watts': power,
            'rank_ratio': check.rank_ratio})
    return EXIT_OK if ok else EXIT_INFEASIBLE


def _method_arg(text: str) -> str:
    return METHOD_ALIASES.get(text, text)


class ArgumentParser(argparse.ArgumentParser):
    """Reports usage errors with the input-error exit code."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = ArgumentParser(
        prog='irs_alloc',
        description="Joint beamforming and discrete IRS phase design for minimum transmit power",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Draw a scenario with an imperfect estimate (kappa = 0.1)
  irs_alloc gen --M 3 --K 2 --N 4 --bits 1 --gamma-db 5 --seed 7 --kappa 0.1 -o scn.json

  # Global optimum by decomposition, with the iteration trace
  irs_alloc solve --scenario scn.json --method gbd --delta 1e-3 -o sol.json --trace gbd.jsonl

  # Robust penalized SCA against the stored estimate
  irs_alloc solve --scenario scn.json --method sca --robust --mu0 1e-3

  # Sweep from a YAML spec on 4 workers, then re-check a design
  irs_alloc sweep --spec sweep.yaml --workers 4
  irs_alloc verify --scenario scn.json --solution sol.json
        """
    )
    parser.add_argument('--version', action='version', version=f"%(prog)s {__version__}")
    parser.add_argument('--log-level', default='INFO', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'],
                        help='Root logger level (default: INFO)')
    parser.add_argument('--defaults', default=None,
                        help='Defaults YAML (default: config/defaults.yaml shipped with the package)')
    sub = parser.add_subparsers(dest='command', required=True)

    gen = sub.add_parser('gen', help='Draw a scenario and write it as JSON')
    gen.add_argument('--M', type=int, help='BS antennas')
    gen.add_argument('--K', type=int, help='Users')
    gen.add_argument('--N', type=int, help='IRS elements')
    gen.add_argument('--bits', type=int, help='Phase resolution in bits (L = 2^bits)')
    gen.add_argument('--gamma-db', type=float, help='SINR target of every user in dB')
    gen.add_argument('--sigma2-dbm', type=float, help='Noise power of every user in dBm')
    gen.add_argument('--seed', type=int, default=0, help='Channel seed (default: 0)')
    gen.add_argument('--kappa', type=float, default=None, help='Also store an estimate with this error level')
    gen.add_argument('--estimate-seed', type=int, default=None, help='Seed of the error draw (default: --seed)')
    gen.add_argument('-o', '--output', required=True, help='Scenario file to write')
    gen.set_defaults(func=cmd_gen)

    solve = sub.add_parser('solve', help='Solve a stored scenario with one method')
    solve.add_argument('--scenario', required=True, help='Scenario JSON file')
    solve.add_argument('--method', type=_method_arg, default='gbd',
                       choices=list(METHODS), help='gbd, sca, es, no-irs, random or gbd_perfect_csi')
    solve.add_argument('--delta', type=float, default=DEFAULT_DELTA, help='GBD relative gap (default: 1e-3)')
    solve.add_argument('--mu0', type=float, default=None, help='Initial SCA penalty parameter')
    solve.add_argument('--seed', type=int, default=0, help='Seed of random starts (default: 0)')
    solve.add_argument('--robust', action='store_true', help='Design against the estimate and its error ball')
    solve.add_argument('--kappa', type=float, default=None,
                       help='Draw a fresh estimate with this error level instead of the stored one')
    solve.add_argument('--estimate-seed', type=int, default=None, help='Seed of the fresh error draw')
    solve.add_argument('--max-iter', type=int, default=None, help='GBD iteration cap (default: L^N + 1)')
    solve.add_argument('--es-cap', type=int, default=ES_CAP, help=f'Largest L^N for es (default: {ES_CAP})')
    solve.add_argument('--workers', type=int, default=1, help='Threads for exhaustive search')
    solve.add_argument('--samples', type=int, default=WORST_CASE_SAMPLES,
                       help='Error samples of the worst-case check')
    solve.add_argument('--trace', default=None, help='Write the iteration trace as JSON lines')
    solve.add_argument('-o', '--output', default=None, help='Solution file to write')
    solve.set_defaults(func=cmd_solve)

    sweep = sub.add_parser('sweep', help='Run an experiment spec')
    sweep.add_argument('--spec', required=True, help='Experiment spec (YAML or JSON)')
    sweep.add_argument('--workers', type=int, default=1, help='Parallel (point, seed) tasks')
    sweep.add_argument('--output', default=None, help='Override the output prefix of the spec')
    sweep.set_defaults(func=cmd_sweep)

    verify = sub.add_parser('verify', help='Re-check a stored solution against its scenario')
    verify.add_argument('--scenario', required=True, help='Scenario JSON file')
    verify.add_argument('--solution', required=True, help='Solution JSON file')
    verify.add_argument('--samples', type=int, default=WORST_CASE_SAMPLES,
                        help='Error samples of the worst-case check')
    verify.add_argument('--seed', type=int, default=0, help='Seed of the error samples')
    verify.add_argument('--tol', type=float, default=1e-6, help='Accepted relative SINR shortfall')
    verify.set_defaults(func=cmd_verify)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format=LOG_FORMAT)
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError, yaml.YAMLError) as e:
        logger.error(f"[{args.command}] {e}")
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    except KeyboardInterrupt:
        print("\nInterrupted", file=sys.stderr)
        return EXIT_NOT_CONVERGED


if __name__ == '__main__':
    sys.exit(main())

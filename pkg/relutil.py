#!/usr/bin/env python3
"""
relutil: relative-utility portfolio experiments from the command line.

Usage:
    python relutil.py <subcommand> [--spec file.json] [--seed S] [--out dir]
                      [--data path] [--fast] [--workers N] [-v]

Subcommands: table1, fig1, nyse-log, table4, table5, fig2, bound-report,
simulate, optimize, compare.

Exit codes: 0 success, 1 internal error, 2 usage error, 3 dataset missing.
"""

import argparse
import json
import logging
import sys
import time

from relutil_experiments import DatasetMissingError, ExperimentSpec, NumpyEncoder, bound_inputs, run_experiment

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_SKIPPED = 3

logger = logging.getLogger('relutil')


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _alpha_list(text: str):
    try:
        return [float(a) for a in text.split(',') if a.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"Not a comma-separated list of numbers: '{text}'")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--spec', help="JSON file with experiment parameters")
    common.add_argument('--seed', type=int, help="Master seed (default 0)")
    common.add_argument('--out', help="Output directory (default ./results)")
    common.add_argument('--data', help="Dataset directory (default $RELUTIL_DATA_DIR or ./data)")
    common.add_argument('--dataset', help="Dataset name (nyse1, nyse2) or returns file path")
    common.add_argument('--tickers', help="Ticker sidecar file for the dataset")
    common.add_argument('--fast', action='store_true', help="Desk-scale preset (20 realizations, 1e5 samples)")
    common.add_argument('--workers', type=int, help="Worker processes (default 1)")
    common.add_argument('--xlsx', action='store_true', help="Also write an .xlsx workbook")
    common.add_argument('--json', action='store_true', help="Print the summary as JSON")
    common.add_argument('-v', '--verbose', action='count', default=0, help="-v info, -vv debug")

    parser = _Parser(prog='relutil', description="Relative-utility portfolio selection experiments")
    sub = parser.add_subparsers(dest='command', metavar='subcommand', parser_class=_Parser)
    sub.required = True

    p = sub.add_parser('table1', parents=[common], help="Optimal risky weight, cash + one stock")
    p.add_argument('--alphas', type=_alpha_list)
    p.add_argument('--realizations', type=int)
    p.add_argument('--n', type=int)

    p = sub.add_parser('fig1', parents=[common], help="Optimal weight and true utility histograms")
    p.add_argument('--alpha', type=float)
    p.add_argument('--realizations', type=int)
    p.add_argument('--n-true', dest='N_true', type=int)

    p = sub.add_parser('nyse-log', parents=[common], help="Log-optimal weights over GDSEG runs")
    p.add_argument('--runs', type=int)

    p = sub.add_parser('table4', parents=[common], help="Power-utility portfolios, best of k GDSEG runs")
    p.add_argument('--alphas', type=_alpha_list)
    p.add_argument('--k', type=int)

    p = sub.add_parser('table5', parents=[common], help="Annual wealth statistics under Black-Scholes")
    p.add_argument('--paths', type=int)
    p.add_argument('--moments', help="MarketSpec JSON (or simulate meta file) instead of the dataset")
    p.add_argument('--portfolios-from', dest='portfolios_from', help="table4.jsonl with extra portfolios")

    p = sub.add_parser('fig2', parents=[common], help="Average optimal weights on simulated data")
    p.add_argument('--alpha', type=float)
    p.add_argument('--realizations', type=int)
    p.add_argument('--k', type=int)
    p.add_argument('--n-true', dest='N_true', type=int)
    p.add_argument('--moments')

    p = sub.add_parser('bound-report', parents=[common], help="Estimation error bounds")
    p.add_argument('--n', type=int)
    p.add_argument('--d', type=int)
    p.add_argument('--alpha', type=float)
    p.add_argument('--delta', type=float)
    p.add_argument('--K', type=float)
    p.add_argument('--A', type=float)
    p.add_argument('--L-n', dest='L_n', type=float)
    p.add_argument('--m', type=int)

    p = sub.add_parser('simulate', parents=[common], help="Write simulated returns")
    p.add_argument('--variant', choices=['scalar', 'multi'])
    p.add_argument('--n', type=int)
    p.add_argument('--mu', type=float)
    p.add_argument('--sigma', type=float)
    p.add_argument('--moments')

    for name, text in (('optimize', "Optimal portfolio for a dataset"),
                       ('compare', "Compare SEG, GDSEG and grid / bisection")):
        p = sub.add_parser(name, parents=[common], help=text)
        group = p.add_mutually_exclusive_group()
        group.add_argument('--alpha', type=float, help="Power utility exponent")
        group.add_argument('--log', action='store_true', help="Log utility (ordinary objective)")
        p.add_argument('--relative', action='store_true', default=None)
        p.add_argument('--ordinary', dest='relative', action='store_false', default=None)
        p.add_argument('--k', type=int)
        if name == 'compare':
            p.add_argument('--m', type=int)
    return parser


PARAM_FLAGS = ('alphas', 'alpha', 'realizations', 'n', 'N_true', 'runs', 'k', 'paths', 'moments',
               'portfolios_from', 'd', 'delta', 'K', 'A', 'L_n', 'm', 'variant', 'mu', 'sigma',
               'dataset', 'tickers', 'relative')


def spec_from_args(args) -> ExperimentSpec:
    params = {key: getattr(args, key) for key in PARAM_FLAGS if getattr(args, key, None) is not None}
    if getattr(args, 'log', False):
        params['utility'] = 'log'
    elif args.command in ('optimize', 'compare') and 'alpha' in params:
        params['utility'] = 'power'
    spec = ExperimentSpec.resolve(args.command, args.spec, args.fast, params,
                                  seed=args.seed, out_dir=args.out, data_dir=args.data, workers=args.workers)
    if getattr(args, 'log', False):
        spec.params['alpha'] = None
    if args.command == 'bound-report':
        bound_inputs(spec.params)
    return spec


def configure_logging(verbosity: int):
    level = logging.WARNING if verbosity == 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(level=level, format='%(asctime)s %(levelname)s %(name)s: %(message)s')


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        configure_logging(args.verbose)
        spec = spec_from_args(args)
    except UsageError as e:
        print(f"relutil: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, KeyError, OSError) as e:
        print(f"relutil: error: {e}", file=sys.stderr)
        return EXIT_USAGE

    logger.info("Running %s, seed %s, spec %s", spec.experiment, spec.seed, spec.spec_hash()[:12])
    started = time.perf_counter()
    try:
        result = run_experiment(spec)
        written = result.write(spec.out_dir, xlsx=args.xlsx)
    except DatasetMissingError as e:
        print(f"skipped: dataset absent ({e})")
        return EXIT_SKIPPED
    except ValueError as e:
        print(f"relutil: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        print("\nCancelled by user")
        return EXIT_ERROR
    except Exception as e:
        print(f"Error: {e}")
        import traceback
        traceback.print_exc()
        return EXIT_ERROR

    if args.json:
        print(json.dumps({'metadata': result.metadata, 'summary': result.summary},
                         cls=NumpyEncoder, sort_keys=True, indent=2))
    else:
        result.print_summary()
        for path in written:
            print(f"  wrote {path}")
    print(f"Runtime: {time.perf_counter() - started:.1f} s")
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())

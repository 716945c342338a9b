"""
Command-line application
Builds the argument parser and dispatches to the command routes
"""

import argparse
import sys
from typing import List, Optional

from alora.models.config import SCORERS

from .middleware import EXIT_CONFIG, setup_logging
from .routes import cmd_compare, cmd_merge, cmd_report, cmd_run, cmd_sweep


def _int_list(raw: str) -> List[int]:
    try:
        return [int(part) for part in raw.split(',') if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {raw!r}")


def _str_list(raw: str) -> List[str]:
    return [part.strip() for part in raw.split(',') if part.strip()]


def create_parser() -> argparse.ArgumentParser:
    """Argument parser for every command"""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--verbose', action='store_true', help='debug logging')
    common.add_argument('--quiet', action='store_true', help='warnings and errors only')

    parser = argparse.ArgumentParser(prog='alora', description='Adaptive LoRA rank allocation lab')
    sub = parser.add_subparsers(dest='command', required=True)

    run = sub.add_parser('run', parents=[common], help='train, allocate and write run artifacts')
    run.add_argument('--config', required=True, help='JSON run config')
    run.add_argument('--seed', type=int, help='overrides the config seed')
    run.add_argument('--out', help='overrides out_dir')
    run.add_argument('--scorer', choices=SCORERS, help='overrides the config scorer')

    merge = sub.add_parser('merge', parents=[common], help='fold adapters into dense weights')
    merge.add_argument('checkpoint', help='adapter-form checkpoint')
    merge.add_argument('--out', required=True, help='merged checkpoint path')

    report = sub.add_parser('report', parents=[common], help='print and export the final allocation')
    report.add_argument('run_dir')
    report.add_argument('--out', help='directory for the heatmap CSV (default: run_dir)')

    compare = sub.add_parser('compare', parents=[common], help='same runs under several scorers')
    compare.add_argument('--config', required=True)
    compare.add_argument('--scorers', type=_str_list, default=list(SCORERS),
                         help='comma-separated scorer names (at least two)')
    compare.add_argument('--seeds', type=_int_list, help='comma-separated seeds (default: config seeds)')
    compare.add_argument('--out', help='overrides out_dir')

    sweep = sub.add_parser('sweep', parents=[common], help='final dev loss across rank budgets')
    sweep.add_argument('--config', required=True)
    sweep.add_argument('--budgets', type=_int_list, help='comma-separated per-module ranks')
    sweep.add_argument('--seeds', type=_int_list, help='comma-separated seeds (default: config seeds)')
    sweep.add_argument('--out', help='overrides out_dir')
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, configure logging and run one command; returns the exit code"""
    parser = create_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else 0
    setup_logging(verbose=args.verbose, quiet=args.quiet)

    if args.command == 'run':
        return cmd_run(args.config, seed=args.seed, out_dir=args.out, scorer=args.scorer)
    if args.command == 'merge':
        return cmd_merge(args.checkpoint, args.out)
    if args.command == 'report':
        return cmd_report(args.run_dir, out_dir=args.out)
    if args.command == 'compare':
        return cmd_compare(args.config, args.scorers, out_dir=args.out, seeds=args.seeds)
    return cmd_sweep(args.config, budgets=args.budgets, seeds=args.seeds, out_dir=args.out)


if __name__ == '__main__':
    sys.exit(main())

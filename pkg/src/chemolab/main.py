"""chemolab command line

    chemolab run CONFIG | --builtin NAME
    chemolab verify [--quick] [--only NAME ...]
    chemolab sweep CONFIG --key KEY --values V ... [--template T]
    chemolab maxreg [--nx N] [--ny N] [--T T] [--dt DT] [--pq P Q ...]
    chemolab cutoff-check --x0 X Y --rA R --rV R --eta ETA [--mode M]

Results are printed as JSON on stdout; logs go to stderr. On failure a JSON
failure summary is printed and the exit code is non-zero.
"""

import argparse
import json
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel

from . import VERSION
from .config import (
    BUILTIN_CONFIGS,
    as_config_error,
    load_builtin,
    load_config,
)
from .cutoff import CutoffSpec
from .errors import ChemolabError
from .grid import Grid
from .loggers import get_logger
from .maxreg import heat_cfl_limit
from .runner import cmd_cutoff_check, cmd_maxreg, cmd_run, cmd_sweep
from .settings import settings
from .verify import CHECKS, cmd_verify

logger = get_logger(__name__)

FailureType = Literal[
    'syntax_error',
    'unknown_identifier',
    'evaluation_error',
    'config_error',
    'hypothesis_error',
    'cutoff_error',
    'probe_error',
    'check_failed',
    'io_error',
    'error',
]


class FailureSummary(BaseModel):
    """Machine-readable failure report"""

    type: FailureType
    message: str
    details: dict[str, Any] = {}


def build_parser() -> argparse.ArgumentParser:
    """Parser with one subcommand per operation"""
    parser = argparse.ArgumentParser(
        prog='chemolab',
        description='Numerical laboratory for chemotaxis-growth systems',
    )
    parser.add_argument('--version', action='version', version=VERSION)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        '--out', type=Path, default=None, help='output directory'
    )
    sub = parser.add_subparsers(dest='command', required=True)

    run = sub.add_parser(
        'run', parents=[common], help='simulate one configuration'
    )
    source = run.add_mutually_exclusive_group(required=True)
    source.add_argument('config', nargs='?', type=Path)
    source.add_argument('--builtin', choices=sorted(BUILTIN_CONFIGS))

    verify = sub.add_parser(
        'verify', parents=[common], help='run the acceptance checks'
    )
    verify.add_argument('--quick', action='store_true')
    verify.add_argument(
        '--only', nargs='+', choices=[name for name, _ in CHECKS]
    )

    sweep = sub.add_parser(
        'sweep', parents=[common], help='vary one config key across values'
    )
    sweep.add_argument('config', type=Path)
    sweep.add_argument('--key', required=True, help='dotted key, e.g. time.T')
    sweep.add_argument('--values', nargs='+', required=True)
    sweep.add_argument(
        '--template', help="string with a '{value}' placeholder"
    )
    sweep.add_argument('--workers', type=int, default=None)

    maxreg = sub.add_parser(
        'maxreg', parents=[common], help='estimate K(p, q)'
    )
    maxreg.add_argument('--nx', type=int, default=8)
    maxreg.add_argument('--ny', type=int, default=8)
    maxreg.add_argument('--T', type=float, default=None)
    maxreg.add_argument('--dt', type=float, default=None)
    maxreg.add_argument(
        '--pq',
        type=float,
        nargs=2,
        action='append',
        metavar=('P', 'Q'),
        help='exponent pair, repeatable (default 2 2)',
    )
    maxreg.add_argument('--seeds', type=int, default=1)
    maxreg.add_argument('--budget', type=int, default=None)

    cutoff = sub.add_parser(
        'cutoff-check', parents=[common], help='build and verify a cutoff'
    )
    cutoff.add_argument('--x0', type=float, nargs=2, required=True)
    cutoff.add_argument('--rA', type=float, required=True)
    cutoff.add_argument('--rV', type=float, required=True)
    cutoff.add_argument('--eta', type=float, required=True)
    cutoff.add_argument('--mode', choices=['radial', 'tensor'])
    cutoff.add_argument('--nx', type=int, default=64)
    cutoff.add_argument('--ny', type=int, default=64)
    cutoff.add_argument('--Lx', type=float, default=1.0)
    cutoff.add_argument('--Ly', type=float, default=1.0)
    return parser


def _dispatch(args: argparse.Namespace) -> tuple[Any, bool]:
    match args.command:
        case 'run':
            loaded = (
                load_builtin(args.builtin)
                if args.builtin
                else load_config(args.config)
            )
            return cmd_run(loaded, args.out), True
        case 'verify':
            report = cmd_verify(args.quick, args.only, args.out)
            return report, report.all_passed
        case 'sweep':
            summaries = cmd_sweep(
                args.config,
                args.key,
                args.values,
                args.template,
                args.out,
                args.workers,
            )
            return [s.model_dump(mode='json') for s in summaries], True
        case 'maxreg':
            pairs = [tuple(pq) for pq in args.pq] if args.pq else [(2.0, 2.0)]
            grid = Grid(nx=args.nx, ny=args.ny, Lx=1.0, Ly=1.0)
            T = args.T
            if T is None:
                T = settings.probe_steps * 0.9 * heat_cfl_limit(grid)
            summary = cmd_maxreg(
                args.nx,
                args.ny,
                T,
                args.dt,
                pairs,
                args.seeds,
                args.budget,
                args.out,
            )
            return summary, True
        case 'cutoff-check':
            spec = CutoffSpec(
                x0=tuple(args.x0),
                rA=args.rA,
                rV=args.rV,
                eta=args.eta,
                mode=args.mode,
            )
            grid = Grid(nx=args.nx, ny=args.ny, Lx=args.Lx, Ly=args.Ly)
            return cmd_cutoff_check(spec, grid, args.out), True
    raise ValueError(f'unknown command {args.command!r}')


def dispatch(args: argparse.Namespace) -> tuple[Any, bool]:
    """Run a subcommand; returns its printable result and success flag.

    Raises:
        ConfigError: For argument values that fail validation.
    """
    try:
        return _dispatch(args)
    except ValueError as e:
        raise as_config_error(e) from e


def _emit(result: Any) -> None:
    if isinstance(result, BaseModel):
        print(result.model_dump_json(indent=2))
    else:
        print(json.dumps(result, indent=2))


def failure_summary(error: BaseException) -> FailureSummary:
    """Translate an exception into the printed failure summary"""
    if isinstance(error, ChemolabError):
        message = str(error)
        notes = getattr(error, '__notes__', [])
        if notes:
            message += ' (' + '; '.join(notes) + ')'
        return FailureSummary(
            type=error.kind, message=message, details=error.details()
        )
    if isinstance(error, OSError):
        return FailureSummary(
            type='io_error',
            message=str(error),
            details={'path': error.filename},
        )
    return FailureSummary(type='error', message=str(error))


def main(argv: Sequence[str] | None = None) -> int:
    """Entry point of the `chemolab` script"""
    args = build_parser().parse_args(argv)
    try:
        result, ok = dispatch(args)
    except (ChemolabError, OSError) as e:
        logger.error(str(e))
        print(failure_summary(e).model_dump_json(indent=2))
        return 1
    except Exception as e:
        logger.exception('unexpected error')
        print(failure_summary(e).model_dump_json(indent=2))
        return 1
    if not ok:
        failed = [c.name for c in result.failures]
        report = result.model_dump(mode='json')
        summary = FailureSummary(
            type='check_failed',
            message=f'{len(failed)} check(s) failed',
            details={'failed': failed, 'report': report},
        )
        print(summary.model_dump_json(indent=2))
        return 1
    _emit(result)
    return 0


if __name__ == '__main__':
    sys.exit(main())

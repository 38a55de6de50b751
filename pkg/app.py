"""
Electromechanics toolkit - command-line application factory.

Builds the ``electromech`` argument parser from the command modules and
maps toolkit failures to process exit codes.
"""
import argparse
import sys
from typing import List, Optional

from commands import calibrate, cooling, fit, g0, plot, ringdown, simulate
from config import config
from utils.errors import ToolkitError
from utils.logging_config import get_logger, setup_logging

logger = get_logger(__name__)

COMMANDS = [simulate, fit, cooling, calibrate, ringdown, g0, plot]


def _add_global_arguments(parser: argparse.ArgumentParser, suppress: bool = False) -> None:
    """Flags accepted both before and after the subcommand."""
    def default(value):
        return argparse.SUPPRESS if suppress else value

    parser.add_argument('--config', default=default(None),
                        help='device configuration JSON (default: $ELECTROMECH_CONFIG or data/device_soi.json)')
    parser.add_argument('--seed', type=int, default=default(config.DEFAULT_SEED),
                        help='base seed for every random draw')
    parser.add_argument('--out', default=default('.'), help='output directory')
    parser.add_argument('--exclude', action='append', default=default(None), metavar='LO:HI',
                        help='exclude a grid window (Hz offsets) from fits; repeatable')
    parser.add_argument('--format', choices=('csv', 'json'), default=default(None),
                        help='report format (default: JSON reports, text summaries)')


def create_app() -> argparse.ArgumentParser:
    """Create and configure the command-line parser.

    Returns:
        Parser whose parsed namespace carries a ``handler`` callable.
    """
    parser = argparse.ArgumentParser(
        prog='electromech',
        description='Simulate and fit cavity electromechanics measurements.',
    )
    _add_global_arguments(parser)
    common = argparse.ArgumentParser(add_help=False)
    _add_global_arguments(common, suppress=True)

    subparsers = parser.add_subparsers(dest='command', metavar='COMMAND')
    subparsers.required = True
    for module in COMMANDS:
        module.register(subparsers, [common])
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Parse ``argv``, run the chosen command and return its exit code."""
    setup_logging(config.LOG_LEVEL)
    args = create_app().parse_args(argv)
    logger.debug(f"Running {args.command} with seed {args.seed}")
    try:
        return args.handler(args)
    except ToolkitError as exc:
        logger.error(f"{args.command} failed: {exc}")
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == '__main__':
    sys.exit(main())

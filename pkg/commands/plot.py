"""
``plot``: render a trace or result table to SVG with its CSV companion.

The psd_dbm style converts a noise trace to analyzer dBm with the gain of the
``--config`` device and the trace's own resolution bandwidth.
"""
import argparse
from pathlib import Path
from typing import List

from commands.common import load_device, output_dir
from models import TraceKind
from utils.helpers import read_table, read_trace
from utils.plotting import STYLES, export_plot

NAME = 'plot'
_TRACE_KINDS = {kind.value for kind in TraceKind}


def register(subparsers: argparse._SubParsersAction, parents: List[argparse.ArgumentParser]) -> None:
    parser = subparsers.add_parser(NAME, parents=parents, help='plot a trace or result table')
    parser.add_argument('--input', required=True, help='trace or table file')
    parser.add_argument('--style', choices=STYLES, required=True)
    parser.add_argument('--name', default=None, help='output stem (default: input stem)')
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    table = read_table(args.input)
    source = read_trace(args.input) if table.kind in _TRACE_KINDS else table
    stem = args.name or f'{Path(args.input).stem}_plot'
    gain_db = load_device(args)[1].gain_db if args.style == 'psd_dbm' else 0.0
    print(export_plot(source, args.style, output_dir(args) / f'{stem}.svg', gain_db))
    return 0

"""
``extract-g0``: fit every EIT trace of a power sweep, then G = g0 sqrt(n_d).
"""
import argparse
from typing import List

import numpy as np

from commands.common import exclusion_windows, load_device, output_dir
from commands.fit import write_report
from models import PowerSweep, SweepPoint
from services.inference import extract_g0, fit_eit_trace
from services.physics import angular_to_hz
from utils.errors import ConvergenceError, UsageError
from utils.helpers import Table, read_trace, write_table
from utils.logging_config import get_logger
from utils.plotting import export_plot

logger = get_logger(__name__)

NAME = 'extract-g0'


def register(subparsers: argparse._SubParsersAction, parents: List[argparse.ArgumentParser]) -> None:
    parser = subparsers.add_parser(NAME, parents=parents, help='vacuum coupling rate from an EIT power sweep')
    parser.add_argument('--traces', nargs='+', required=True, help='EIT traces, at least three drive powers')
    parser.add_argument('--plot', action='store_true', help='also write g0.svg')
    parser.set_defaults(handler=run)


def sweep_points(paths: List[str], device, exclusions) -> List[SweepPoint]:
    """One fitted point per trace, sorted by photon number."""
    points = []
    for path in paths:
        trace = read_trace(path)
        if 'n_d' not in trace.metadata:
            raise UsageError(f'{path}: EIT trace lacks n_d metadata', field='traces')
        result = fit_eit_trace(trace, device, exclusions)
        if not result.converged:
            raise ConvergenceError(f'{path}: EIT fit did not converge: {result.message}', field='traces')
        points.append(SweepPoint(
            power_dbm=float(trace.metadata.get('power_dbm', np.nan)),
            n_d=float(trace.metadata['n_d']),
            fit=result,
        ))
        logger.info(f"{path}: G/2pi = {angular_to_hz(result.estimates['G']):.5g} Hz")
    return sorted(points, key=lambda point: point.n_d)


def run(args: argparse.Namespace) -> int:
    _, device = load_device(args)
    if len(args.traces) < 3:
        raise UsageError(f'need at least 3 traces, got {len(args.traces)}', field='traces')
    out = output_dir(args)

    sweep = PowerSweep.from_points(sweep_points(args.traces, device, exclusion_windows(args)))
    estimate = extract_g0(sweep)

    rows = np.array([
        [point.power_dbm, point.n_d, angular_to_hz(point.fit.estimates['G']),
         angular_to_hz(point.fit.ci95['G'])]
        for point in sweep.rows
    ])
    table = Table('g0-sweep', ['power_dbm', 'n_d', 'G_hz', 'G_ci95_hz'], rows, {
        'g0_hz': estimate.g0_hz,
        'g0_ci95_hz': estimate.ci95_hz,
        'loglog_slope': estimate.loglog_slope,
    })
    print(write_table(out / 'g0_sweep.csv', table))

    report = estimate.fit.to_report()
    report.update({
        'g0_hz': estimate.g0_hz,
        'g0_ci95_hz': estimate.ci95_hz,
        'loglog_slope': estimate.loglog_slope,
        'traces': list(args.traces),
    })
    print(write_report(report, out, args.format, stem='g0_report'))
    print(f"  g0/2pi = {estimate.g0_hz:.5g} +- {estimate.ci95_hz:.3g} Hz (log-log slope {estimate.loglog_slope:.4f})")
    if args.plot:
        print(export_plot(table, 'g0', out / 'g0.svg'))
    return 0

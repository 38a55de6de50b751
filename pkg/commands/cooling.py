"""
``cooling-curve``: phonon occupancy versus red-sideband drive strength.
"""
import argparse
from typing import List

import numpy as np

from commands.common import add_drive_arguments, drive_tones, load_device, output_dir, require_increasing
from models import Device, DriveTone
from services.dynamics import cooling_steady_state
from services.inference import cooling_curve_analysis, fit_noise_spectrum
from services.physics import angular_to_hz
from services.response import backaction_damping, intracavity_photons
from utils.errors import UsageError
from utils.helpers import Table, read_trace, write_json, write_table
from utils.logging_config import get_logger
from utils.plotting import export_plot

logger = get_logger(__name__)

NAME = 'cooling-curve'
COLUMNS = ['power_dbm', 'n_d', 'gamma_em_hz', 'cooperativity', 'n_m_ideal', 'n_m']
FIT_COLUMNS = ['n_m_fit', 'n_m_fit_ci95', 'deviation', 'anomalous']


def register(subparsers: argparse._SubParsersAction, parents: List[argparse.ArgumentParser]) -> None:
    parser = subparsers.add_parser(NAME, parents=parents, help='cooling-curve table and plot')
    add_drive_arguments(parser)
    parser.add_argument('--traces', nargs='+', default=None,
                        help='noise traces, one per drive point, to compare fitted occupancies')
    parser.add_argument('--plot', action='store_true', help='also write cooling_curve.svg')
    parser.set_defaults(handler=run)


def cooling_table(device: Device, tones: List[DriveTone]) -> Table:
    """Ideal and full-model steady-state occupancy for each drive tone."""
    rows = []
    for tone in tones:
        n_d = intracavity_photons(tone, device.port)
        gamma_em = backaction_damping(n_d, device.g0, device.port.kappa)
        args = (device.baths, device.mode.gamma_i, gamma_em, device.port.kappa, device.mode.omega_m)
        rows.append([
            tone.generator_power,
            n_d,
            angular_to_hz(gamma_em),
            gamma_em / device.mode.gamma_i,
            cooling_steady_state(*args, ideal=True),
            cooling_steady_state(*args),
        ])
    metadata = {
        'n_f_m': device.baths.n_mech,
        'g0_hz': angular_to_hz(device.g0),
        'kappa_hz': angular_to_hz(device.port.kappa),
        'gamma_i_hz': angular_to_hz(device.mode.gamma_i),
    }
    return Table('cooling', COLUMNS, np.array(rows, dtype=float), metadata)


def add_fitted_occupancies(table: Table, device: Device, tones: List[DriveTone], trace_paths: List[str]) -> Table:
    """Fit each noise trace and append fitted n_m with its anomaly flag."""
    if len(trace_paths) != len(tones):
        raise UsageError(f'{len(trace_paths)} traces for {len(tones)} drive points', field='traces')
    points = []
    for tone, path in zip(tones, trace_paths):
        noise_fit = fit_noise_spectrum(read_trace(path), device, tone)
        points.append((intracavity_photons(tone, device.port), noise_fit))
    analysis = cooling_curve_analysis(points, device)
    extra = np.array([[row.n_m, row.n_m_ci95, row.deviation, float(row.anomalous)] for row in analysis])
    flagged = sum(row.anomalous for row in analysis)
    if flagged:
        logger.warning(f"{flagged} point(s) deviate from the ideal cooling law by more than 3 sigma")
    return Table(table.kind, table.columns + FIT_COLUMNS, np.hstack([table.rows, extra]), table.metadata)


def run(args: argparse.Namespace) -> int:
    _, device = load_device(args)
    tones = drive_tones(args, device)
    require_increasing([t.generator_power for t in tones], 'powers')
    out = output_dir(args)

    table = cooling_table(device, tones)
    if args.traces:
        table = add_fitted_occupancies(table, device, tones, args.traces)
    if args.format == 'json':
        path = write_json(out / 'cooling_curve.json', {
            'columns': table.columns, 'rows': table.rows.tolist(), 'metadata': table.metadata,
        })
    else:
        path = write_table(out / 'cooling_curve.csv', table)
    print(path)
    if args.plot:
        print(export_plot(table, 'cooling', out / 'cooling_curve.svg'))
    ideal = table.column('n_m_ideal')
    print(f"ideal occupancy {ideal[0]:.4g} -> {ideal[-1]:.4g} ({ideal[0] / ideal[-1]:.3g}x cooling)")
    return 0

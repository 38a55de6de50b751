"""
``ringdown``: blue-pulse ring-up followed by free decay under the red probe.

Without ``--trace`` the default pulse schedule is simulated first, so the
command doubles as an end-to-end check of the dynamics and the decay fit.
"""
import argparse
from typing import Any, Dict, List

import numpy as np

from commands.common import output_dir, load_device, seeds_for
from commands.fit import write_report
from commands.simulate import ringdown_schedule
from models import Trace
from services.physics import angular_to_hz, quality_factor
from services.response import backaction_damping, intracavity_photons
from services.inference import fit_ringdown
from services.synthesis import synthesize_ringdown_trace
from utils.errors import ConvergenceError, UsageError
from utils.helpers import read_trace, write_trace
from utils.logging_config import get_logger
from utils.plotting import export_plot

logger = get_logger(__name__)

NAME = 'ringdown'


def register(subparsers: argparse._SubParsersAction, parents: List[argparse.ArgumentParser]) -> None:
    parser = subparsers.add_parser(NAME, parents=parents, help='simulate or read a ring-down and fit the decay')
    parser.add_argument('--trace', default=None, help='time-series trace; simulated when omitted')
    parser.add_argument('--noise', type=float, default=0.0, help='Gaussian noise std of the simulated signal')
    parser.add_argument('--probe-power', type=float, default=-20.0, help='probe power, dBm')
    parser.add_argument('--pulse-power', type=float, default=-10.0, help='blue pulse power, dBm')
    parser.add_argument('--pulse-duration', type=float, default=1.0, help='pulse length, s')
    parser.add_argument('--settle', type=float, default=1.0, help='probe-only time before the pulse, s')
    parser.add_argument('--decay', type=float, default=10.0, help='probe-only time after the pulse, s')
    parser.add_argument('--fit-settle', type=float, default=1e-3,
                        help='time after switch-off left to the cavity transient, s')
    parser.add_argument('--plot', action='store_true', help='also write ringdown.svg')
    parser.set_defaults(handler=run)


def _simulated_trace(device, args: argparse.Namespace) -> Trace:
    schedule = ringdown_schedule(device, args)
    rng = seeds_for(args.seed, 1)[0]
    trace = synthesize_ringdown_trace(device, device.baths, schedule, rng, noise=args.noise)
    trace.metadata['seed'] = args.seed
    trace.metadata['probe_power_dbm'] = args.probe_power
    return trace


def run(args: argparse.Namespace) -> int:
    _, device = load_device(args)
    out = output_dir(args)

    if args.trace:
        trace = read_trace(args.trace)
    else:
        trace = _simulated_trace(device, args)
        print(write_trace(trace, out / 'ringdown_trace.csv'))
    if 'pulse_off_s' not in trace.metadata:
        raise UsageError('ring-down trace lacks pulse_off_s metadata', field='trace')

    ringdown = fit_ringdown(trace, float(trace.metadata['pulse_off_s']), settle=args.fit_settle)
    probe_power = float(trace.metadata.get('probe_power_dbm', args.probe_power))
    probe = device.tone(probe_power, device.mode.omega_m)
    gamma_em_probe = backaction_damping(intracavity_photons(probe, device.port), device.g0, device.port.kappa)
    gamma_i = ringdown.gamma_m - gamma_em_probe

    report: Dict[str, Any] = ringdown.fit.to_report()
    report.update({
        'gamma_m_hz': angular_to_hz(ringdown.gamma_m),
        'gamma_m_ci95_hz': angular_to_hz(ringdown.gamma_m_ci95),
        'gamma_em_probe_hz': angular_to_hz(gamma_em_probe),
        'gamma_i_hz': angular_to_hz(gamma_i),
        'q_m': quality_factor(device.mode.omega_m, gamma_i) if gamma_i > 0 else None,
        'kappa_transient_hz': (
            angular_to_hz(ringdown.kappa_transient) if ringdown.kappa_transient is not None else None
        ),
    })
    print(write_report(report, out, args.format, stem='ringdown_report'))
    print(f"  gamma_m = {report['gamma_m_hz']:.6g} +- {report['gamma_m_ci95_hz']:.3g} Hz")
    print(f"  gamma_i = {report['gamma_i_hz']:.6g} Hz (probe back-action {report['gamma_em_probe_hz']:.4g} Hz)")
    if report['kappa_transient_hz'] is not None:
        print(f"  cavity transient = {report['kappa_transient_hz']:.4g} Hz")
    if args.plot:
        print(export_plot(trace, 'timeseries', out / 'ringdown.svg'))
    if not np.isfinite(ringdown.gamma_m) or not ringdown.fit.converged:
        raise ConvergenceError(f'ring-down fit did not converge: {ringdown.fit.message}', field='fit')
    return 0

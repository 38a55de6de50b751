"""
``fit``: fit one trace and write the report and the residual trace.
"""
import argparse
import csv
from pathlib import Path
from typing import Any, Dict, List, Tuple

from commands.common import exclusion_windows, load_device, output_dir
from models import Device, DriveTone, FitResult, Trace, TraceKind
from services.inference import (
    fit_cavity_trace, fit_eit_trace, fit_noise_spectrum, fit_ringdown,
)
from services.physics import angular_to_hz, hz_to_angular
from utils.errors import ConvergenceError, UsageError
from utils.helpers import read_trace, write_json, write_trace
from utils.logging_config import get_logger

logger = get_logger(__name__)

NAME = 'fit'
KINDS = {
    'cavity': TraceKind.S11,
    'eit': TraceKind.S11,
    'noise': TraceKind.PSD,
    'ringdown': TraceKind.TIMESERIES,
}


def register(subparsers: argparse._SubParsersAction, parents: List[argparse.ArgumentParser]) -> None:
    parser = subparsers.add_parser(NAME, parents=parents, help='fit a trace file')
    parser.add_argument('--kind', choices=sorted(KINDS), required=True)
    parser.add_argument('--trace', required=True, help='trace file to fit')
    parser.add_argument('--residual-mode', choices=('complex', 'magnitude'), default='complex',
                        help='s11 fits: stacked re/im residuals or magnitudes only')
    parser.add_argument('--fixed-background', action='store_true',
                        help='hold the background at the configured values')
    parser.add_argument('--jitter-hz', type=float, default=None,
                        help='EIT: Gaussian omega_m jitter std used in the model')
    parser.add_argument('--fit-jitter', action='store_true', help='EIT: let the jitter std vary')
    parser.add_argument('--untie-baths', action='store_true',
                        help='noise: fit waveguide and cavity occupancies separately')
    parser.add_argument('--t-off', type=float, default=None,
                        help='ring-down: pulse switch-off time, s (default from trace metadata)')
    parser.add_argument('--settle', type=float, default=1e-3,
                        help='ring-down: time after switch-off left to the cavity transient, s')
    parser.set_defaults(handler=run)


def _drive_from_metadata(trace: Trace, device: Device) -> DriveTone:
    try:
        power = float(trace.metadata['power_dbm'])
        drive_hz = float(trace.metadata['drive_hz'])
    except KeyError as exc:
        raise UsageError(f'noise trace metadata lacks {exc.args[0]}', field=str(exc.args[0]))
    return DriveTone(power, device.attenuation, hz_to_angular(drive_hz))


def fit_trace(kind: str, trace: Trace, device: Device, args: argparse.Namespace) -> Tuple[FitResult, Dict[str, Any]]:
    """Run the fit for ``kind``; returns the raw result and the JSON report."""
    if trace.kind != KINDS[kind]:
        raise UsageError(f'{kind} fits need a {KINDS[kind].value} trace, got {trace.kind.value}', field='kind')
    if len(trace) == 0:
        raise UsageError('trace is empty', field='trace')
    exclusions = exclusion_windows(args)
    fit_background = not args.fixed_background

    if kind == 'cavity':
        result = fit_cavity_trace(trace, device.port, exclusions, fit_background, args.residual_mode)
        return result, result.to_report()
    if kind == 'eit':
        sigma = hz_to_angular(args.jitter_hz) if args.jitter_hz else None
        result = fit_eit_trace(
            trace, device, exclusions, fit_background, args.residual_mode,
            sigma_jitter=sigma, fit_jitter=args.fit_jitter,
        )
        return result, result.to_report()
    if kind == 'noise':
        drive = _drive_from_metadata(trace, device)
        noise_fit = fit_noise_spectrum(trace, device, drive, tie_baths=not args.untie_baths, exclusions=exclusions)
        return noise_fit.fit, noise_fit.to_report()

    t_off = args.t_off if args.t_off is not None else trace.metadata.get('pulse_off_s')
    if t_off is None:
        raise UsageError('ring-down fits need --t-off or pulse_off_s metadata', field='t_off')
    ringdown = fit_ringdown(trace, float(t_off), settle=args.settle)
    report = ringdown.fit.to_report()
    report['gamma_m_hz'] = angular_to_hz(ringdown.gamma_m)
    report['gamma_m_ci95_hz'] = angular_to_hz(ringdown.gamma_m_ci95)
    report['kappa_transient_hz'] = (
        angular_to_hz(ringdown.kappa_transient) if ringdown.kappa_transient is not None else None
    )
    return ringdown.fit, report


def write_report(report: Dict[str, Any], out: Path, fmt: str, stem: str = 'fit_report') -> Path:
    """JSON report, or a flat parameter table for ``--format csv``."""
    if fmt != 'csv':
        return write_json(out / f'{stem}.json', report)
    path = out / f'{stem}.csv'
    with path.open('w', newline='') as handle:
        writer = csv.writer(handle)
        writer.writerow(['name', 'value', 'ci95', 'unit', 'free'])
        for name, entry in report['parameters'].items():
            writer.writerow([
                name, repr(float(entry['value'])), repr(float(entry['ci95'])), entry['unit'], int(entry['free']),
            ])
    return path


def run(args: argparse.Namespace) -> int:
    _, device = load_device(args)
    trace = read_trace(args.trace)
    out = output_dir(args)
    result, report = fit_trace(args.kind, trace, device, args)

    report_path = write_report(report, out, args.format)
    residual = Trace(trace.kind, trace.grid, result.residuals, dict(trace.metadata, residual_of=Path(args.trace).name))
    write_trace(residual, out / 'residual.csv')
    print(f"{report_path}")
    for name, entry in report['parameters'].items():
        if entry['free']:
            print(f"  {name} = {entry['value']:.8g} +- {entry['ci95']:.3g} {entry['unit']}")
    if not result.converged:
        raise ConvergenceError(f'{args.kind} fit did not converge: {result.message}', field='fit')
    return 0

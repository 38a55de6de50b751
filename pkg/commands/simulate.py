"""
``simulate``: synthetic traces under measurement-like conditions.
"""
import argparse
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Dict, List

import numpy as np

from commands.common import (
    add_drive_arguments, drive_tones, load_device, output_dir, seeds_for, tone_summary,
)
from config import config
from models import Device, JitterModel, PulseSchedule, PulseSegment, ToneRole, Trace
from services.response import intracavity_photons
from services.synthesis import (
    cavity_offsets_hz, eit_offsets_hz, noise_offsets_hz, synthesize_cavity_trace,
    synthesize_eit_trace, synthesize_noise_trace, synthesize_ringdown_trace,
)
from utils.errors import UsageError
from utils.helpers import write_json, write_trace
from utils.logging_config import get_logger

logger = get_logger(__name__)

NAME = 'simulate'
KINDS = ('eit', 'cavity', 'noise', 'ringdown')


def register(subparsers: argparse._SubParsersAction, parents: List[argparse.ArgumentParser]) -> None:
    parser = subparsers.add_parser(NAME, parents=parents, help='write synthetic traces and a manifest')
    parser.add_argument('--kind', choices=KINDS, required=True)
    add_drive_arguments(parser, required=False)
    parser.add_argument('--points', type=int, default=801, help='samples per grid level')
    parser.add_argument('--feature-points', type=int, default=2001,
                        help='EIT only: samples per window on the transparency feature')
    parser.add_argument('--noise', type=float, default=0.0,
                        help='Gaussian noise std (|S11| units for s11, quanta for psd, quanta/s for ring-down)')
    parser.add_argument('--averages', type=int, default=None,
                        help='PSD only: periodogram averages (Gamma-distributed bins) instead of Gaussian noise')
    parser.add_argument('--jitter', action='store_true', help='EIT only: Ornstein-Uhlenbeck omega_m jitter')
    parser.add_argument('--sweep-time', type=float, default=1.0, help='EIT sweep duration in seconds')
    parser.add_argument('--spurious', action='store_true', help='EIT only: add the weak auxiliary mode')
    parser.add_argument('--probe-power', type=float, default=-20.0, help='ring-down probe power, dBm')
    parser.add_argument('--pulse-power', type=float, default=-10.0, help='ring-down blue pulse power, dBm')
    parser.add_argument('--pulse-duration', type=float, default=1.0, help='ring-down pulse length, s')
    parser.add_argument('--settle', type=float, default=1.0, help='ring-down probe-only time before the pulse, s')
    parser.add_argument('--decay', type=float, default=10.0, help='ring-down probe-only time after the pulse, s')
    parser.set_defaults(handler=run)


def ringdown_schedule(device: Device, args: argparse.Namespace) -> PulseSchedule:
    """Probe on the red sideband throughout; blue pulse on the upper sideband in the middle segment."""
    omega_m = device.mode.omega_m
    probe = device.tone(args.probe_power, omega_m, ToneRole.PROBE)
    pulse = device.tone(args.pulse_power, -omega_m, ToneRole.PULSE)
    return PulseSchedule(
        segments=(
            PulseSegment(args.settle),
            PulseSegment(args.pulse_duration, pulse),
            PulseSegment(args.decay),
        ),
        probe=probe,
    )


def _spectral_jobs(args: argparse.Namespace, device: Device) -> List[Callable[[np.random.Generator], Trace]]:
    if args.kind == 'cavity':
        grid = cavity_offsets_hz(device, points=args.points)
        return [lambda rng: synthesize_cavity_trace(device, grid, rng, noise=args.noise)]

    tones = drive_tones(args, device)
    jobs = []
    for tone in tones:
        if args.kind == 'eit':
            grid = eit_offsets_hz(device, tone, points=args.points, feature_points=args.feature_points)
            jitter = JitterModel(
                diffusion=config.JITTER_DIFFUSION_HZ2_PER_S,
                saturation_std=config.JITTER_SATURATION_HZ,
                seed=args.seed,
            ) if args.jitter else None
            jobs.append(lambda rng, t=tone, g=grid, j=jitter: synthesize_eit_trace(
                device, t, g, rng, noise=args.noise, jitter=j, sweep_time=args.sweep_time,
                spurious=args.spurious,
            ))
        else:
            grid = noise_offsets_hz(device, tone, points=args.points)
            jobs.append(lambda rng, t=tone, g=grid: synthesize_noise_trace(
                device, device.baths, t, g, rng, averages=args.averages, noise=args.noise,
            ))
    return jobs


def run(args: argparse.Namespace) -> int:
    cfg, device = load_device(args)
    if args.kind in ('eit', 'noise') and not (args.powers or args.photons):
        raise UsageError(f'{args.kind} traces need --powers or --photons', field='powers')
    if args.points < 3 or args.feature_points < 3:
        raise UsageError('need at least 3 points per grid level', field='points')
    timestamp = config.trace_timestamp
    out = output_dir(args)

    if args.kind == 'ringdown':
        schedule = ringdown_schedule(device, args)
        jobs = [lambda rng: synthesize_ringdown_trace(device, device.baths, schedule, rng, noise=args.noise)]
        drives: List[Dict[str, Any]] = [
            dict(tone_summary(schedule.probe, device), role='probe'),
            dict(tone_summary(schedule.segments[1].tone, device), role='pulse'),
        ]
    else:
        jobs = _spectral_jobs(args, device)
        drives = [] if args.kind == 'cavity' else [tone_summary(t, device) for t in drive_tones(args, device)]

    generators = seeds_for(args.seed, len(jobs))
    with ThreadPoolExecutor(max_workers=max(config.WORKERS, 1)) as pool:
        traces = list(pool.map(lambda pair: pair[0](pair[1]), zip(jobs, generators)))

    files = []
    for index, trace in enumerate(traces):
        trace.metadata['seed'] = args.seed
        trace.metadata['index'] = index
        trace.metadata['timestamp'] = timestamp
        path = write_trace(trace, out / f'{args.kind}_{index:03d}.csv')
        files.append(path.name)
        print(f"{path}  ({len(trace)} points)")

    manifest = {
        'command': NAME,
        'kind': args.kind,
        'seed': args.seed,
        'timestamp': timestamp,
        'device': cfg.to_dict(),
        'drives': drives,
        'photons': [intracavity_photons(t, device.port) for t in drive_tones(args, device)]
        if args.kind in ('eit', 'noise') else [],
        'options': {
            'points': args.points,
            'feature_points': args.feature_points,
            'rbw_hz': config.RBW_HZ if args.kind == 'noise' else None,
            'noise': args.noise,
            'averages': args.averages,
            'jitter': args.jitter,
            'jitter_saturation_hz': config.JITTER_SATURATION_HZ if args.jitter else 0.0,
            'jitter_diffusion_hz2_per_s': config.JITTER_DIFFUSION_HZ2_PER_S if args.jitter else 0.0,
            'sweep_time_s': args.sweep_time,
            'spurious': args.spurious,
            'detuning_hz': args.detuning_hz,
            'probe_power_dbm': args.probe_power,
            'pulse_power_dbm': args.pulse_power,
            'segments_s': [args.settle, args.pulse_duration, args.decay],
        },
        'files': files,
    }
    write_json(out / 'manifest.json', manifest)
    logger.info(f"Simulated {len(traces)} {args.kind} trace(s) into {out}")
    return 0

"""
Argument handling shared by the command modules.
"""
import argparse
from pathlib import Path
from typing import List, Tuple

import numpy as np

from models import Device, DriveTone
from services.physics import angular_to_hz, hz_to_angular
from services.response import drive_power_for_photons
from utils.errors import UsageError
from utils.helpers import DeviceConfig, load_device_config, parse_number_list, parse_window


def add_drive_arguments(parser: argparse.ArgumentParser, required: bool = True) -> None:
    """``--powers`` (dBm at the generator) or ``--photons``, plus the pump detuning."""
    group = parser.add_mutually_exclusive_group(required=required)
    group.add_argument('--powers', help='comma-separated generator powers in dBm ("off" allowed)')
    group.add_argument('--photons', help='comma-separated intra-cavity photon numbers')
    parser.add_argument('--detuning-hz', type=float, default=None,
                        help='omega_r - omega_d in Hz (default: omega_m, the red sideband)')


def load_device(args: argparse.Namespace) -> Tuple[DeviceConfig, Device]:
    """Configuration named by ``--config`` (or the environment default) and its device."""
    cfg = load_device_config(args.config)
    return cfg, cfg.to_device()


def pump_detuning(args: argparse.Namespace, device: Device) -> float:
    """Pump detuning in rad/s; defaults to the mechanical frequency."""
    if getattr(args, 'detuning_hz', None) is None:
        return device.mode.omega_m
    return hz_to_angular(args.detuning_hz)


def drive_tones(args: argparse.Namespace, device: Device) -> List[DriveTone]:
    """Tones for every requested power or photon number, in the order given."""
    detuning = pump_detuning(args, device)
    if getattr(args, 'photons', None):
        photons = parse_number_list(args.photons, 'photons')
        if any(n < 0 for n in photons):
            raise UsageError('photon numbers must be >= 0', field='photons')
        omega_d = device.port.omega_r - detuning
        powers = [drive_power_for_photons(n, omega_d, device.port, device.attenuation) for n in photons]
    elif getattr(args, 'powers', None):
        powers = parse_number_list(args.powers, 'powers')
    else:
        raise UsageError('give --powers or --photons', field='powers')
    return [device.tone(power, detuning) for power in powers]


def exclusion_windows(args: argparse.Namespace) -> List[Tuple[float, float]]:
    return [parse_window(text) for text in (getattr(args, 'exclude', None) or [])]


def output_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def require_increasing(values: List[float], field_name: str) -> None:
    if any(b <= a for a, b in zip(values, values[1:])):
        raise UsageError('values must be strictly increasing', field=field_name)


def tone_summary(tone: DriveTone, device: Device) -> dict:
    return {
        'power_dbm': tone.generator_power,
        'drive_hz': angular_to_hz(tone.omega_d),
        'detuning_hz': angular_to_hz(device.port.omega_r - tone.omega_d),
    }


def seeds_for(seed: int, count: int) -> List[np.random.Generator]:
    """Independent generators, one per output, derived from one seed."""
    return [np.random.default_rng(child) for child in np.random.SeedSequence(seed).spawn(count)]

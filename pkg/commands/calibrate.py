"""
``calibrate-photons``: generator power to intra-cavity photon number.

``--gap-nm`` swaps in the motional capacitance and loaded g0 of another
capacitor gap from the gap table; ``--coil`` replaces the inductance with the
planar-spiral estimate. Either way the lumped-circuit resonance and
participation ratio are reported alongside the photon number.
"""
import argparse
import dataclasses
import json
from typing import Any, Dict, List, Optional

from commands.common import load_device, pump_detuning
from models import CircuitParams, Device
from services.circuit import (
    coil_inductance_estimate, interpolate_gap, participation_ratio, resonance_frequency, spiral_geometry,
)
from services.physics import angular_to_hz, watts_to_dbm
from services.response import backaction_damping, device_plane_power, intracavity_photons
from utils.errors import UsageError
from utils.helpers import load_gap_table, parse_number_list

NAME = 'calibrate-photons'

_NANO = 1e-9
_MICRO = 1e-6


def register(subparsers: argparse._SubParsersAction, parents: List[argparse.ArgumentParser]) -> None:
    parser = subparsers.add_parser(NAME, parents=parents, help='photon number for a drive power')
    parser.add_argument('--power', required=True, help='generator power in dBm, or "off"')
    parser.add_argument('--detuning-hz', type=float, default=None,
                        help='omega_r - omega_d in Hz (default: omega_m)')
    parser.add_argument('--gap-nm', type=float, default=None,
                        help='capacitor gap; C_m and g0 are interpolated from the gap table')
    parser.add_argument('--coil', default=None, metavar='TURNS,D_OUT_UM,PITCH_UM,WIDTH_UM',
                        help='square spiral drawn dimensions; L becomes the Wheeler estimate')
    parser.set_defaults(handler=run)


def device_at_gap(device: Device, gap_m: float) -> Device:
    """Device with C_m and g0 taken from the gap table at ``gap_m``."""
    c_m, g0 = interpolate_gap(load_gap_table(), gap_m)
    return dataclasses.replace(device, circuit=dataclasses.replace(device.circuit, C_m=c_m), g0=g0)


def device_with_coil(device: Device, spec: str) -> Device:
    """Device whose inductance is the Wheeler estimate for the spiral in ``spec``."""
    values = parse_number_list(spec, 'coil')
    if len(values) != 4 or not values[0].is_integer():
        raise UsageError('--coil takes TURNS,D_OUT_UM,PITCH_UM,WIDTH_UM with an integer turn count',
                         field='coil')
    turns = int(values[0])
    d_out, pitch, width = (v * _MICRO for v in values[1:])
    d_avg, fill = spiral_geometry(turns, d_out, pitch, width)
    inductance = coil_inductance_estimate(turns, d_avg, fill)
    return dataclasses.replace(device, circuit=dataclasses.replace(device.circuit, L=inductance))


def circuit_summary(circuit: CircuitParams) -> Dict[str, float]:
    return {
        'L_nH': circuit.L / _NANO,
        'C_m_fF': circuit.C_m * 1e15,
        'participation_ratio': participation_ratio(circuit),
        'circuit_resonance_hz': angular_to_hz(resonance_frequency(circuit)),
    }


def calibrate(device: Device, power_dbm: float, detuning: float) -> dict:
    """Device-plane power, detuning, photon number and back-action rates for one tone."""
    tone = device.tone(power_dbm, detuning)
    n_d = intracavity_photons(tone, device.port)
    p_dev = device_plane_power(tone)
    gamma_em = backaction_damping(n_d, device.g0, device.port.kappa)
    return {
        'generator_power_dbm': power_dbm,
        'device_power_w': p_dev,
        'device_power_dbm': watts_to_dbm(p_dev),
        'detuning_hz': angular_to_hz(detuning),
        'n_d': n_d,
        'g0_hz': angular_to_hz(device.g0),
        'gamma_em_hz': angular_to_hz(gamma_em),
        'cooperativity': gamma_em / device.mode.gamma_i,
    }


def run(args: argparse.Namespace) -> int:
    _, device = load_device(args)
    gap_nm: Optional[float] = args.gap_nm
    if gap_nm is not None:
        device = device_at_gap(device, gap_nm * _NANO)
    if args.coil:
        device = device_with_coil(device, args.coil)
    power = parse_number_list(args.power, 'power')[0]
    report: Dict[str, Any] = calibrate(device, power, pump_detuning(args, device))
    report['gap_nm'] = gap_nm
    report.update(circuit_summary(device.circuit))
    if args.format == 'json':
        print(json.dumps(report, sort_keys=True, indent=2))
    else:
        print(f"device-plane power: {report['device_power_w']:.6g} W ({report['device_power_dbm']:.4g} dBm)")
        print(f"detuning: {report['detuning_hz']:.8g} Hz")
        print(f"intra-cavity photons: {report['n_d']:.6g}")
        print(f"gamma_EM/2pi: {report['gamma_em_hz']:.6g} Hz (C = {report['cooperativity']:.4g})")
        gap = f" at {gap_nm:g} nm gap" if gap_nm is not None else ''
        print(f"circuit{gap}: L = {report['L_nH']:.4g} nH, C_m = {report['C_m_fF']:.4g} fF, "
              f"eta = {report['participation_ratio']:.4g}, g0/2pi = {report['g0_hz']:.4g} Hz, "
              f"f_LC = {report['circuit_resonance_hz']:.6g} Hz")
    return 0

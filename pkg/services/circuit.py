"""
Lumped-circuit model of the coil resonator and its coupling to the mechanics.

Capacitances set the resonance and the participation ratio of the motional
capacitor; together with the mechanical zero-point motion and an externally
supplied dC_m/du they give the vacuum coupling rate g0.
"""
import math
from typing import Tuple

import numpy as np

from models import CircuitParams, GapTable, MechanicalMode
from services.physics import HBAR, MU_0
from utils.errors import DomainError, MissingDerivativeError, RangeError

# Modified-Wheeler coefficients for a square spiral
WHEELER_K1 = 2.34
WHEELER_K2 = 2.75


def total_capacitance(circuit: CircuitParams) -> float:
    """C_tot = C_m + C_l + C_s, farads."""
    return circuit.C_tot


def resonance_frequency(circuit: CircuitParams) -> float:
    """Angular resonance frequency 1/sqrt(L C_tot) of the coupled circuit."""
    return 1.0 / math.sqrt(circuit.L * circuit.C_tot)


def participation_ratio(circuit: CircuitParams) -> float:
    """Fraction eta = C_m / C_tot of the capacitance that moves."""
    return circuit.C_m / circuit.C_tot


def zero_point_fluctuation(mode: MechanicalMode) -> float:
    """Zero-point amplitude sqrt(hbar / (2 omega_m m_eff)), metres."""
    return math.sqrt(HBAR / (2.0 * mode.omega_m * mode.m_eff))


def vacuum_coupling_rate(circuit: CircuitParams, mode: MechanicalMode, omega_r: float) -> float:
    """
    Magnitude of the vacuum electromechanical coupling rate.

    g0 = eta * x_zpf * (omega_r / 2 C_m) * dC_m/du. The physical g0 carries a
    minus sign (the resonance drops as the capacitance grows); only the
    magnitude is returned since downstream formulas use g0^2.

    Args:
        circuit: Circuit with ``dCm_du`` set.
        mode: Mechanical mode providing x_zpf.
        omega_r: Resonance frequency to use, rad/s (normally the measured one).

    Returns:
        |g0| in rad/s.

    Raises:
        MissingDerivativeError: If the circuit has no dC_m/du.
        DomainError: If omega_r <= 0.
    """
    if circuit.dCm_du is None:
        raise MissingDerivativeError(
            'vacuum coupling rate requires externally supplied derivative dCm_du',
            field='dCm_du',
        )
    if not omega_r > 0:
        raise DomainError('resonance frequency must be positive', field='omega_r')
    eta = participation_ratio(circuit)
    x_zpf = zero_point_fluctuation(mode)
    return abs(eta * x_zpf * omega_r / (2.0 * circuit.C_m) * circuit.dCm_du)


def coil_inductance_estimate(n_turns: int, d_avg: float, fill_ratio: float) -> float:
    """
    Inductance of a square planar spiral (modified Wheeler expression).

    L = K1 mu0 n^2 d_avg / (1 + K2 rho) with K1 = 2.34 and K2 = 2.75.

    Args:
        n_turns: Number of turns, >= 1.
        d_avg: Mean of outer and inner diameter, metres.
        fill_ratio: (d_out - d_in) / (d_out + d_in), in (0, 1).

    Returns:
        Inductance in henries.
    """
    if n_turns < 1:
        raise DomainError('a coil needs at least one turn', field='n_turns')
    if not 0 < fill_ratio < 1:
        raise DomainError('fill ratio must lie in (0, 1)', field='fill_ratio')
    if d_avg < 0:
        raise DomainError('mean diameter must be >= 0', field='d_avg')
    return WHEELER_K1 * MU_0 * n_turns ** 2 * d_avg / (1.0 + WHEELER_K2 * fill_ratio)


def spiral_geometry(n_turns: int, d_out: float, pitch: float, wire_width: float) -> Tuple[float, float]:
    """
    Mean diameter and fill ratio of a square spiral from its drawn dimensions.

    Returns:
        (d_avg, fill_ratio).

    Raises:
        DomainError: If the turns do not fit inside ``d_out``.
    """
    if n_turns < 1:
        raise DomainError('a coil needs at least one turn', field='n_turns')
    if not 0 < wire_width <= pitch:
        raise DomainError('wire width must be positive and no wider than the pitch', field='wire_width')
    d_in = d_out - 2.0 * ((n_turns - 1) * pitch + wire_width)
    if d_in <= 0:
        raise DomainError(f'{n_turns} turns at {pitch} m pitch do not fit in {d_out} m', field='d_out')
    d_avg = 0.5 * (d_out + d_in)
    fill_ratio = (d_out - d_in) / (d_out + d_in)
    return d_avg, fill_ratio


def interpolate_gap(table: GapTable, d: float) -> Tuple[float, float]:
    """
    Motional capacitance and loaded g0 at capacitor gap ``d``.

    Piecewise-linear between knots and exact at them; no extrapolation.

    Returns:
        (C_m in F, g0_loaded in rad/s).

    Raises:
        RangeError: If ``d`` lies outside the tabulated gaps.
    """
    if not table.d[0] <= d <= table.d[-1]:
        raise RangeError(
            f'gap {d:.4g} m outside table range [{table.d[0]:.4g}, {table.d[-1]:.4g}] m',
            field='d',
        )
    c_m = float(np.interp(d, table.d, table.C_m))
    g0 = float(np.interp(d, table.d, table.g0_loaded))
    return c_m, g0

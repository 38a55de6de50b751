"""
Physical constants, unit conversions and occupancy statistics.

Constants come from ``scipy.constants``; hbar, k_B and mu_0 are fixed by the
2019 SI redefinition and therefore identical to their CODATA-2018 values.
"""
import math
from typing import Union

import numpy as np
from scipy import constants

from utils.errors import DomainError

ArrayLike = Union[float, np.ndarray]

HBAR: float = constants.hbar
K_B: float = constants.k
MU_0: float = constants.mu_0

TWO_PI: float = 2.0 * math.pi

# Below this hbar*omega/(k_B*T) the series k_B T/(hbar omega) - 1/2 is exact to double precision
_SERIES_THRESHOLD = 1e-9


def hz_to_angular(frequency: ArrayLike) -> ArrayLike:
    """Cyclic frequency (Hz) to angular frequency (rad/s)."""
    return TWO_PI * frequency


def angular_to_hz(omega: ArrayLike) -> ArrayLike:
    """Angular frequency (rad/s) to cyclic frequency (Hz)."""
    return omega / TWO_PI


def bose_occupancy(omega: ArrayLike, temperature: ArrayLike) -> ArrayLike:
    """
    Mean thermal occupancy of a bosonic mode.

    Args:
        omega: Mode angular frequency, rad/s (> 0).
        temperature: Bath temperature, K (>= 0).

    Returns:
        1 / (exp(hbar omega / k_B T) - 1); zero at T = 0.

    Raises:
        DomainError: If any omega <= 0 or any temperature < 0.
    """
    omega_arr = np.asarray(omega, dtype=float)
    temp_arr = np.asarray(temperature, dtype=float)
    if np.any(~(omega_arr > 0)):
        raise DomainError('mode frequency must be positive', field='omega')
    if np.any(~(temp_arr >= 0)):
        raise DomainError('temperature must be >= 0', field='temperature')

    omega_b, temp_b = np.broadcast_arrays(omega_arr, temp_arr)
    occupancy = np.zeros(omega_b.shape)
    hot = temp_b > 0
    x = HBAR * omega_b[hot] / (K_B * temp_b[hot])
    with np.errstate(over='ignore'):
        exact = 1.0 / np.expm1(x)
    series = 1.0 / x - 0.5
    occupancy[hot] = np.where(x < _SERIES_THRESHOLD, series, exact)

    if np.ndim(omega) == 0 and np.ndim(temperature) == 0:
        return float(occupancy)
    return occupancy


def bose_temperature(omega: ArrayLike, occupancy: ArrayLike) -> ArrayLike:
    """
    Temperature at which a mode of frequency ``omega`` holds ``occupancy`` quanta.

    Non-positive occupancies map to 0 K.
    """
    omega_arr = np.asarray(omega, dtype=float)
    if np.any(~(omega_arr > 0)):
        raise DomainError('mode frequency must be positive', field='omega')
    n = np.asarray(occupancy, dtype=float)
    with np.errstate(divide='ignore', invalid='ignore'):
        temperature = np.where(
            n > 0,
            HBAR * omega_arr / (K_B * np.log1p(1.0 / np.where(n > 0, n, 1.0))),
            0.0,
        )
    if np.ndim(omega) == 0 and np.ndim(occupancy) == 0:
        return float(temperature)
    return temperature


def quality_factor(omega: float, rate: float) -> float:
    """Q = omega / rate."""
    if rate <= 0:
        raise DomainError('loss rate must be positive', field='rate')
    return omega / rate


def dbm_to_watts(power_dbm: ArrayLike) -> ArrayLike:
    """Power in dBm to watts; -inf dBm maps to 0 W."""
    watts = 1e-3 * np.power(10.0, np.asarray(power_dbm, dtype=float) / 10.0)
    return watts if np.ndim(power_dbm) else float(watts)


def watts_to_dbm(power_w: ArrayLike) -> ArrayLike:
    """Power in watts to dBm; 0 W maps to -inf dBm."""
    with np.errstate(divide='ignore'):
        dbm = 10.0 * np.log10(np.asarray(power_w, dtype=float) / 1e-3)
    return dbm if np.ndim(power_w) else float(dbm)


def db_to_factor(gain_db: ArrayLike) -> ArrayLike:
    """Power ratio for a gain or loss quoted in dB."""
    factor = np.power(10.0, np.asarray(gain_db, dtype=float) / 10.0)
    return factor if np.ndim(gain_db) else float(factor)


def apply_attenuation(power_w: ArrayLike, attenuation_db: float) -> ArrayLike:
    """
    Power after a passive line with the given attenuation.

    Args:
        power_w: Input power in watts.
        attenuation_db: Line attenuation in dB, <= 0.

    Raises:
        DomainError: For positive values, which would be gain.
    """
    if not attenuation_db <= 0:
        raise DomainError(
            f'attenuation must be <= 0 dB, got {attenuation_db} (gain is not attenuation)',
            field='attenuation',
        )
    return power_w * db_to_factor(attenuation_db)

"""
Frequency-domain reflection models and drive calibration.

Covers the bare-cavity reflection with an asymmetric background, the
electromechanically induced transparency (EIT) spectrum seen by a weak probe
next to a red-detuned pump, and the chain from generator power to intra-cavity
photon number and back-action damping.

All detunings ``delta`` are probe frequency minus cavity frequency, rad/s.
"""
from typing import Optional, Tuple

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.optimize import brentq

from models import AuxiliaryMode, Background, CavityPort, DriveTone, EITParams
from services.physics import HBAR, apply_attenuation, dbm_to_watts, watts_to_dbm
from utils.errors import DomainError

JITTER_QUADRATURE_ORDER = 24


def background_factor(background: Background, delta: np.ndarray) -> np.ndarray:
    """Complex baseline a0 exp(i theta) (1 + b delta)."""
    return background.amplitude * np.exp(1j * background.phase) * (1.0 + background.slope * delta)


def mechanical_self_energy(delta: np.ndarray, omega_m: float, gamma_i: float, G: float,
                           Delta_rd: float) -> np.ndarray:
    """2 G^2 / (gamma_i + 2i (delta - (omega_m - Delta_rd))) for one mechanical mode."""
    return 2.0 * G ** 2 / (gamma_i + 2j * (delta - (omega_m - Delta_rd)))


def _check_port(port: CavityPort) -> None:
    if not port.kappa > 0:
        raise DomainError('total linewidth kappa must be positive', field='kappa')


def cavity_reflection(port: CavityPort, delta: np.ndarray) -> np.ndarray:
    """
    Reflection of the bare cavity including the background asymmetry.

    S11 = a0 exp(i theta) (1 + b delta) (1 - kappa_e / (kappa/2 + i delta)).
    """
    _check_port(port)
    delta = np.asarray(delta, dtype=float)
    lorentzian = 1.0 - port.kappa_e / (port.kappa / 2.0 + 1j * delta)
    return background_factor(port.background, delta) * lorentzian


def eit_reflection(params: EITParams, delta: np.ndarray) -> np.ndarray:
    """
    Probe reflection with a red-detuned pump near two-photon resonance.

    S11 = 1 - kappa_e / (kappa/2 + i delta + sum_k 2 G_k^2 / (gamma_k + 2i (delta - (omega_k - Delta_rd)))),
    multiplied by the port background. The sum runs over the main mode and,
    when present, the auxiliary mode.
    """
    port = params.port
    _check_port(port)
    delta = np.asarray(delta, dtype=float)
    sigma = mechanical_self_energy(delta, params.omega_m, params.gamma_i, params.G, params.Delta_rd)
    if params.auxiliary is not None:
        aux = params.auxiliary
        sigma = sigma + mechanical_self_energy(delta, aux.omega_m, aux.gamma_i, aux.G, params.Delta_rd)
    response = 1.0 - port.kappa_e / (port.kappa / 2.0 + 1j * delta + sigma)
    return background_factor(port.background, delta) * response


def jitter_quadrature(sigma: float) -> Tuple[np.ndarray, np.ndarray]:
    """Offsets and weights averaging over a Gaussian of standard deviation ``sigma``."""
    nodes, weights = hermgauss(JITTER_QUADRATURE_ORDER)
    return np.sqrt(2.0) * sigma * nodes, weights / np.sqrt(np.pi)


def eit_reflection_jittered(params: EITParams, delta: np.ndarray, sigma_jitter: float) -> np.ndarray:
    """EIT reflection averaged over Gaussian jitter of the mechanical frequency (rad/s)."""
    if sigma_jitter <= 0:
        return eit_reflection(params, delta)
    offsets, weights = jitter_quadrature(sigma_jitter)
    total = np.zeros(np.shape(delta), dtype=complex)
    for offset, weight in zip(offsets, weights):
        shifted = EITParams(
            port=params.port,
            omega_m=params.omega_m + offset,
            gamma_i=params.gamma_i,
            G=params.G,
            Delta_rd=params.Delta_rd,
            auxiliary=params.auxiliary,
        )
        total += weight * eit_reflection(shifted, delta)
    return total


def sideband_resolution(params: EITParams) -> float:
    """omega_m / kappa; the EIT formula assumes this is well above one."""
    return params.sideband_resolution


def transparency_window_width(params: EITParams) -> float:
    """
    Full width of the transparency feature at half depth, rad/s.

    The feature is |S11 - S11(G=0)|^2 around the two-photon resonance,
    evaluated with an ideal background. In the resolved-sideband weak-coupling
    limit this equals gamma_i + 4 G^2 / kappa.
    """
    if params.G <= 0:
        raise DomainError('no transparency window without coupling', field='G')
    ideal = EITParams(
        port=CavityPort(params.port.omega_r, params.port.kappa_i, params.port.kappa_e),
        omega_m=params.omega_m,
        gamma_i=params.gamma_i,
        G=params.G,
        Delta_rd=params.Delta_rd,
    )
    bare = ideal.port
    center = params.omega_m - params.Delta_rd

    def feature(delta: float) -> float:
        return float(np.abs(eit_reflection(ideal, delta) - cavity_reflection(bare, delta)) ** 2)

    peak = feature(center)
    half = 0.5 * peak
    expected = params.gamma_i + 4.0 * params.G ** 2 / params.port.kappa
    reach = 50.0 * expected
    upper = brentq(lambda d: feature(d) - half, center, center + reach, xtol=1e-12 * reach)
    lower = brentq(lambda d: feature(d) - half, center - reach, center, xtol=1e-12 * reach)
    return upper - lower


def intracavity_photons(tone: DriveTone, port: CavityPort) -> float:
    """
    Mean intra-cavity photon number sustained by a drive tone.

    n = P_dev kappa_e / (hbar omega_d (Delta^2 + (kappa/2)^2)), where P_dev is
    the generator power after the input-line attenuation and
    Delta = omega_r - omega_d.
    """
    _check_port(port)
    device_power = apply_attenuation(dbm_to_watts(tone.generator_power), tone.attenuation)
    detuning = port.omega_r - tone.omega_d
    lorentzian = detuning ** 2 + (port.kappa / 2.0) ** 2
    return float(device_power * port.kappa_e / (HBAR * tone.omega_d * lorentzian))


def device_plane_power(tone: DriveTone) -> float:
    """Power reaching the device, watts."""
    return float(apply_attenuation(dbm_to_watts(tone.generator_power), tone.attenuation))


def drive_power_for_photons(n_photons: float, omega_d: float, port: CavityPort,
                            attenuation: float) -> float:
    """Generator power (dBm) that yields ``n_photons`` in the cavity; inverse of ``intracavity_photons``."""
    _check_port(port)
    if n_photons < 0:
        raise DomainError('photon number must be >= 0', field='n_photons')
    if not port.kappa_e > 0:
        raise DomainError('an uncoupled port (kappa_e = 0) cannot be driven', field='kappa_e')
    detuning = port.omega_r - omega_d
    lorentzian = detuning ** 2 + (port.kappa / 2.0) ** 2
    device_power = n_photons * HBAR * omega_d * lorentzian / port.kappa_e
    return float(watts_to_dbm(device_power) - attenuation)


def backaction_damping(n_photons: float, g0: float, kappa: float) -> float:
    """Back-action damping gamma_EM = 4 n g0^2 / kappa, rad/s."""
    if n_photons < 0 or g0 < 0:
        raise DomainError('photon number and g0 must be >= 0', field='n_photons')
    if not kappa > 0:
        raise DomainError('kappa must be positive', field='kappa')
    return 4.0 * n_photons * g0 ** 2 / kappa


def cooperativity(gamma_EM: float, gamma_i: float) -> float:
    """C = gamma_EM / gamma_i."""
    if not gamma_i > 0:
        raise DomainError('intrinsic damping must be positive', field='gamma_i')
    return gamma_EM / gamma_i


def eit_params_for_drive(port: CavityPort, omega_m: float, gamma_i: float, g0: float,
                         tone: DriveTone, auxiliary: Optional[AuxiliaryMode] = None) -> EITParams:
    """EIT parameters for a calibrated pump: G = sqrt(n_d) g0, Delta_rd = omega_r - omega_d."""
    n_d = intracavity_photons(tone, port)
    return EITParams(
        port=port,
        omega_m=omega_m,
        gamma_i=gamma_i,
        G=float(np.sqrt(n_d)) * g0,
        Delta_rd=port.omega_r - tone.omega_d,
        auxiliary=auxiliary,
    )

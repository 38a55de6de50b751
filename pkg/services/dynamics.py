"""
Back-action dynamics of the driven cavity-mechanics system.

Two levels of description live here:

* rate equations for the phonon occupancy (adiabatically eliminated cavity):
  Stokes/anti-Stokes scattering rates, steady-state cooling or amplification,
  and piecewise closed-form ring-up/ring-down trajectories;
* linearized quantum Langevin equations solved in the frequency domain: a
  4x4 linear-response system for (a, a^dag, b, b^dag) in the drive frame,
  giving the normal-ordered output noise spectrum of the reflected field.

The second is the reference against which the first is checked.
"""
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.integrate import trapezoid

from config import config
from models import (
    Device, DriveTone, NoiseBaths, OccupancyTrajectory, PulseSchedule, Sideband,
)
from services.response import backaction_damping, intracavity_photons
from utils.errors import DomainError, InstabilityError
from utils.logging_config import get_logger

logger = get_logger(__name__)

# Input ordering: waveguide, cavity-loss port, mechanical bath; each as (annihilation, creation)
_PORTS = ('waveguide', 'cavity', 'mechanics')
_OCCUPANCY_GRID_POINTS = 4001


# ---------------------------------------------------------------------------
# Rate equations
# ---------------------------------------------------------------------------

def stokes_suppression(kappa: float, omega_m: float) -> float:
    """Sideband suppression factor n_min = (kappa / 4 omega_m)^2."""
    if not omega_m > 0:
        raise DomainError('mechanical frequency must be positive', field='omega_m')
    return (kappa / (4.0 * omega_m)) ** 2


def scattering_rates(n_drive: float, g0: float, kappa: float, omega_m: float, n_m: float,
                     sideband: Sideband = Sideband.RED) -> Tuple[float, float]:
    """
    Anti-Stokes and Stokes scattering rates of a tone on a motional sideband.

    For a red-detuned tone anti-Stokes scattering is cavity-enhanced,
    Gamma_AS = gamma_EM n_m, and Stokes scattering is suppressed,
    Gamma_S = gamma_EM (kappa/4 omega_m)^2 (n_m + 1). A blue-detuned tone
    swaps the roles.

    Returns:
        (Gamma_AS, Gamma_S) in 1/s.
    """
    if min(n_drive, g0, n_m) < 0:
        raise DomainError('photon number, g0 and occupancy must be >= 0', field='n_m')
    gamma_em = backaction_damping(n_drive, g0, kappa)
    suppression = stokes_suppression(kappa, omega_m)
    if Sideband(sideband) == Sideband.RED:
        return gamma_em * n_m, gamma_em * suppression * (n_m + 1.0)
    return gamma_em * suppression * n_m, gamma_em * (n_m + 1.0)


def _tone_source(gamma_em: float, n_cav: float, n_min: float, sideband: Sideband) -> float:
    """Occupancy influx driven by one tone, per unit time."""
    if sideband == Sideband.RED:
        return gamma_em * (n_cav + n_min * (1.0 + 2.0 * n_cav))
    return gamma_em * (1.0 + n_cav + n_min * n_cav)


def cooling_steady_state(baths: NoiseBaths, gamma_i: float, gamma_EM: float, kappa: float,
                         omega_m: float, sideband: Sideband = Sideband.RED,
                         ideal: bool = False) -> float:
    """
    Steady-state phonon occupancy under a single sideband tone.

    Ideal law (no microwave baths): n_m = n_f,m / (1 + C) for red and
    n_f,m / (1 - C) for blue. Full law, red:
    n_m = (gamma_i n_f,m + gamma_EM (n_cav + n_min (1 + 2 n_cav))) / (gamma_i + gamma_EM);
    blue: (gamma_i n_f,m + gamma_EM (1 + n_cav + n_min n_cav)) / (gamma_i - gamma_EM).

    Raises:
        DomainError: If gamma_i <= 0.
        InstabilityError: For a blue tone with gamma_EM >= gamma_i.
    """
    if not gamma_i > 0:
        raise DomainError('intrinsic damping must be positive', field='gamma_i')
    if gamma_EM < 0:
        raise DomainError('back-action damping must be >= 0', field='gamma_EM')
    sideband = Sideband(sideband)
    sign = 1.0 if sideband == Sideband.RED else -1.0
    denominator = gamma_i + sign * gamma_EM
    if denominator <= 0:
        raise InstabilityError(
            f'blue-detuned anti-damping {gamma_EM:.4g} exceeds intrinsic damping {gamma_i:.4g}',
            field='gamma_EM',
        )
    if ideal:
        return gamma_i * baths.n_mech / denominator
    n_min = stokes_suppression(kappa, omega_m)
    source = _tone_source(gamma_EM, baths.n_cav, n_min, sideband)
    return (gamma_i * baths.n_mech + source) / denominator


# ---------------------------------------------------------------------------
# Ring-down
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _ToneRates:
    gamma_em: float
    source: float
    sign: float
    sideband: Sideband


def _tone_rates(tone: DriveTone, device: Device, baths: NoiseBaths) -> _ToneRates:
    port = device.port
    sideband = tone.sideband(port.omega_r)
    n_tone = intracavity_photons(tone, port)
    gamma_em = backaction_damping(n_tone, device.g0, port.kappa)
    n_min = stokes_suppression(port.kappa, device.mode.omega_m)
    return _ToneRates(
        gamma_em=gamma_em,
        source=_tone_source(gamma_em, baths.n_cav, n_min, sideband),
        sign=1.0 if sideband == Sideband.RED else -1.0,
        sideband=sideband,
    )


def _scattered(rates: _ToneRates, occupancy: np.ndarray) -> np.ndarray:
    """Dominant scattered-photon rate of one tone: anti-Stokes for red, Stokes for blue."""
    if rates.sideband == Sideband.RED:
        return rates.gamma_em * occupancy
    return rates.gamma_em * (occupancy + 1.0)


def default_time_grid(schedule: PulseSchedule, kappa: float, samples_per_segment: int = 200) -> np.ndarray:
    """Uniform samples per segment plus log-spaced points resolving the cavity transient."""
    boundaries = schedule.boundaries
    pieces: List[np.ndarray] = []
    for start, end in zip(boundaries[:-1], boundaries[1:]):
        pieces.append(np.linspace(start, end, samples_per_segment))
        transient_end = min(20.0 / kappa, end - start)
        pieces.append(start + np.geomspace(1e-3 / kappa, transient_end, 60))
    return np.unique(np.concatenate(pieces))


def ringdown_simulate(schedule: PulseSchedule, device: Device, baths: NoiseBaths,
                      time_grid: Optional[np.ndarray] = None,
                      initial_occupancy: Optional[float] = None,
                      occupancy_cap: Optional[float] = None,
                      allow_unstable: bool = False) -> OccupancyTrajectory:
    """
    Phonon occupancy under a piecewise-constant tone schedule.

    Each segment obeys dn/dt = -gamma_eff (n - n_target) with
    gamma_eff = gamma_i + sum(+gamma_EM red, -gamma_EM blue), integrated in
    closed form and stitched at the segment boundaries. The scattered-power
    channel sums the probe's anti-Stokes rate and the segment tone's dominant
    sideband rate; light from a tone fills and empties the cavity at rate kappa.

    Args:
        schedule: Segments with at most one extra tone each; probe held on throughout.
        device: Device parameters.
        baths: Bath occupancies; ``n_mech`` is the mechanical bath.
        time_grid: Sample times in seconds; defaults to ``default_time_grid``.
        initial_occupancy: Occupancy at t = 0; defaults to the mechanical bath.
        occupancy_cap: Saturation cap for anti-damped growth.
        allow_unstable: Clip at the cap instead of raising.

    Raises:
        InstabilityError: If an anti-damped segment crosses the cap and
            ``allow_unstable`` is False.
    """
    kappa = device.port.kappa
    gamma_i = device.mode.gamma_i
    cap = config.OCCUPANCY_CAP if occupancy_cap is None else occupancy_cap
    times = default_time_grid(schedule, kappa) if time_grid is None else np.asarray(time_grid, dtype=float)
    boundaries = schedule.boundaries
    if times.size == 0 or times[0] < 0 or times[-1] > boundaries[-1]:
        raise DomainError('time grid must lie within the schedule', field='time_grid')

    probe = _tone_rates(schedule.probe, device, baths) if schedule.probe is not None else None
    segment_tones = [
        _tone_rates(seg.tone, device, baths) if seg.tone is not None else None
        for seg in schedule.segments
    ]

    occupancy = np.empty_like(times)
    power = np.zeros_like(times)
    n_start = baths.n_mech if initial_occupancy is None else float(initial_occupancy)
    # Cavity light of the previous segment tone still leaking out: (amplitude, switch-off time)
    leaking: List[Tuple[float, float]] = []

    for index, (start, end) in enumerate(zip(boundaries[:-1], boundaries[1:])):
        tones = [t for t in (probe, segment_tones[index]) if t is not None]
        gamma_eff = gamma_i + sum(t.sign * t.gamma_em for t in tones)
        source = gamma_i * baths.n_mech + sum(t.source for t in tones)

        def evolve(tau: np.ndarray, n0: float = n_start, g: float = gamma_eff, s: float = source) -> np.ndarray:
            if g == 0.0:
                return n0 + s * tau
            target = s / g
            return target + (n0 - target) * np.exp(-g * tau)

        last = index == len(schedule.segments) - 1
        mask = (times >= start) & ((times < end) | (last & (times <= end)))
        tau = times[mask] - start
        n_seg = evolve(tau)
        n_end = float(evolve(np.array(end - start)))

        if gamma_eff < 0 and max(n_end, float(n_seg.max(initial=0.0))) > cap:
            if not allow_unstable:
                raise InstabilityError(
                    f'segment {index} anti-damped at {gamma_eff:.4g} 1/s exceeds occupancy cap {cap:.3g}',
                    field='occupancy_cap',
                )
            logger.warning(f"Segment {index} saturated at occupancy cap {cap:.3g}")
            n_seg = np.minimum(n_seg, cap)
            n_end = min(n_end, cap)
        occupancy[mask] = n_seg

        seg_power = np.zeros_like(tau)
        if probe is not None:
            seg_power += _scattered(probe, n_seg)
        tone = segment_tones[index]
        if tone is not None:
            seg_power += _scattered(tone, n_seg) * -np.expm1(-kappa * tau)
        for amplitude, t_off in leaking:
            seg_power += amplitude * np.exp(-kappa * (times[mask] - t_off))
        power[mask] = seg_power

        if tone is not None:
            fill = -np.expm1(-kappa * (end - start))
            leaking.append((float(_scattered(tone, np.array(n_end))) * fill, end))
        n_start = n_end
        logger.debug(f"Segment {index}: gamma_eff={gamma_eff:.6g} 1/s, n_end={n_end:.6g}")

    return OccupancyTrajectory(time=times, occupancy=occupancy, scattered_power=power)


# ---------------------------------------------------------------------------
# Linearized Langevin noise model
# ---------------------------------------------------------------------------

def _response_matrix(kappa_i: float, kappa_e: float, omega_m: float, gamma_i: float,
                     G: float, Delta: float, omega: np.ndarray) -> np.ndarray:
    """
    Transfer matrix from the six inputs to (a, a^dag, b, b^dag) at Fourier frequency omega.

    Returns an array of shape (N, 4, 6); input columns are
    (a_wg, a_wg^dag, a_cav, a_cav^dag, b_in, b_in^dag).
    """
    kappa = kappa_i + kappa_e
    n = omega.size
    m = np.zeros((n, 4, 4), dtype=complex)
    ig = 1j * G
    m[:, 0, 0] = kappa / 2.0 + 1j * (Delta - omega)
    m[:, 0, 2] = ig
    m[:, 0, 3] = ig
    m[:, 1, 1] = kappa / 2.0 - 1j * (Delta + omega)
    m[:, 1, 2] = -ig
    m[:, 1, 3] = -ig
    m[:, 2, 0] = ig
    m[:, 2, 1] = ig
    m[:, 2, 2] = gamma_i / 2.0 + 1j * (omega_m - omega)
    m[:, 3, 0] = -ig
    m[:, 3, 1] = -ig
    m[:, 3, 3] = gamma_i / 2.0 - 1j * (omega_m + omega)

    k = np.zeros((4, 6), dtype=complex)
    k[0, 0] = k[1, 1] = np.sqrt(kappa_e)
    k[0, 2] = k[1, 3] = np.sqrt(kappa_i)
    k[2, 4] = k[3, 5] = np.sqrt(gamma_i)
    return np.linalg.solve(m, np.broadcast_to(k, (n, 4, 6)))


def _check_rates(kappa_i: float, kappa_e: float, gamma_i: float) -> None:
    if not kappa_i + kappa_e > 0:
        raise DomainError('total linewidth kappa must be positive', field='kappa')
    if not gamma_i > 0:
        raise DomainError('intrinsic damping must be positive', field='gamma_i')


def _check_stable(G: float, Delta: float, kappa: float, gamma_i: float) -> None:
    if Delta < 0 and 4.0 * G ** 2 / kappa >= gamma_i:
        raise DomainError('blue-detuned drive is past the parametric instability', field='G')


def output_coefficients(kappa_i: float, kappa_e: float, omega_m: float, gamma_i: float,
                        G: float, Delta: float, delta: np.ndarray) -> np.ndarray:
    """
    Coefficients of the six inputs in the reflected field a_out at cavity detuning ``delta``.

    a_out = a_wg - sqrt(kappa_e) a; the Fourier frequency in the drive frame
    is delta + Delta. Shape (N, 6).
    """
    _check_rates(kappa_i, kappa_e, gamma_i)
    _check_stable(G, Delta, kappa_i + kappa_e, gamma_i)
    omega = np.atleast_1d(np.asarray(delta, dtype=float)) + Delta
    transfer = _response_matrix(kappa_i, kappa_e, omega_m, gamma_i, G, Delta, omega)
    coefficients = -np.sqrt(kappa_e) * transfer[:, 0, :]
    coefficients[:, 0] += 1.0
    return coefficients


def spectral_weights(coefficients: np.ndarray) -> Dict[str, Tuple[np.ndarray, np.ndarray]]:
    """Per-port (thermal weight, vacuum weight): S = sum(thermal * n_port + vacuum)."""
    power = np.abs(coefficients) ** 2
    weights = {}
    for index, port in enumerate(_PORTS):
        annihilation = power[:, 2 * index]
        creation = power[:, 2 * index + 1]
        weights[port] = (annihilation + creation, creation)
    return weights


def _drive_coupling(device: Device, drive: DriveTone) -> Tuple[float, float]:
    n_d = intracavity_photons(drive, device.port)
    return float(np.sqrt(n_d)) * device.g0, device.port.omega_r - drive.omega_d


def noise_contributions(device: Device, baths: NoiseBaths, drive: DriveTone,
                        delta_grid: np.ndarray) -> Dict[str, np.ndarray]:
    """
    Output noise split by origin.

    Keys: ``waveguide``, ``cavity``, ``mechanics`` (thermal parts of each bath),
    ``vacuum`` (zero-point inputs converted by the counter-rotating terms),
    ``offset`` (the flat n_add + 1 detection floor).
    """
    port = device.port
    G, Delta = _drive_coupling(device, drive)
    coefficients = output_coefficients(
        port.kappa_i, port.kappa_e, device.mode.omega_m, device.mode.gamma_i, G, Delta, delta_grid,
    )
    weights = spectral_weights(coefficients)
    occupancies = {'waveguide': baths.n_wg, 'cavity': baths.n_cav, 'mechanics': baths.n_mech}
    parts = {port_name: weights[port_name][0] * occupancies[port_name] for port_name in _PORTS}
    parts['vacuum'] = sum(weights[port_name][1] for port_name in _PORTS)
    parts['offset'] = np.full(coefficients.shape[0], baths.n_add + 1.0)
    return parts


def noise_spectrum(device: Device, baths: NoiseBaths, drive: DriveTone,
                   delta_grid: np.ndarray) -> np.ndarray:
    """
    Normal-ordered photon-flux PSD of the reflected field plus the n_add + 1 floor.

    Inputs enter at occupancies n_wg (external port), n_cav (internal-loss
    port) and n_mech (mechanical port); squashing of the mechanical feature
    follows from the waveguide-noise correlations in the solution.

    Args:
        device: Device parameters (kappa's, gamma_i, omega_m, g0).
        baths: Bath occupancies and amplifier added noise.
        drive: Pump tone; its photon number sets G = sqrt(n_d) g0.
        delta_grid: Detunings from the cavity resonance, rad/s.

    Returns:
        Quanta per unit bandwidth at each detuning.
    """
    parts = noise_contributions(device, baths, drive, delta_grid)
    return sum(parts.values())


def mechanical_occupancy(device: Device, baths: NoiseBaths, drive: DriveTone) -> float:
    """
    Mean phonon number <b^dag b> from the linear-response solution.

    The mechanical spectrum is integrated on a tangent-substituted grid that
    is exact for a Lorentzian line and truncated well inside the cavity line.
    """
    port = device.port
    mode = device.mode
    _check_rates(port.kappa_i, port.kappa_e, mode.gamma_i)
    G, Delta = _drive_coupling(device, drive)
    _check_stable(G, Delta, port.kappa, mode.gamma_i)
    sign = 1.0 if Delta >= 0 else -1.0
    gamma_eff = mode.gamma_i + sign * 4.0 * G ** 2 / port.kappa
    reach = 0.25 * min(port.kappa, mode.omega_m)
    theta_max = np.arctan(2.0 * reach / gamma_eff)
    theta = np.linspace(-theta_max, theta_max, _OCCUPANCY_GRID_POINTS)
    omega = mode.omega_m + 0.5 * gamma_eff * np.tan(theta)
    jacobian = 0.5 * gamma_eff / np.cos(theta) ** 2

    transfer = _response_matrix(port.kappa_i, port.kappa_e, mode.omega_m, mode.gamma_i, G, Delta, omega)
    power = np.abs(transfer[:, 2, :]) ** 2
    occupancies = np.repeat([baths.n_wg, baths.n_cav, baths.n_mech], 2)
    vacuum = np.tile([0.0, 1.0], 3)
    density = power @ (occupancies + vacuum)
    return float(trapezoid(density * jacobian, theta) / (2.0 * np.pi))


def feature_occupancy(psd: np.ndarray, delta: np.ndarray, background: float,
                      kappa_e: float, kappa: float, gamma_em: float) -> float:
    """
    Phonon occupancy read from the area of the transduced mechanical line.

    The line integrates (over cyclic frequency) to (kappa_e / kappa) gamma_EM n_m.
    """
    if not gamma_em > 0:
        raise DomainError('thermometry needs a drive with gamma_EM > 0', field='gamma_em')
    area = feature_area(psd, delta, background)
    return float(area / (kappa_e / kappa * gamma_em))


def feature_area(psd: np.ndarray, delta: np.ndarray, background: float) -> float:
    """Area of the mechanical feature above a flat background, quanta/s."""
    return float(trapezoid(np.asarray(psd) - background, np.asarray(delta)) / (2.0 * np.pi))


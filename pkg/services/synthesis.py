"""
Synthetic traces for testing fits and sizing experiments.

Every generator takes an explicit ``numpy.random.Generator``; callers derive
one per trace from a ``SeedSequence`` so that output is reproducible and
independent of execution order.
"""
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import config
from models import (
    AuxiliaryMode, Device, DriveTone, JitterModel, NoiseBaths, PulseSchedule, Trace, TraceKind,
)
from services.dynamics import noise_spectrum, ringdown_simulate
from services.physics import angular_to_hz, hz_to_angular
from services.response import (
    backaction_damping, background_factor, cavity_reflection, intracavity_photons, mechanical_self_energy,
)
from utils.errors import DomainError
from utils.logging_config import get_logger

logger = get_logger(__name__)


def composite_grid(center: float, levels: Sequence[Tuple[float, int]]) -> np.ndarray:
    """Union of uniform grids center +- halfwidth; each level is (halfwidth, points)."""
    pieces = [np.linspace(center - halfwidth, center + halfwidth, points) for halfwidth, points in levels]
    return np.unique(np.concatenate(pieces))


def _feature_levels(gamma_eff_hz: float, points: int) -> List[Tuple[float, int]]:
    return [(20.0 * gamma_eff_hz, points), (max(200.0 * gamma_eff_hz, 4.0e3), points)]


def cavity_offsets_hz(device: Device, points: int = 801, span: float = 3.0) -> np.ndarray:
    """Offsets from the cavity resonance covering +- ``span`` linewidths."""
    return composite_grid(0.0, [(span * angular_to_hz(device.port.kappa), points)])


def eit_offsets_hz(device: Device, tone: DriveTone, points: int = 801, span: float = 3.0,
                   feature_points: int = 2001) -> np.ndarray:
    """
    Probe offsets from the pump: the cavity line (``points`` samples) plus two
    nested windows of ``feature_points`` samples on the transparency feature
    at omega_m.
    """
    kappa_hz = angular_to_hz(device.port.kappa)
    gamma_eff_hz = angular_to_hz(_effective_damping(device, tone))
    cavity_center = angular_to_hz(device.port.omega_r - tone.omega_d)
    coarse = composite_grid(cavity_center, [(span * kappa_hz, points)])
    feature = composite_grid(angular_to_hz(device.mode.omega_m), _feature_levels(gamma_eff_hz, feature_points))
    return np.unique(np.concatenate([coarse, feature]))


def noise_offsets_hz(device: Device, tone: DriveTone, points: int = 801, span: float = 3.0) -> np.ndarray:
    """Offsets from the cavity resonance: the cavity line plus windows on the mechanical sideband."""
    kappa_hz = angular_to_hz(device.port.kappa)
    gamma_eff_hz = angular_to_hz(_effective_damping(device, tone))
    sideband = angular_to_hz(device.mode.omega_m - (device.port.omega_r - tone.omega_d))
    coarse = composite_grid(0.0, [(span * kappa_hz, points)])
    feature = composite_grid(sideband, _feature_levels(gamma_eff_hz, points))
    return np.unique(np.concatenate([coarse, feature]))


def _effective_damping(device: Device, tone: DriveTone) -> float:
    n_d = intracavity_photons(tone, device.port)
    sign = 1.0 if tone.omega_d <= device.port.omega_r else -1.0
    gamma = device.mode.gamma_i + sign * backaction_damping(n_d, device.g0, device.port.kappa)
    return abs(gamma) if gamma != 0 else device.mode.gamma_i


def ou_jitter(model: JitterModel, times: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """
    Ornstein-Uhlenbeck frequency wander (Hz) sampled at ``times`` (s).

    Uses the exact discretization x_{k+1} = x_k e^{-dt/tau} + sigma sqrt(1 - e^{-2dt/tau}) xi,
    started from the stationary distribution.
    """
    times = np.asarray(times, dtype=float)
    wander = np.empty_like(times)
    if times.size == 0:
        return wander
    sigma = model.saturation_std
    if sigma == 0:
        return np.zeros_like(times)
    tau = model.correlation_time
    wander[0] = sigma * rng.standard_normal()
    for k in range(1, times.size):
        decay = math.exp(-(times[k] - times[k - 1]) / tau)
        wander[k] = wander[k - 1] * decay + sigma * math.sqrt(1.0 - decay ** 2) * rng.standard_normal()
    return wander


def add_noise(samples: np.ndarray, level: float, rng: np.random.Generator) -> np.ndarray:
    """Add white Gaussian noise of standard deviation ``level`` (independently to re and im)."""
    if level < 0:
        raise DomainError('noise level must be >= 0', field='noise')
    if level == 0:
        return samples.copy()
    if np.iscomplexobj(samples):
        return samples + level * (rng.standard_normal(samples.shape) + 1j * rng.standard_normal(samples.shape))
    return samples + level * rng.standard_normal(samples.shape)


def spurious_mode(device: Device, G: float) -> AuxiliaryMode:
    """Weak second mode a few kHz below the main one."""
    return AuxiliaryMode(
        omega_m=device.mode.omega_m + hz_to_angular(config.SPURIOUS_MODE_OFFSET_HZ),
        gamma_i=device.mode.gamma_i,
        G=config.SPURIOUS_COUPLING_RATIO * G,
    )


def synthesize_cavity_trace(device: Device, offsets_hz: np.ndarray, rng: np.random.Generator,
                            noise: float = 0.0) -> Trace:
    """Bare-cavity reflection on a grid of offsets (Hz) from the cavity resonance."""
    offsets_hz = np.asarray(offsets_hz, dtype=float)
    samples = cavity_reflection(device.port, hz_to_angular(offsets_hz))
    metadata = {
        'reference_hz': angular_to_hz(device.port.omega_r),
        'noise': noise,
    }
    return Trace(TraceKind.S11, offsets_hz, add_noise(samples, noise, rng), metadata)


def synthesize_eit_trace(device: Device, tone: DriveTone, offsets_hz: np.ndarray,
                         rng: np.random.Generator, noise: float = 0.0,
                         jitter: Optional[JitterModel] = None, sweep_time: float = 1.0,
                         spurious: bool = False) -> Trace:
    """
    EIT reflection on a grid of probe offsets (Hz) from the pump.

    With ``jitter`` the mechanical frequency wanders while the probe sweeps
    the grid in ``sweep_time`` seconds, so each point sees its own omega_m.
    ``spurious`` adds the weak auxiliary mode.
    """
    offsets_hz = np.asarray(offsets_hz, dtype=float)
    port, mode = device.port, device.mode
    n_d = intracavity_photons(tone, port)
    G = math.sqrt(n_d) * device.g0
    Delta = port.omega_r - tone.omega_d
    delta = hz_to_angular(offsets_hz) - Delta

    omega_m = np.full(offsets_hz.shape, mode.omega_m)
    if jitter is not None:
        times = np.linspace(0.0, sweep_time, offsets_hz.size)
        omega_m = omega_m + hz_to_angular(ou_jitter(jitter, times, rng))
    self_energy = mechanical_self_energy(delta, omega_m, mode.gamma_i, G, Delta)
    if spurious:
        aux = spurious_mode(device, G)
        self_energy = self_energy + mechanical_self_energy(delta, aux.omega_m, aux.gamma_i, aux.G, Delta)
    samples = background_factor(port.background, delta) * (
        1.0 - port.kappa_e / (0.5 * port.kappa + 1j * delta + self_energy)
    )
    metadata = {
        'reference_hz': angular_to_hz(tone.omega_d),
        'power_dbm': tone.generator_power,
        'n_d': n_d,
        'noise': noise,
        'jitter_hz': jitter.saturation_std if jitter is not None else 0.0,
        'spurious': spurious,
    }
    return Trace(TraceKind.S11, offsets_hz, add_noise(samples, noise, rng), metadata)


def synthesize_noise_trace(device: Device, baths: NoiseBaths, drive: DriveTone,
                           offsets_hz: np.ndarray, rng: np.random.Generator,
                           averages: Optional[int] = None, noise: float = 0.0,
                           rbw_hz: Optional[float] = None) -> Trace:
    """
    Output noise PSD (quanta) on a grid of offsets (Hz) from the cavity resonance.

    ``averages`` scales each bin by a Gamma(averages) variate of unit mean, as
    for an averaged periodogram; otherwise ``noise`` adds Gaussian noise. The
    analyzer resolution bandwidth (default ``config.RBW_HZ``) is recorded as
    ``rbw_hz`` for conversion to dBm.
    """
    rbw_hz = config.RBW_HZ if rbw_hz is None else rbw_hz
    if not rbw_hz > 0:
        raise DomainError('resolution bandwidth must be positive', field='rbw_hz')
    offsets_hz = np.asarray(offsets_hz, dtype=float)
    psd = noise_spectrum(device, baths, drive, hz_to_angular(offsets_hz))
    if averages is not None:
        if averages < 1:
            raise DomainError('averages must be >= 1', field='averages')
        psd = psd * rng.gamma(averages, 1.0 / averages, size=psd.shape)
    else:
        psd = add_noise(psd, noise, rng)
    metadata = {
        'reference_hz': angular_to_hz(device.port.omega_r),
        'drive_hz': angular_to_hz(drive.omega_d),
        'power_dbm': drive.generator_power,
        'n_d': intracavity_photons(drive, device.port),
        'averages': averages or 0,
        'noise': noise,
        'rbw_hz': rbw_hz,
    }
    return Trace(TraceKind.PSD, offsets_hz, psd, metadata)


def synthesize_ringdown_trace(device: Device, baths: NoiseBaths, schedule: PulseSchedule,
                              rng: np.random.Generator, time_grid: Optional[np.ndarray] = None,
                              noise: float = 0.0) -> Trace:
    """Scattered-power proxy of a pulse schedule, optionally with Gaussian noise."""
    trajectory = ringdown_simulate(schedule, device, baths, time_grid=time_grid)
    boundaries = schedule.boundaries
    metadata: Dict[str, float] = {
        'pulse_on_s': float(boundaries[1]) if len(boundaries) > 2 else 0.0,
        'pulse_off_s': float(boundaries[-2]) if len(boundaries) > 2 else float(boundaries[-1]),
        'noise': noise,
    }
    return Trace(TraceKind.TIMESERIES, trajectory.time,
                 add_noise(trajectory.scattered_power, noise, rng), metadata)

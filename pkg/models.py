"""
Domain records for the electromechanics toolkit.

This module defines the value types shared by every service: circuit and
mechanical descriptions, cavity ports and drive tones, noise baths, pulse
schedules, traces and fit results. All frequencies and rates are angular
(rad/s) internally; Hz appears only at file and CLI boundaries.
"""
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import config
from utils.errors import InvariantError, SetupError
from utils.logging_config import get_logger

logger = get_logger(__name__)

TWO_PI = 2.0 * math.pi


def _require(condition: bool, field_name: str, message: str) -> None:
    if not condition:
        raise InvariantError(message, field=field_name)


def _finite(value: float) -> bool:
    return value is not None and math.isfinite(value)


class Sideband(str, Enum):
    """Which motional sideband of the cavity a tone sits on."""

    RED = 'red'
    BLUE = 'blue'


class ToneRole(str, Enum):
    """Purpose of a drive tone within a measurement."""

    PUMP = 'pump'
    PROBE = 'probe'
    PULSE = 'pulse'


class TraceKind(str, Enum):
    """Column layout of a trace file."""

    S11 = 's11'
    PSD = 'psd'
    TIMESERIES = 'timeseries'


# ---------------------------------------------------------------------------
# Circuit and mechanics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CircuitParams:
    """Lumped-element circuit: coil inductance and the three capacitances.

    ``dCm_du`` is the motional-capacitance derivative along the mode
    coordinate (F/m). It comes from outside (FEM) and may be absent.
    """

    L: float
    C_m: float
    C_l: float = 0.0
    C_s: float = 0.0
    dCm_du: Optional[float] = None

    def __post_init__(self) -> None:
        _require(_finite(self.L) and self.L > 0, 'L', 'inductance must be positive')
        _require(_finite(self.C_m) and self.C_m > 0, 'C_m', 'motional capacitance must be positive')
        _require(_finite(self.C_l) and self.C_l >= 0, 'C_l', 'coil capacitance must be >= 0')
        _require(_finite(self.C_s) and self.C_s >= 0, 'C_s', 'stray capacitance must be >= 0')
        if self.dCm_du is not None:
            _require(_finite(self.dCm_du), 'dCm_du', 'derivative must be finite')

    @property
    def C_tot(self) -> float:
        """Total circuit capacitance C_m + C_l + C_s."""
        return self.C_m + self.C_l + self.C_s


@dataclass(frozen=True)
class MechanicalMode:
    """Mechanical resonance: frequency, effective mass, damping, bath."""

    omega_m: float
    m_eff: float
    gamma_i: float
    bath_temperature: float = 0.0

    def __post_init__(self) -> None:
        _require(_finite(self.omega_m) and self.omega_m > 0, 'omega_m', 'must be positive')
        _require(_finite(self.m_eff) and self.m_eff > 0, 'm_eff', 'must be positive')
        _require(_finite(self.gamma_i) and self.gamma_i > 0, 'gamma_i', 'must be positive')
        _require(
            _finite(self.bath_temperature) and self.bath_temperature >= 0,
            'bath_temperature', 'must be >= 0',
        )

    @property
    def quality_factor(self) -> float:
        """Q_m = omega_m / gamma_i."""
        return self.omega_m / self.gamma_i


@dataclass(frozen=True)
class GapTable:
    """Tabulated capacitance and coupling versus capacitor gap.

    Rows are (d [m], C_m [F], g0_ideal [rad/s], g0_loaded [rad/s]).
    """

    d: Tuple[float, ...]
    C_m: Tuple[float, ...]
    g0_ideal: Tuple[float, ...]
    g0_loaded: Tuple[float, ...]

    def __post_init__(self) -> None:
        n = len(self.d)
        _require(n >= 2, 'd', 'gap table needs at least two rows')
        for name in ('C_m', 'g0_ideal', 'g0_loaded'):
            _require(len(getattr(self, name)) == n, name, 'column length differs from d')
        for name in ('d', 'C_m', 'g0_ideal', 'g0_loaded'):
            values = getattr(self, name)
            _require(all(_finite(v) and v > 0 for v in values), name, 'entries must be positive')
        _require(all(b > a for a, b in zip(self.d, self.d[1:])), 'd', 'gaps must be strictly increasing')
        _require(
            all(b <= a for a, b in zip(self.C_m, self.C_m[1:])),
            'C_m', 'capacitance must decrease with gap',
        )


# ---------------------------------------------------------------------------
# Microwave port and tones
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Background:
    """Complex baseline a0 * exp(i theta) * (1 + slope * delta)."""

    amplitude: float = 1.0
    phase: float = 0.0
    slope: float = 0.0

    def __post_init__(self) -> None:
        _require(_finite(self.amplitude) and self.amplitude > 0, 'background.amplitude', 'must be positive')
        _require(_finite(self.phase), 'background.phase', 'must be finite')
        _require(_finite(self.slope), 'background.slope', 'must be finite')

    @property
    def is_ideal(self) -> bool:
        return self.amplitude == 1.0 and self.phase == 0.0 and self.slope == 0.0


@dataclass(frozen=True)
class CavityPort:
    """Single-port microwave resonator seen in reflection."""

    omega_r: float
    kappa_i: float
    kappa_e: float
    background: Background = field(default_factory=Background)

    def __post_init__(self) -> None:
        _require(_finite(self.omega_r) and self.omega_r > 0, 'omega_r', 'must be positive')
        _require(_finite(self.kappa_i) and self.kappa_i > 0, 'kappa_i', 'must be positive')
        _require(_finite(self.kappa_e) and self.kappa_e >= 0, 'kappa_e', 'must be >= 0')

    @property
    def kappa(self) -> float:
        """Total loaded linewidth kappa_i + kappa_e."""
        return self.kappa_i + self.kappa_e

    @property
    def overcoupled(self) -> bool:
        return self.kappa_e > self.kappa_i


@dataclass(frozen=True)
class DriveTone:
    """Microwave tone at the generator, with the line attenuation to the device."""

    generator_power: float
    attenuation: float
    omega_d: float
    role: ToneRole = ToneRole.PUMP

    def __post_init__(self) -> None:
        _require(not math.isnan(self.generator_power), 'generator_power', 'must not be NaN')
        _require(_finite(self.attenuation) and self.attenuation <= 0, 'attenuation', 'must be <= 0 dB')
        _require(_finite(self.omega_d) and self.omega_d > 0, 'omega_d', 'must be positive')

    def sideband(self, omega_r: float) -> Sideband:
        """Red when the tone sits below the cavity, blue above."""
        return Sideband.RED if self.omega_d <= omega_r else Sideband.BLUE


@dataclass(frozen=True)
class AuxiliaryMode:
    """Weakly coupled second mechanical resonance seen in EIT spectra."""

    omega_m: float
    gamma_i: float
    G: float

    def __post_init__(self) -> None:
        _require(_finite(self.omega_m) and self.omega_m > 0, 'omega_m2', 'must be positive')
        _require(_finite(self.gamma_i) and self.gamma_i > 0, 'gamma_i2', 'must be positive')
        _require(_finite(self.G) and self.G >= 0, 'G2', 'must be >= 0')


@dataclass(frozen=True)
class EITParams:
    """Parameters of the two-tone EIT reflection spectrum."""

    port: CavityPort
    omega_m: float
    gamma_i: float
    G: float
    Delta_rd: float
    auxiliary: Optional[AuxiliaryMode] = None

    def __post_init__(self) -> None:
        _require(_finite(self.omega_m) and self.omega_m > 0, 'omega_m', 'must be positive')
        _require(_finite(self.gamma_i) and self.gamma_i >= 0, 'gamma_i', 'must be >= 0')
        _require(_finite(self.G) and self.G >= 0, 'G', 'must be >= 0')
        _require(_finite(self.Delta_rd), 'Delta_rd', 'must be finite')
        if self.sideband_resolution <= 1.0:
            logger.warning(
                f"omega_m/kappa = {self.sideband_resolution:.3g} <= 1; "
                "the sideband-resolved EIT formula is outside its validity range"
            )

    @property
    def sideband_resolution(self) -> float:
        """omega_m / kappa."""
        return self.omega_m / self.port.kappa

    @property
    def cooperativity(self) -> float:
        """4 G^2 / (kappa gamma_i)."""
        if self.gamma_i == 0:
            return math.inf
        return 4.0 * self.G ** 2 / (self.port.kappa * self.gamma_i)


# ---------------------------------------------------------------------------
# Baths, schedules, trajectories
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseBaths:
    """Thermal occupancies of the ports feeding the linearized dynamics."""

    n_wg: float = 0.0
    n_cav: float = 0.0
    n_mech: float = 0.0
    n_add: float = 0.0

    def __post_init__(self) -> None:
        for name in ('n_wg', 'n_cav', 'n_mech', 'n_add'):
            value = getattr(self, name)
            _require(_finite(value) and value >= 0, name, 'occupancy must be >= 0')


@dataclass(frozen=True)
class PulseSegment:
    """Interval of a ring-down schedule, optionally with one extra tone on."""

    duration: float
    tone: Optional[DriveTone] = None

    def __post_init__(self) -> None:
        _require(_finite(self.duration) and self.duration > 0, 'duration', 'must be positive')


@dataclass(frozen=True)
class PulseSchedule:
    """Ordered segments; the probe tone stays on throughout."""

    segments: Tuple[PulseSegment, ...]
    probe: Optional[DriveTone] = None

    def __post_init__(self) -> None:
        _require(len(self.segments) > 0, 'segments', 'schedule needs at least one segment')

    @property
    def boundaries(self) -> np.ndarray:
        """Segment start times followed by the end time."""
        return np.concatenate(([0.0], np.cumsum([s.duration for s in self.segments])))


@dataclass(frozen=True)
class OccupancyTrajectory:
    """Phonon occupancy and scattered-power proxy on a time grid."""

    time: np.ndarray
    occupancy: np.ndarray
    scattered_power: np.ndarray

    def __post_init__(self) -> None:
        _require(
            self.time.shape == self.occupancy.shape == self.scattered_power.shape,
            'time', 'trajectory arrays must share one shape',
        )
        _require(bool(np.all(self.occupancy >= 0)), 'occupancy', 'must be >= 0 everywhere')


# ---------------------------------------------------------------------------
# Device aggregate
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Device:
    """Everything the simulators need about one measured device."""

    circuit: CircuitParams
    mode: MechanicalMode
    port: CavityPort
    baths: NoiseBaths
    g0: float
    attenuation: float
    gain_db: float = 0.0

    def __post_init__(self) -> None:
        _require(_finite(self.g0) and self.g0 >= 0, 'g0', 'must be >= 0')
        _require(_finite(self.attenuation) and self.attenuation <= 0, 'attenuation_db', 'must be <= 0 dB')

    def tone(self, generator_power: float, detuning: float, role: ToneRole = ToneRole.PUMP) -> DriveTone:
        """Tone at omega_r - detuning fed through this device's input line."""
        return DriveTone(
            generator_power=generator_power,
            attenuation=self.attenuation,
            omega_d=self.port.omega_r - detuning,
            role=role,
        )


# ---------------------------------------------------------------------------
# Traces and fits
# ---------------------------------------------------------------------------

@dataclass
class Trace:
    """Sampled spectrum or time series with acquisition metadata.

    ``grid`` is frequency in Hz for s11/psd traces and time in seconds for
    timeseries traces. ``samples`` is complex for s11, real otherwise.
    """

    kind: TraceKind
    grid: np.ndarray
    samples: np.ndarray
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.kind = TraceKind(self.kind)
        self.grid = np.asarray(self.grid, dtype=float)
        dtype = complex if self.kind == TraceKind.S11 else float
        self.samples = np.asarray(self.samples, dtype=dtype)
        _require(self.grid.ndim == 1, 'grid', 'must be one-dimensional')
        _require(self.samples.shape == self.grid.shape, 'samples', 'sample count must equal grid count')
        if self.grid.size > 1:
            _require(bool(np.all(np.diff(self.grid) > 0)), 'grid', 'must be strictly increasing')

    def __len__(self) -> int:
        return int(self.grid.size)

    @property
    def is_complex(self) -> bool:
        return self.kind == TraceKind.S11


@dataclass
class FitResult:
    """Outcome of a least-squares fit.

    ``estimates``/``ci95`` hold every model parameter, fixed ones included
    (with a zero interval); ``covariance`` spans the free ones in ``free`` order.
    """

    model: str
    estimates: Dict[str, float]
    free: List[str]
    covariance: np.ndarray
    ci95: Dict[str, float]
    reduced_chi2: float
    residuals: np.ndarray
    n_points: int
    iterations: int
    converged: bool
    message: str
    residual_mode: str = 'complex'
    exclusions: List[Tuple[float, float]] = field(default_factory=list)
    units: Dict[str, str] = field(default_factory=dict)
    cost_history: List[float] = field(default_factory=list)

    def __getitem__(self, name: str) -> float:
        return self.estimates[name]

    def sigma(self, name: str) -> float:
        """One-standard-deviation uncertainty of a parameter."""
        return self.ci95[name] / config.CI_Z_SCORE

    def contains(self, name: str, truth: float) -> bool:
        """True when ``truth`` lies inside the 95% interval of ``name``."""
        return abs(self.estimates[name] - truth) <= self.ci95[name]

    def to_report(self) -> Dict[str, Any]:
        """JSON-ready report; angular rates are converted to Hz."""
        parameters = {}
        for name, value in self.estimates.items():
            scale = 1.0 / TWO_PI if self.units.get(name) == 'rad/s' else 1.0
            unit = 'Hz' if self.units.get(name) == 'rad/s' else self.units.get(name, '')
            parameters[name] = {
                'value': value * scale,
                'ci95': self.ci95[name] * scale,
                'unit': unit,
                'free': name in self.free,
            }
        return {
            'model': self.model,
            'converged': self.converged,
            'message': self.message,
            'iterations': self.iterations,
            'n_points': self.n_points,
            'reduced_chi2': self.reduced_chi2,
            'residual_mode': self.residual_mode,
            'exclusions_hz': [list(w) for w in self.exclusions],
            'parameters': parameters,
            'covariance_order': list(self.free),
            'covariance': self.covariance.tolist(),
        }


@dataclass(frozen=True)
class SweepPoint:
    """One drive power of a power sweep with its EIT fit."""

    power_dbm: float
    n_d: float
    fit: FitResult


@dataclass(frozen=True)
class PowerSweep:
    """EIT fits ordered by drive power."""

    rows: Tuple[SweepPoint, ...]

    def __post_init__(self) -> None:
        photons = [row.n_d for row in self.rows]
        if any(b <= a for a, b in zip(photons, photons[1:])):
            raise SetupError('photon numbers must increase strictly with drive power', field='n_d')

    @classmethod
    def from_points(cls, points: Sequence[SweepPoint]) -> 'PowerSweep':
        return cls(rows=tuple(points))


@dataclass(frozen=True)
class JitterModel:
    """Ornstein-Uhlenbeck wandering of the mechanical frequency (Hz)."""

    diffusion: float = 4.0
    saturation_std: float = 20.0
    seed: int = 0

    def __post_init__(self) -> None:
        _require(_finite(self.diffusion) and self.diffusion > 0, 'diffusion', 'must be positive')
        _require(_finite(self.saturation_std) and self.saturation_std >= 0, 'saturation_std', 'must be >= 0')

    @property
    def correlation_time(self) -> float:
        """tau = 2 sigma^2 / D, seconds."""
        return 2.0 * self.saturation_std ** 2 / self.diffusion

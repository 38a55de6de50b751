"""
Levenberg-Marquardt least squares and the trace fits built on it.

The engine (``fit_curve``) minimizes stacked residuals of a ``TraceModel``
against a ``Trace`` with box bounds enforced by projection, exclusion
windows, and a linearized covariance giving 95% intervals. Model adapters
cover the bare cavity, the EIT spectrum (optionally jitter-averaged), the
Langevin noise spectrum and the ring-down decay; the domain fits on top
extract g0 from power sweeps and build cooling curves.

Spectral traces are stored relative to ``metadata['reference_hz']``: the pump
frequency for EIT traces, the cavity resonance for cavity and noise traces.
Models therefore work with offsets of order the cavity linewidth.
"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import config
from models import (
    CavityPort, Device, DriveTone, FitResult, NoiseBaths, PowerSweep, Trace, TraceKind,
)
from services.dynamics import (
    mechanical_occupancy, output_coefficients, spectral_weights,
)
from services.physics import angular_to_hz, bose_temperature, hz_to_angular
from services.response import backaction_damping, intracavity_photons, jitter_quadrature
from utils.errors import FeatureNotFoundError, SetupError, UsageError
from utils.logging_config import get_logger

logger = get_logger(__name__)

Window = Tuple[float, float]


# ---------------------------------------------------------------------------
# Problem description
# ---------------------------------------------------------------------------

@dataclass
class Parameter:
    """One model parameter with bounds, a start value and a vary flag."""

    name: str
    value: float
    lower: float = -math.inf
    upper: float = math.inf
    vary: bool = True
    step: Optional[float] = None


class TraceModel:
    """Parameterized model of a trace.

    Subclasses set ``name``, ``parameter_names`` and ``units`` and implement
    ``evaluate``; ``jacobian`` may return ``None`` to fall back on central
    differences.
    """

    name: str = 'model'
    parameter_names: Tuple[str, ...] = ()
    units: Dict[str, str] = {}

    def abscissa(self, trace: Trace) -> np.ndarray:
        """Model coordinate of each trace sample (rad/s offsets for spectra, seconds for time)."""
        if trace.kind == TraceKind.TIMESERIES:
            return trace.grid
        return hz_to_angular(trace.grid)

    def evaluate(self, x: np.ndarray, p: Dict[str, float]) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, x: np.ndarray, p: Dict[str, float]) -> Optional[np.ndarray]:
        return None


@dataclass
class FitProblem:
    """A trace, a model and the parameters to adjust."""

    model: TraceModel
    trace: Trace
    parameters: List[Parameter]
    exclusions: List[Window] = field(default_factory=list)
    residual_mode: str = 'complex'
    sigma: Optional[np.ndarray] = None

    def included(self) -> np.ndarray:
        """Mask of samples outside every exclusion window."""
        mask = np.ones(len(self.trace), dtype=bool)
        for lo, hi in self.exclusions:
            mask &= ~((self.trace.grid >= lo) & (self.trace.grid <= hi))
        return mask


# ---------------------------------------------------------------------------
# Levenberg-Marquardt engine
# ---------------------------------------------------------------------------

def numerical_jacobian(model: TraceModel, x: np.ndarray, p: Dict[str, float],
                       names: Sequence[str], steps: Optional[Dict[str, float]] = None) -> np.ndarray:
    """Central-difference Jacobian of ``model`` with respect to ``names``."""
    columns = []
    for name in names:
        h = (steps or {}).get(name) or 1e-6 * max(abs(p[name]), 1.0)
        forward = dict(p, **{name: p[name] + h})
        backward = dict(p, **{name: p[name] - h})
        columns.append((model.evaluate(x, forward) - model.evaluate(x, backward)) / (2.0 * h))
    return np.stack(columns, axis=-1)


def check_jacobian(model: TraceModel, x: np.ndarray, p: Dict[str, float],
                   steps: Optional[Dict[str, float]] = None) -> float:
    """Largest column-relative mismatch between the analytic and central-difference Jacobians."""
    names = list(model.parameter_names)
    analytic = model.jacobian(x, p)
    if analytic is None:
        return 0.0
    numeric = numerical_jacobian(model, x, p, names, steps)
    worst = 0.0
    for j in range(len(names)):
        scale = np.max(np.abs(analytic[:, j]))
        if scale == 0:
            continue
        worst = max(worst, float(np.max(np.abs(analytic[:, j] - numeric[:, j])) / scale))
    return worst


class _Objective:
    """Residual vector and Jacobian of a problem over its free parameters."""

    def __init__(self, problem: FitProblem) -> None:
        self.problem = problem
        self.model = problem.model
        self.mask = problem.included()
        self.x = self.model.abscissa(problem.trace)[self.mask]
        self.data = problem.trace.samples[self.mask]
        self.free = [prm for prm in problem.parameters if prm.vary]
        self.names = [prm.name for prm in self.free]
        self.fixed = {prm.name: prm.value for prm in problem.parameters if not prm.vary}
        self.lower = np.array([prm.lower for prm in self.free], dtype=float)
        self.upper = np.array([prm.upper for prm in self.free], dtype=float)
        self.steps = {prm.name: prm.step for prm in self.free if prm.step}
        weights = np.ones(self.mask.sum()) if problem.sigma is None else 1.0 / np.asarray(problem.sigma)[self.mask]
        self.weights = weights
        self.complex_data = np.iscomplexobj(self.data)
        mode = problem.residual_mode
        if mode not in ('complex', 'magnitude'):
            raise SetupError(f"residual mode must be 'complex' or 'magnitude', got {mode!r}", field='residual_mode')
        self.stack_complex = self.complex_data and mode == 'complex'

    def params(self, vector: np.ndarray) -> Dict[str, float]:
        values = dict(self.fixed)
        values.update(zip(self.names, (float(v) for v in vector)))
        return values

    def project(self, vector: np.ndarray) -> np.ndarray:
        return np.clip(vector, self.lower, self.upper)

    def _reduce(self, model_values: np.ndarray) -> np.ndarray:
        if self.stack_complex:
            diff = (model_values - self.data) * self.weights
            return np.concatenate([diff.real, diff.imag])
        if self.complex_data:
            return (np.abs(model_values) - np.abs(self.data)) * self.weights
        return (np.real(model_values) - self.data) * self.weights

    def residuals(self, vector: np.ndarray) -> np.ndarray:
        return self._reduce(self.model.evaluate(self.x, self.params(vector)))

    def jacobian(self, vector: np.ndarray) -> np.ndarray:
        p = self.params(vector)
        full = self.model.jacobian(self.x, p)
        if full is None:
            jac = numerical_jacobian(self.model, self.x, p, self.names, self.steps)
        else:
            index = [self.model.parameter_names.index(n) for n in self.names]
            jac = full[:, index]
        w = self.weights[:, None]
        if self.stack_complex:
            return np.concatenate([(jac * w).real, (jac * w).imag])
        if self.complex_data:
            values = self.model.evaluate(self.x, p)
            magnitude = np.abs(values)
            safe = np.where(magnitude > 0, magnitude, 1.0)
            return np.real(np.conj(values)[:, None] * jac) / safe[:, None] * w
        return np.real(jac) * w


def _scaled_solve(jtj: np.ndarray, gradient: np.ndarray, damping: float) -> np.ndarray:
    """Solve (J^T J + damping diag(J^T J)) step = -gradient in column-scaled variables."""
    scale = np.sqrt(np.diag(jtj))
    scale = np.where(scale > 0, scale, 1.0)
    scaled = jtj / np.outer(scale, scale)
    system = scaled + damping * np.diag(np.diag(scaled))
    step = np.linalg.solve(system, -gradient / scale)
    return step / scale


def _covariance(jtj: np.ndarray, variance: float) -> np.ndarray:
    scale = np.sqrt(np.diag(jtj))
    scale = np.where(scale > 0, scale, 1.0)
    scaled_inverse = np.linalg.pinv(jtj / np.outer(scale, scale), hermitian=True)
    covariance = scaled_inverse / np.outer(scale, scale) * variance
    return 0.5 * (covariance + covariance.T)


def fit_curve(problem: FitProblem) -> FitResult:
    """
    Levenberg-Marquardt minimization of the squared residuals of ``problem``.

    Damping starts at 1e-3 and is divided by 10 on every accepted step and
    multiplied by 10 on every rejected one; steps are projected onto the
    parameter bounds. Converges when the relative cost decrease of an accepted
    step drops below 1e-10 or the scaled gradient (largest cosine between the
    residual and a Jacobian column) drops below 1e-12, or when a rejected step is
    below 1e-15 of the scaled parameter norm; gives up after 200
    iterations or when the damping saturates. The covariance is the
    pseudo-inverse of J^T J scaled by the residual variance.

    Raises:
        SetupError: Too few included points, or starts outside the bounds.
    """
    objective = _Objective(problem)
    n_free = len(objective.free)
    n_points = int(objective.mask.sum())
    if n_free == 0:
        raise SetupError('no free parameters', field='parameters')
    if n_points < 3 * n_free:
        raise SetupError(
            f'{n_points} included points for {n_free} free parameters; need at least {3 * n_free}',
            field='data',
        )
    for prm in objective.free:
        if not prm.lower <= prm.value <= prm.upper:
            raise SetupError(f'initial value {prm.value} outside [{prm.lower}, {prm.upper}]', field=prm.name)

    vector = np.array([prm.value for prm in objective.free], dtype=float)
    residual = objective.residuals(vector)
    cost = 0.5 * float(residual @ residual)
    damping = config.LM_INITIAL_DAMPING
    history = [cost]
    converged = False
    message = 'maximum iterations reached'
    iteration = 0

    jac = objective.jacobian(vector)
    while iteration < config.LM_MAX_ITERATIONS:
        iteration += 1
        if cost == 0.0:
            converged, message = True, 'exact fit'
            break
        gradient = jac.T @ residual
        column_norms = np.linalg.norm(jac, axis=0)
        column_norms = np.where(column_norms > 0, column_norms, 1.0)
        cosine = float(np.max(np.abs(gradient) / column_norms) / math.sqrt(2.0 * cost))
        if cosine < config.LM_GTOL:
            converged, message = True, 'gradient below tolerance'
            break
        jtj = jac.T @ jac
        try:
            step = _scaled_solve(jtj, gradient, damping)
        except np.linalg.LinAlgError:
            step = None
        if step is None or not np.all(np.isfinite(step)):
            damping *= config.LM_DAMPING_FACTOR
            if damping > config.LM_MAX_DAMPING:
                message = 'singular normal equations'
                break
            continue
        candidate = objective.project(vector + step)
        candidate_residual = objective.residuals(candidate)
        candidate_cost = 0.5 * float(candidate_residual @ candidate_residual)
        if np.isfinite(candidate_cost) and candidate_cost <= cost:
            decrease = (cost - candidate_cost) / cost
            vector, residual, cost = candidate, candidate_residual, candidate_cost
            history.append(cost)
            damping = max(damping / config.LM_DAMPING_FACTOR, 1e-15)
            logger.debug(f"{problem.model.name} iteration {iteration}: cost={cost:.6e} damping={damping:.1e}")
            if decrease < config.LM_FTOL:
                converged, message = True, 'relative cost change below tolerance'
                break
            jac = objective.jacobian(vector)
        else:
            scale = np.sqrt(np.diag(jtj))
            if np.linalg.norm(scale * step) <= config.LM_XTOL * (np.linalg.norm(scale * vector) + config.LM_XTOL):
                converged, message = True, 'step below tolerance'
                break
            damping *= config.LM_DAMPING_FACTOR
            if damping > config.LM_MAX_DAMPING:
                message = 'damping saturated without cost decrease'
                break

    jac = objective.jacobian(vector)
    jtj = jac.T @ jac
    dof = residual.size - n_free
    variance = 2.0 * cost / dof if dof > 0 else math.nan
    covariance = _covariance(jtj, variance)
    sigma = np.sqrt(np.clip(np.diag(covariance), 0.0, None))

    estimates = objective.params(vector)
    ordered = {name: estimates[name] for name in problem.model.parameter_names if name in estimates}
    ci95 = {name: 0.0 for name in ordered}
    ci95.update({name: config.CI_Z_SCORE * s for name, s in zip(objective.names, sigma)})

    for prm, value in zip(objective.free, vector):
        if value in (prm.lower, prm.upper):
            logger.warning(f"{problem.model.name}: parameter {prm.name} pinned at bound {value:.6g}")
    if converged:
        logger.info(f"{problem.model.name} fit converged in {iteration} iterations ({message})")
    else:
        logger.warning(f"{problem.model.name} fit did not converge: {message}")

    full_x = problem.model.abscissa(problem.trace)
    full_model = problem.model.evaluate(full_x, estimates)
    if not problem.trace.is_complex:
        full_model = np.real(full_model)
    return FitResult(
        model=problem.model.name,
        estimates=ordered,
        free=list(objective.names),
        covariance=covariance,
        ci95=ci95,
        reduced_chi2=variance,
        residuals=problem.trace.samples - full_model,
        n_points=n_points,
        iterations=iteration,
        converged=converged,
        message=message,
        residual_mode=problem.residual_mode if objective.complex_data else 'real',
        exclusions=list(problem.exclusions),
        units={name: problem.model.units.get(name, '') for name in ordered},
        cost_history=history,
    )


# ---------------------------------------------------------------------------
# Model adapters
# ---------------------------------------------------------------------------

class FunctionModel(TraceModel):
    """Wraps a plain function ``f(x, **params)``; Jacobian by central differences."""

    def __init__(self, function: Callable[..., np.ndarray], parameter_names: Sequence[str],
                 name: str = 'function', units: Optional[Dict[str, str]] = None) -> None:
        self.function = function
        self.parameter_names = tuple(parameter_names)
        self.name = name
        self.units = units or {}

    def abscissa(self, trace: Trace) -> np.ndarray:
        return trace.grid

    def evaluate(self, x: np.ndarray, p: Dict[str, float]) -> np.ndarray:
        return self.function(x, **{n: p[n] for n in self.parameter_names})


_BACKGROUND = ('amplitude', 'phase', 'slope')


class CavityModel(TraceModel):
    """a0 e^{i theta} (1 + b delta)(1 - kappa_e / (kappa/2 + i delta)), delta = x - omega_r."""

    name = 'cavity'
    parameter_names = ('omega_r', 'kappa_i', 'kappa_e') + _BACKGROUND
    units = {'omega_r': 'rad/s', 'kappa_i': 'rad/s', 'kappa_e': 'rad/s', 'slope': 's/rad', 'phase': 'rad'}

    def evaluate(self, x: np.ndarray, p: Dict[str, float]) -> np.ndarray:
        delta = x - p['omega_r']
        base = p['amplitude'] * np.exp(1j * p['phase'])
        denominator = 0.5 * (p['kappa_i'] + p['kappa_e']) + 1j * delta
        return base * (1.0 + p['slope'] * delta) * (1.0 - p['kappa_e'] / denominator)

    def jacobian(self, x: np.ndarray, p: Dict[str, float]) -> np.ndarray:
        delta = x - p['omega_r']
        base = p['amplitude'] * np.exp(1j * p['phase'])
        tilt = 1.0 + p['slope'] * delta
        kappa_e = p['kappa_e']
        denominator = 0.5 * (p['kappa_i'] + kappa_e) + 1j * delta
        lorentz = 1.0 - kappa_e / denominator
        value = base * tilt * lorentz
        d_lorentz_d_denominator = kappa_e / denominator ** 2
        return np.stack([
            -(base * p['slope'] * lorentz + base * tilt * d_lorentz_d_denominator * 1j),
            base * tilt * 0.5 * d_lorentz_d_denominator,
            base * tilt * (-1.0 / denominator + 0.5 * d_lorentz_d_denominator),
            value / p['amplitude'],
            1j * value,
            base * delta * lorentz,
        ], axis=-1)


class EITModel(TraceModel):
    """
    EIT reflection in the pump frame: x = omega_p - omega_d.

    delta = x - Delta_rd is the probe detuning from the cavity and
    x - omega_m the two-photon detuning. ``sigma_jitter`` (rad/s) averages the
    spectrum over Gaussian jitter of omega_m.
    """

    name = 'eit'
    parameter_names = ('Delta_rd', 'kappa_i', 'kappa_e', 'gamma_i', 'omega_m', 'G') + _BACKGROUND + ('sigma_jitter',)
    units = {
        'Delta_rd': 'rad/s', 'kappa_i': 'rad/s', 'kappa_e': 'rad/s', 'gamma_i': 'rad/s',
        'omega_m': 'rad/s', 'G': 'rad/s', 'slope': 's/rad', 'phase': 'rad', 'sigma_jitter': 'rad/s',
    }

    def _single(self, x: np.ndarray, p: Dict[str, float], omega_m: float, with_jacobian: bool):
        delta = x - p['Delta_rd']
        base = p['amplitude'] * np.exp(1j * p['phase'])
        tilt = 1.0 + p['slope'] * delta
        kappa_e = p['kappa_e']
        mech = p['gamma_i'] + 2j * (x - omega_m)
        self_energy = 2.0 * p['G'] ** 2 / mech
        denominator = 0.5 * (p['kappa_i'] + kappa_e) + 1j * delta + self_energy
        lorentz = 1.0 - kappa_e / denominator
        value = base * tilt * lorentz
        if not with_jacobian:
            return value, None
        dl = base * tilt * kappa_e / denominator ** 2
        d_sigma_d_omega_m = 4j * p['G'] ** 2 / mech ** 2
        columns = [
            -(base * p['slope'] * lorentz) - dl * 1j,
            0.5 * dl,
            base * tilt * (-1.0 / denominator) + 0.5 * dl,
            dl * (-2.0 * p['G'] ** 2 / mech ** 2),
            dl * d_sigma_d_omega_m,
            dl * (4.0 * p['G'] / mech),
            value / p['amplitude'],
            1j * value,
            base * delta * lorentz,
        ]
        return value, columns

    def _nodes(self, p: Dict[str, float]) -> Tuple[np.ndarray, np.ndarray]:
        sigma = p.get('sigma_jitter', 0.0)
        if sigma > 0:
            return jitter_quadrature(sigma)
        return np.zeros(1), np.ones(1)

    def evaluate(self, x: np.ndarray, p: Dict[str, float]) -> np.ndarray:
        offsets, weights = self._nodes(p)
        total = np.zeros(np.shape(x), dtype=complex)
        for offset, weight in zip(offsets, weights):
            total += weight * self._single(x, p, p['omega_m'] + offset, False)[0]
        return total

    def jacobian(self, x: np.ndarray, p: Dict[str, float]) -> np.ndarray:
        offsets, weights = self._nodes(p)
        sigma = p.get('sigma_jitter', 0.0)
        columns = None
        d_sigma = np.zeros(np.shape(x), dtype=complex)
        for offset, weight in zip(offsets, weights):
            _, cols = self._single(x, p, p['omega_m'] + offset, True)
            if columns is None:
                columns = [weight * c for c in cols]
            else:
                columns = [acc + weight * c for acc, c in zip(columns, cols)]
            if sigma > 0:
                d_sigma += weight * cols[4] * (offset / sigma)
        return np.stack(columns + [d_sigma], axis=-1)


class NoiseModel(TraceModel):
    """
    Langevin output PSD as a function of the bath occupancies.

    The response coefficients depend only on the device and the drive, so they
    are computed once per grid; the spectrum is linear in the occupancies.
    With ``tie_baths`` the waveguide and cavity share the occupancy ``n_b``.
    """

    name = 'noise'

    def __init__(self, device: Device, drive: DriveTone, tie_baths: bool = True) -> None:
        self.device = device
        self.drive = drive
        self.tie_baths = tie_baths
        self.parameter_names = (('n_b',) if tie_baths else ('n_wg', 'n_cav')) + ('n_mech', 'n_add')
        self.units = {}
        self._cache: Dict[bytes, Dict[str, Tuple[np.ndarray, np.ndarray]]] = {}
        n_d = intracavity_photons(drive, device.port)
        self.G = math.sqrt(n_d) * device.g0
        self.Delta = device.port.omega_r - drive.omega_d

    def _weights(self, x: np.ndarray) -> Dict[str, Tuple[np.ndarray, np.ndarray]]:
        key = x.tobytes()
        if key not in self._cache:
            port, mode = self.device.port, self.device.mode
            coefficients = output_coefficients(
                port.kappa_i, port.kappa_e, mode.omega_m, mode.gamma_i, self.G, self.Delta, x,
            )
            self._cache[key] = spectral_weights(coefficients)
        return self._cache[key]

    def _occupancies(self, p: Dict[str, float]) -> Dict[str, float]:
        if self.tie_baths:
            return {'waveguide': p['n_b'], 'cavity': p['n_b'], 'mechanics': p['n_mech']}
        return {'waveguide': p['n_wg'], 'cavity': p['n_cav'], 'mechanics': p['n_mech']}

    def evaluate(self, x: np.ndarray, p: Dict[str, float]) -> np.ndarray:
        weights = self._weights(x)
        occupancies = self._occupancies(p)
        total = np.full(np.shape(x), p['n_add'] + 1.0)
        for port_name, (thermal, vacuum) in weights.items():
            total = total + thermal * occupancies[port_name] + vacuum
        return total

    def jacobian(self, x: np.ndarray, p: Dict[str, float]) -> np.ndarray:
        weights = self._weights(x)
        if self.tie_baths:
            bath_columns = [weights['waveguide'][0] + weights['cavity'][0]]
        else:
            bath_columns = [weights['waveguide'][0], weights['cavity'][0]]
        return np.stack(bath_columns + [weights['mechanics'][0], np.ones(np.shape(x))], axis=-1)


class RingdownModel(TraceModel):
    """amplitude * exp(-gamma_m (t - t0)) + offset."""

    name = 'ringdown'
    parameter_names = ('amplitude', 'gamma_m', 'offset')
    units = {'gamma_m': 'rad/s'}

    def __init__(self, t0: float) -> None:
        self.t0 = t0

    def evaluate(self, x: np.ndarray, p: Dict[str, float]) -> np.ndarray:
        return p['amplitude'] * np.exp(-p['gamma_m'] * (x - self.t0)) + p['offset']

    def jacobian(self, x: np.ndarray, p: Dict[str, float]) -> np.ndarray:
        decay = np.exp(-p['gamma_m'] * (x - self.t0))
        return np.stack([decay, -p['amplitude'] * (x - self.t0) * decay, np.ones(np.shape(x))], axis=-1)


# ---------------------------------------------------------------------------
# Cavity and EIT fits
# ---------------------------------------------------------------------------

def _require_kind(trace: Trace, kind: TraceKind) -> None:
    if trace.kind != kind:
        raise UsageError(f'expected a {kind.value} trace, got {trace.kind.value}', field='kind')
    if len(trace) == 0:
        raise UsageError('trace is empty', field='trace')


def _reference(trace: Trace) -> float:
    return hz_to_angular(float(trace.metadata.get('reference_hz', 0.0)))


def _background_parameters(port: CavityPort, vary: bool) -> List[Parameter]:
    bg = port.background
    return [
        Parameter('amplitude', bg.amplitude, lower=0.0, vary=vary),
        Parameter('phase', bg.phase, vary=vary),
        Parameter('slope', bg.slope, vary=vary, step=1e-12),
    ]


def fit_cavity_trace(trace: Trace, port_guess: CavityPort, exclusions: Sequence[Window] = (),
                     fit_background: bool = True, residual_mode: str = 'complex') -> FitResult:
    """
    Fit the bare-cavity reflection model.

    The trace grid is relative to ``reference_hz``; the reported ``omega_r``
    is absolute.
    """
    _require_kind(trace, TraceKind.S11)
    reference = _reference(trace)
    parameters = [
        Parameter('omega_r', port_guess.omega_r - reference),
        Parameter('kappa_i', port_guess.kappa_i, lower=0.0),
        Parameter('kappa_e', port_guess.kappa_e, lower=0.0),
    ] + _background_parameters(port_guess, fit_background)
    result = fit_curve(FitProblem(CavityModel(), trace, parameters, list(exclusions), residual_mode))
    result.estimates['omega_r'] += reference
    return result


@dataclass(frozen=True)
class FeatureGuess:
    """Transparency feature located in a cavity-fit residual."""

    center: float
    width: float
    depth: float


_FILTER_BLOCK = 256
_WIDTH_FACTORS = (0.25, 0.5, 1.0, 2.0, 4.0)


def lorentzian_filter(x: np.ndarray, deviation: np.ndarray, centers: np.ndarray,
                      width: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Correlate ``deviation`` with the complex Lorentzian 1 / (1 + 2i (x - c) / width)
    for every candidate center c.

    Returns (statistic, amplitude) per center. ``statistic`` is the projection
    onto the unit-norm template, so under white noise of per-quadrature std
    sigma it is Rayleigh distributed with scale sigma. ``amplitude`` is the
    least-squares template amplitude, i.e. the deviation at the center.
    Works on non-uniform grids.
    """
    x = np.asarray(x, dtype=float)
    deviation = np.asarray(deviation)
    centers = np.asarray(centers, dtype=float)
    statistic = np.empty(centers.size)
    amplitude = np.empty(centers.size, dtype=complex)
    for start in range(0, centers.size, _FILTER_BLOCK):
        block = slice(start, start + _FILTER_BLOCK)
        template = 1.0 / (1.0 + 2j * (x[None, :] - centers[block, None]) / width)
        norm = np.sum(np.abs(template) ** 2, axis=1)
        projection = template.conj() @ deviation
        statistic[block] = np.abs(projection) / np.sqrt(norm)
        amplitude[block] = projection / norm
    return statistic, amplitude


def locate_transparency(x: np.ndarray, deviation: np.ndarray, center: float, halfwidth: float,
                        noise: float, width_guess: float, threshold: float = 5.0) -> FeatureGuess:
    """
    Matched-filter search for the transparency feature in a cavity-fit residual.

    The residual of a feature of linewidth w is a complex Lorentzian of that
    width, so it is correlated with templates of width ``width_guess`` times
    0.25 to 4 centred on every sample inside center +- halfwidth. The best
    template gives the center, width and depth. ``noise`` is the
    per-quadrature residual std (for a real residual, its rms over sqrt 2).

    Raises:
        FeatureNotFoundError: If the band holds fewer than three samples or
            the best filtered peak stays below ``threshold`` times ``noise``.
    """
    band = np.abs(x - center) <= halfwidth
    if band.sum() < 3:
        raise FeatureNotFoundError(
            f'fewer than three samples within {angular_to_hz(halfwidth):.4g} Hz of the expected feature',
            field='trace',
        )
    xb, db = x[band], deviation[band]
    if not width_guess > 0:
        width_guess = 4.0 * float(np.median(np.diff(xb)))
    best: Optional[Tuple[float, float, float, float]] = None
    for factor in _WIDTH_FACTORS:
        width = factor * width_guess
        statistic, amplitude = lorentzian_filter(xb, db, xb, width)
        k = int(np.argmax(statistic))
        if best is None or statistic[k] > best[0]:
            best = (float(statistic[k]), float(xb[k]), width, float(np.abs(amplitude[k])))
    peak, where, width, depth = best
    if not np.iscomplexobj(deviation):
        # a real dip projects onto only the absorptive half of the template
        depth *= 2.0
    if not peak > threshold * noise:
        significance = peak / noise if noise > 0 else math.inf
        raise FeatureNotFoundError(
            f'no transparency feature: filtered peak at {significance:.3g} sigma, need {threshold:g}',
            field='trace',
        )
    logger.debug(f"Transparency feature at {angular_to_hz(where):.8g} Hz, width {angular_to_hz(width):.4g} Hz, "
                 f"{peak / noise if noise > 0 else math.inf:.3g} sigma")
    return FeatureGuess(center=where, width=width, depth=depth)


def fit_eit_trace(trace: Trace, initial_device: Device, exclusions: Sequence[Window] = (),
                  fit_background: bool = True, residual_mode: str = 'complex',
                  sigma_jitter: Optional[float] = None, fit_jitter: bool = False,
                  search_halfwidth: Optional[float] = None) -> FitResult:
    """
    Two-stage fit of an EIT spectrum.

    Stage one fits the cavity alone with the transparency band excluded; the
    feature is then located in the residual and seeds gamma_i, omega_m and G
    for a joint refinement of every parameter. User exclusion windows (Hz,
    trace frame) apply to both stages.

    The result carries the absolute ``omega_r`` = omega_d + Delta_rd with the
    interval of Delta_rd.

    Raises:
        FeatureNotFoundError: If no transparency feature stands out of the noise.
    """
    _require_kind(trace, TraceKind.S11)
    omega_d = _reference(trace)
    port, mode = initial_device.port, initial_device.mode
    kappa = port.kappa

    n_d = float(trace.metadata.get('n_d', 0.0))
    gamma_guess = mode.gamma_i + 4.0 * n_d * initial_device.g0 ** 2 / kappa
    if search_halfwidth is None:
        search_halfwidth = max(25.0 * gamma_guess, hz_to_angular(2.0e3))
    band_hz = (angular_to_hz(mode.omega_m - search_halfwidth), angular_to_hz(mode.omega_m + search_halfwidth))

    model = EITModel()
    cavity_parameters = [
        Parameter('Delta_rd', port.omega_r - omega_d),
        Parameter('kappa_i', port.kappa_i, lower=0.0),
        Parameter('kappa_e', port.kappa_e, lower=0.0),
        Parameter('gamma_i', mode.gamma_i, vary=False),
        Parameter('omega_m', mode.omega_m, vary=False),
        Parameter('G', 0.0, vary=False),
    ] + _background_parameters(port, fit_background) + [Parameter('sigma_jitter', 0.0, vary=False)]
    stage_one = fit_curve(FitProblem(
        model, trace, cavity_parameters, list(exclusions) + [band_hz], residual_mode,
    ))
    logger.info(f"EIT stage one: cavity fit {'converged' if stage_one.converged else 'did not converge'}")

    x = model.abscissa(trace)
    deviation = stage_one.residuals
    if residual_mode == 'magnitude':
        # the stage-one phase is unconstrained in magnitude mode
        deviation = np.abs(trace.samples) - np.abs(trace.samples - deviation)
    outside = FitProblem(model, trace, [], list(exclusions) + [band_hz]).included()
    # per-quadrature std
    noise = float(np.sqrt(0.5 * np.mean(np.abs(deviation[outside]) ** 2))) if outside.any() else 0.0
    user_mask = FitProblem(model, trace, [], list(exclusions)).included()
    feature = locate_transparency(
        x[user_mask], deviation[user_mask], mode.omega_m, search_halfwidth, noise, gamma_guess,
    )

    est = stage_one.estimates
    kappa_fit = est['kappa_i'] + est['kappa_e']
    ratio = min(feature.depth * kappa_fit / (2.0 * est['kappa_e'] * est['amplitude']), 0.99)
    coop = ratio / (1.0 - ratio)
    gamma_i0 = feature.width / (1.0 + coop)
    G0 = math.sqrt(coop * kappa_fit * gamma_i0 / 4.0)

    jitter_start = sigma_jitter if sigma_jitter is not None else 0.0
    joint_parameters = [
        Parameter('Delta_rd', est['Delta_rd']),
        Parameter('kappa_i', est['kappa_i'], lower=0.0),
        Parameter('kappa_e', est['kappa_e'], lower=0.0),
        Parameter('gamma_i', gamma_i0, lower=0.0),
        Parameter('omega_m', feature.center),
        Parameter('G', G0, lower=0.0),
        Parameter('amplitude', est['amplitude'], lower=0.0, vary=fit_background),
        Parameter('phase', est['phase'], vary=fit_background),
        Parameter('slope', est['slope'], vary=fit_background, step=1e-12),
        Parameter('sigma_jitter', jitter_start, lower=0.0, vary=fit_jitter and jitter_start > 0),
    ]
    result = fit_curve(FitProblem(model, trace, joint_parameters, list(exclusions), residual_mode))
    result.estimates['omega_r'] = omega_d + result.estimates['Delta_rd']
    result.ci95['omega_r'] = result.ci95['Delta_rd']
    result.units['omega_r'] = 'rad/s'
    return result


# ---------------------------------------------------------------------------
# g0 from a power sweep
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CouplingEstimate:
    """Vacuum coupling rate from G = g0 sqrt(n_d)."""

    g0_hz: float
    ci95_hz: float
    loglog_slope: float
    fit: FitResult


def extract_g0(sweep: PowerSweep) -> CouplingEstimate:
    """
    Weighted fit of G = g0 sqrt(n_d) over a power sweep.

    Weights come from the per-point 95% intervals of G; the log-log slope of
    G against n_d is reported as a diagnostic (0.5 for a clean sweep).

    Raises:
        SetupError: Fewer than three sweep points.
    """
    if len(sweep.rows) < 3:
        raise SetupError(f'need at least 3 sweep points, got {len(sweep.rows)}', field='sweep')
    n_d = np.array([row.n_d for row in sweep.rows], dtype=float)
    G = np.array([row.fit.estimates['G'] for row in sweep.rows], dtype=float)
    ci = np.array([row.fit.ci95.get('G', 0.0) for row in sweep.rows], dtype=float)
    sigma = ci / config.CI_Z_SCORE if np.all(ci > 0) else None

    trace = Trace(TraceKind.TIMESERIES, n_d, G, {'axis': 'n_d'})
    model = FunctionModel(lambda n, g0: g0 * np.sqrt(n), ['g0'], name='g0', units={'g0': 'rad/s'})
    start = float(np.sum(G * np.sqrt(n_d)) / np.sum(n_d))
    problem = FitProblem(model, trace, [Parameter('g0', start, lower=0.0)], sigma=sigma)
    result = fit_curve(problem)
    slope = float(np.polyfit(np.log(n_d), np.log(G), 1)[0])
    g0 = result.estimates['g0']
    logger.info(f"g0/2pi = {angular_to_hz(g0):.4g} Hz, log-log slope {slope:.4f}")
    return CouplingEstimate(
        g0_hz=angular_to_hz(g0),
        ci95_hz=angular_to_hz(result.ci95['g0']),
        loglog_slope=slope,
        fit=result,
    )


# ---------------------------------------------------------------------------
# Noise thermometry
# ---------------------------------------------------------------------------

@dataclass
class NoiseFit:
    """Occupancies inferred from a noise spectrum."""

    n_m: float
    n_m_ci95: float
    n_wg: float
    n_cav: float
    n_mech: float
    temperatures: Dict[str, float]
    fit: FitResult
    unphysical: bool = False

    def to_report(self) -> Dict[str, Any]:
        report = self.fit.to_report()
        report['occupancies'] = {
            'n_m': self.n_m, 'n_m_ci95': self.n_m_ci95,
            'n_wg': self.n_wg, 'n_cav': self.n_cav, 'n_mech': self.n_mech,
        }
        report['temperatures_K'] = dict(self.temperatures)
        report['unphysical'] = self.unphysical
        return report


def _occupancy_coefficients(device: Device, drive: DriveTone, tie_baths: bool) -> Tuple[float, Dict[str, float]]:
    """n_m = constant + sum(coefficient * occupancy), from the linear-response solution."""
    base = mechanical_occupancy(device, NoiseBaths(), drive)
    unit = {
        'n_wg': NoiseBaths(n_wg=1.0),
        'n_cav': NoiseBaths(n_cav=1.0),
        'n_mech': NoiseBaths(n_mech=1.0),
    }
    coefficients = {name: mechanical_occupancy(device, baths, drive) - base for name, baths in unit.items()}
    if tie_baths:
        coefficients = {'n_b': coefficients['n_wg'] + coefficients['n_cav'], 'n_mech': coefficients['n_mech']}
    return base, coefficients


def fit_noise_spectrum(trace: Trace, device: Device, drive: DriveTone, tie_baths: bool = True,
                       n_add: Optional[float] = None, exclusions: Sequence[Window] = (),
                       tolerance: float = 1e-9) -> NoiseFit:
    """
    Fit bath occupancies to a measured output noise spectrum.

    Free parameters are the mechanical bath and the microwave bath(s); the
    amplifier noise is held at ``n_add`` (device value by default). The mean
    phonon number and its interval follow linearly from the fitted baths.
    A fitted occupancy below zero by more than its interval (and
    ``tolerance``) flags the fit as unphysical.
    """
    _require_kind(trace, TraceKind.PSD)
    model = NoiseModel(device, drive, tie_baths=tie_baths)
    n_add_value = device.baths.n_add if n_add is None else n_add
    floor = float(np.min(trace.samples)) - n_add_value - 1.0
    bath_start = max(floor, 0.0)
    parameters = [Parameter(name, bath_start) for name in (('n_b',) if tie_baths else ('n_wg', 'n_cav'))]
    parameters.append(Parameter('n_mech', max(device.baths.n_mech, 0.0), vary=model.G > 0))
    parameters.append(Parameter('n_add', n_add_value, vary=False))
    if model.G == 0:
        logger.warning("Drive leaves the mechanics uncoupled; n_mech held at its configured value")
    result = fit_curve(FitProblem(model, trace, parameters, list(exclusions), 'magnitude'))

    est = result.estimates
    n_wg = est['n_b'] if tie_baths else est['n_wg']
    n_cav = est['n_b'] if tie_baths else est['n_cav']
    base, coefficients = _occupancy_coefficients(device, drive, tie_baths)
    n_m = base + sum(coefficients[name] * est[name] for name in coefficients)
    gradient = np.array([coefficients.get(name, 0.0) for name in result.free])
    variance = float(gradient @ result.covariance @ gradient) if gradient.size else 0.0
    n_m_ci = config.CI_Z_SCORE * math.sqrt(max(variance, 0.0))

    unphysical = False
    for name in result.free:
        if est[name] < -max(result.ci95[name], tolerance):
            unphysical = True
            logger.warning(f"Unphysical fit: {name} = {est[name]:.4g} (95% CI {result.ci95[name]:.3g})")

    omega_r, omega_m = device.port.omega_r, device.mode.omega_m
    temperatures = {
        'T_wg': bose_temperature(omega_r, n_wg),
        'T_cav': bose_temperature(omega_r, n_cav),
        'T_mech_bath': bose_temperature(omega_m, est['n_mech']),
        'T_m': bose_temperature(omega_m, n_m),
    }
    return NoiseFit(
        n_m=float(n_m), n_m_ci95=n_m_ci, n_wg=float(n_wg), n_cav=float(n_cav),
        n_mech=float(est['n_mech']), temperatures=temperatures, fit=result, unphysical=unphysical,
    )


@dataclass(frozen=True)
class CoolingRow:
    """One drive power of a cooling curve."""

    n_d: float
    n_m: float
    n_m_ci95: float
    n_m_ideal: float
    deviation: float
    anomalous: bool


def cooling_curve_analysis(points: Sequence[Tuple[float, NoiseFit]], device: Device) -> List[CoolingRow]:
    """
    Compare fitted occupancies with the ideal cooling law n_f,m / (1 + C).

    Points deviating from the ideal curve by more than three standard
    deviations are flagged as anomalous-heating candidates.
    """
    rows = []
    n_f = device.baths.n_mech
    gamma_i = device.mode.gamma_i
    for n_d, noise_fit in points:
        gamma_em = backaction_damping(n_d, device.g0, device.port.kappa)
        ideal = n_f / (1.0 + gamma_em / gamma_i)
        deviation = noise_fit.n_m - ideal
        sigma = noise_fit.n_m_ci95 / config.CI_Z_SCORE
        anomalous = abs(deviation) > 3.0 * sigma if sigma > 0 else deviation != 0.0
        rows.append(CoolingRow(n_d, noise_fit.n_m, noise_fit.n_m_ci95, ideal, deviation, anomalous))
    return rows


# ---------------------------------------------------------------------------
# Ring-down
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RingdownFit:
    """Slow mechanical decay and the fast cavity transient after a pulse."""

    gamma_m: float
    gamma_m_ci95: float
    kappa_transient: Optional[float]
    fit: FitResult


def fit_ringdown(trace: Trace, t_off: float, settle: float = 1e-3) -> RingdownFit:
    """
    Fit the decay of the scattered-power signal after the pulse is switched off.

    Samples later than ``t_off + settle`` get an exponential-plus-offset fit
    giving gamma_m; the excess over that fit during the settle window gives
    the cavity decay rate from a log-linear fit.
    """
    _require_kind(trace, TraceKind.TIMESERIES)
    t, y = trace.grid, trace.samples
    slow = t >= t_off + settle
    if slow.sum() < 9:
        raise SetupError('too few samples after the settle time', field='settle')
    ts, ys = t[slow], y[slow]
    offset0 = float(ys[-1])
    excess = ys - offset0
    head = excess > 0.05 * excess[0] if excess[0] > 0 else np.zeros_like(excess, dtype=bool)
    if head.sum() >= 2:
        rate0 = max(-float(np.polyfit(ts[head], np.log(excess[head]), 1)[0]), 1e-6)
    else:
        rate0 = 1.0 / max(ts[-1] - ts[0], 1e-12)
    t0 = float(ts[0])
    parameters = [
        Parameter('amplitude', float(ys[0] - offset0)),
        Parameter('gamma_m', rate0, lower=0.0),
        Parameter('offset', offset0),
    ]
    exclusions = [(float(t[0]) - 1.0, float(t_off + settle) - 1e-15)]
    result = fit_curve(FitProblem(RingdownModel(t0), trace, parameters, exclusions))

    kappa_transient = None
    fast = (t > t_off) & (t < t_off + settle)
    if fast.sum() >= 3:
        residual_excess = y[fast] - RingdownModel(t0).evaluate(t[fast], result.estimates)
        positive = residual_excess > 0
        if positive.sum() >= 3:
            slope = np.polyfit(t[fast][positive], np.log(residual_excess[positive]), 1)[0]
            kappa_transient = float(-slope) if slope < 0 else None
    return RingdownFit(
        gamma_m=result.estimates['gamma_m'],
        gamma_m_ci95=result.ci95['gamma_m'],
        kappa_transient=kappa_transient,
        fit=result,
    )


# ---------------------------------------------------------------------------
# Seeded repetitions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CoverageReport:
    """How often 95% intervals contained the truth over seeded repetitions."""

    repetitions: int
    hits: Dict[str, int]
    results: Tuple[FitResult, ...]


def coverage_study(generate: Callable[[np.random.Generator], Trace],
                   fit: Callable[[Trace], FitResult],
                   truth: Dict[str, float], repetitions: int = 100, seed: int = 0,
                   workers: Optional[int] = None) -> CoverageReport:
    """
    Repeat generate-then-fit with per-repetition seeds spawned from ``seed``.

    Results do not depend on ``workers``: every repetition owns its seed and
    outputs are merged in repetition order.
    """
    children = np.random.SeedSequence(seed).spawn(repetitions)

    def run(child: np.random.SeedSequence) -> FitResult:
        return fit(generate(np.random.default_rng(child)))

    pool_size = workers or config.WORKERS
    if pool_size > 1:
        with ThreadPoolExecutor(max_workers=pool_size) as pool:
            results = tuple(pool.map(run, children))
    else:
        results = tuple(run(child) for child in children)
    hits = {name: sum(r.contains(name, value) for r in results) for name, value in truth.items()}
    logger.info(f"Coverage over {repetitions} repetitions: {hits}")
    return CoverageReport(repetitions=repetitions, hits=hits, results=results)

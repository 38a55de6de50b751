"""
File formats: device configurations, traces, tables and reports.

Device configurations are JSON in laboratory units (Hz, fF, nH, pg, dB) and
are converted to SI/rad/s here, at the boundary. Traces and tables are plain
text: ``#`` header lines carrying ``key=value`` metadata, then comma-separated
rows written with 17 significant digits so that a write/read cycle is exact.
"""
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from config import config
from models import (
    Background, CavityPort, CircuitParams, Device, GapTable, MechanicalMode, NoiseBaths, Trace, TraceKind,
)
from services.circuit import vacuum_coupling_rate
from services.physics import HBAR, bose_occupancy, db_to_factor, hz_to_angular, watts_to_dbm
from utils.errors import InvariantError, UsageError
from utils.logging_config import get_logger

logger = get_logger(__name__)

PathLike = Union[str, Path]

TRACE_COLUMNS = {
    TraceKind.S11: ('freq_hz', 're', 'im'),
    TraceKind.PSD: ('freq_hz', 'quanta'),
    TraceKind.TIMESERIES: ('t_s', 'value'),
}

_FEMTO = 1e-15
_NANO = 1e-9
_PICOGRAM = 1e-15


# ---------------------------------------------------------------------------
# Device configuration
# ---------------------------------------------------------------------------

@dataclass
class DeviceConfig:
    """Device description exactly as stored on disk (laboratory units)."""

    circuit: Dict[str, Optional[float]]
    mechanics: Dict[str, float]
    cavity: Dict[str, Any]
    baths: Dict[str, Optional[float]]
    line: Dict[str, float]
    g0_hz: Optional[float] = None
    name: str = ''
    notes: Dict[str, Any] = field(default_factory=dict)

    REQUIRED = {
        'circuit': ('L_nH', 'C_m_fF'),
        'mechanics': ('omega_m_hz', 'm_eff_pg', 'gamma_i_hz'),
        'cavity': ('omega_r_hz', 'kappa_i_hz', 'kappa_e_hz'),
        'baths': ('n_add',),
        'line': ('attenuation_db',),
    }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'DeviceConfig':
        """Build from parsed JSON, naming the first missing field."""
        for section, keys in cls.REQUIRED.items():
            if section not in data or not isinstance(data[section], dict):
                raise InvariantError(f'missing section {section!r}', field=section)
            for key in keys:
                if data[section].get(key) is None:
                    raise InvariantError('required value missing', field=f'{section}.{key}')
        return cls(
            circuit=dict(data['circuit']),
            mechanics=dict(data['mechanics']),
            cavity=dict(data['cavity']),
            baths=dict(data['baths']),
            line=dict(data['line']),
            g0_hz=data.get('g0_hz'),
            name=data.get('name', ''),
            notes=dict(data.get('notes', {})),
        )

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def canonical(self) -> str:
        """Canonical JSON text: sorted keys, two-space indent, trailing newline."""
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + '\n'

    def to_device(self) -> Device:
        """Validated ``Device`` in SI units and rad/s."""
        return device_from_config(self)


def _number(section: Dict[str, Any], key: str, where: str, default: Optional[float] = None) -> Optional[float]:
    value = section.get(key, default)
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InvariantError(f'expected a number, got {value!r}', field=f'{where}.{key}')
    return float(value)


def device_from_config(cfg: DeviceConfig) -> Device:
    """
    Convert a stored configuration into the internal ``Device``.

    g0 comes from ``g0_hz`` when given, otherwise from the circuit chain
    (which then needs ``dCm_du_F_per_m``). ``baths.n_mech`` defaults to the
    Bose occupancy of the mode at ``mechanics.bath_temperature_K``.
    """
    c, m, cav, b, line = cfg.circuit, cfg.mechanics, cfg.cavity, cfg.baths, cfg.line
    circuit = CircuitParams(
        L=_number(c, 'L_nH', 'circuit') * _NANO,
        C_m=_number(c, 'C_m_fF', 'circuit') * _FEMTO,
        C_l=_number(c, 'C_l_fF', 'circuit', 0.0) * _FEMTO,
        C_s=_number(c, 'C_s_fF', 'circuit', 0.0) * _FEMTO,
        dCm_du=_number(c, 'dCm_du_F_per_m', 'circuit'),
    )
    mode = MechanicalMode(
        omega_m=hz_to_angular(_number(m, 'omega_m_hz', 'mechanics')),
        m_eff=_number(m, 'm_eff_pg', 'mechanics') * _PICOGRAM,
        gamma_i=hz_to_angular(_number(m, 'gamma_i_hz', 'mechanics')),
        bath_temperature=_number(m, 'bath_temperature_K', 'mechanics', 0.0),
    )
    bg = cav.get('background') or {}
    port = CavityPort(
        omega_r=hz_to_angular(_number(cav, 'omega_r_hz', 'cavity')),
        kappa_i=hz_to_angular(_number(cav, 'kappa_i_hz', 'cavity')),
        kappa_e=hz_to_angular(_number(cav, 'kappa_e_hz', 'cavity')),
        background=Background(
            amplitude=_number(bg, 'amplitude', 'cavity.background', 1.0),
            phase=_number(bg, 'phase_rad', 'cavity.background', 0.0),
            slope=_number(bg, 'slope_per_hz', 'cavity.background', 0.0) / (2.0 * math.pi),
        ),
    )
    n_mech = _number(b, 'n_mech', 'baths')
    if n_mech is None:
        n_mech = bose_occupancy(mode.omega_m, mode.bath_temperature)
    baths = NoiseBaths(
        n_wg=_number(b, 'n_wg', 'baths', 0.0),
        n_cav=_number(b, 'n_cav', 'baths', 0.0),
        n_mech=n_mech,
        n_add=_number(b, 'n_add', 'baths'),
    )
    g0_hz = cfg.g0_hz
    if g0_hz is not None:
        g0 = hz_to_angular(float(g0_hz))
    else:
        g0 = vacuum_coupling_rate(circuit, mode, port.omega_r)
    return Device(
        circuit=circuit,
        mode=mode,
        port=port,
        baths=baths,
        g0=g0,
        attenuation=_number(line, 'attenuation_db', 'line'),
        gain_db=_number(line, 'gain_db', 'line', 0.0),
    )


def load_device_config(path: Optional[PathLike] = None) -> DeviceConfig:
    """
    Read and validate a device configuration.

    Falls back to ``config.DEFAULT_DEVICE_CONFIG`` (``ELECTROMECH_CONFIG``).

    Raises:
        UsageError: If the file is missing or not JSON.
        InvariantError: If a value violates a domain invariant.
    """
    path = Path(path or config.DEFAULT_DEVICE_CONFIG)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise UsageError(f'device configuration not found: {path}', field='config')
    except json.JSONDecodeError as exc:
        raise UsageError(f'{path} is not valid JSON: {exc}', field='config')
    cfg = DeviceConfig.from_dict(data)
    cfg.to_device()
    logger.debug(f"Loaded device configuration {path}")
    return cfg


def save_device_config(cfg: DeviceConfig, path: PathLike) -> Path:
    """Write the canonical form of ``cfg``."""
    path = Path(path)
    path.write_text(cfg.canonical())
    return path


# ---------------------------------------------------------------------------
# Traces and tables
# ---------------------------------------------------------------------------

def _format_value(value: Any) -> str:
    return json.dumps(_plain(value), sort_keys=True)


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _plain(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    return value


@dataclass
class Table:
    """Named numeric columns with metadata; the on-disk form of traces and result tables."""

    kind: str
    columns: List[str]
    rows: np.ndarray
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.columns = list(self.columns)
        self.rows = np.asarray(self.rows, dtype=float).reshape(-1, len(self.columns))

    def __len__(self) -> int:
        return int(self.rows.shape[0])

    def column(self, name: str) -> np.ndarray:
        if name not in self.columns:
            raise UsageError(f'table has no column {name!r}', field='columns')
        return self.rows[:, self.columns.index(name)]


def write_table(path: PathLike, table: Table) -> Path:
    """Write a header-plus-rows table in the trace format."""
    path = Path(path)
    kind, columns, rows, metadata = table.kind, table.columns, table.rows, table.metadata
    lines = [
        f'# format={config.TRACE_FORMAT_VERSION}',
        f'# kind={kind}',
        f"# columns={','.join(columns)}",
    ]
    for key in sorted(metadata or {}):
        lines.append(f'# {key}={_format_value(metadata[key])}')
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w') as handle:
        handle.write('\n'.join(lines) + '\n')
        if rows.size:
            np.savetxt(handle, rows, fmt=config.trace_float_format, delimiter=',')
    return path


def read_table(path: PathLike) -> Table:
    """
    Parse a table written by ``write_table``.

    Raises:
        UsageError: Missing file, wrong format version or ragged rows.
    """
    path = Path(path)
    if not path.exists():
        raise UsageError(f'file not found: {path}', field='trace')
    header: Dict[str, str] = {}
    metadata: Dict[str, Any] = {}
    data_lines = []
    for raw in path.read_text().splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith('#'):
            key, sep, value = line[1:].strip().partition('=')
            if not sep:
                continue
            if key in ('format', 'kind', 'columns'):
                header[key] = value
            else:
                metadata[key] = _parse_value(value)
        else:
            data_lines.append(line)
    if header.get('format') != config.TRACE_FORMAT_VERSION:
        raise UsageError(
            f"{path}: expected format {config.TRACE_FORMAT_VERSION}, got {header.get('format')!r}",
            field='format',
        )
    columns = header.get('columns', '').split(',') if header.get('columns') else []
    if not columns and not data_lines:
        raise UsageError(f'{path}: no columns and no rows', field='columns')
    if data_lines:
        rows = np.loadtxt(data_lines, delimiter=',', ndmin=2)
    else:
        rows = np.empty((0, len(columns)))
    if columns and rows.shape[1] != len(columns):
        raise UsageError(f'{path}: {rows.shape[1]} columns, header names {len(columns)}', field='columns')
    return Table(header.get('kind', ''), columns or [f'c{i}' for i in range(rows.shape[1])], rows, metadata)


def write_trace(trace: Trace, path: PathLike) -> Path:
    """Write ``trace``; complex samples become (re, im) columns."""
    columns = TRACE_COLUMNS[trace.kind]
    if trace.is_complex:
        rows = np.column_stack([trace.grid, trace.samples.real, trace.samples.imag])
    else:
        rows = np.column_stack([trace.grid, trace.samples])
    return write_table(path, Table(trace.kind.value, list(columns), rows, trace.metadata))


def read_trace(path: PathLike) -> Trace:
    """
    Read a trace file.

    Raises:
        UsageError: Unknown kind or wrong column count for the kind.
    """
    table = read_table(path)
    kind_name, metadata, rows = table.kind, table.metadata, table.rows
    try:
        kind = TraceKind(kind_name)
    except ValueError:
        raise UsageError(f'{path}: unknown trace kind {kind_name!r}', field='kind')
    arity = len(TRACE_COLUMNS[kind])
    if rows.shape[1] != arity:
        raise UsageError(f'{kind.value} traces have {arity} columns, found {rows.shape[1]}', field='kind')
    if kind == TraceKind.S11:
        samples = rows[:, 1] + 1j * rows[:, 2]
    else:
        samples = rows[:, 1]
    return Trace(kind, rows[:, 0], samples, metadata)


def load_gap_table(path: Optional[PathLike] = None) -> GapTable:
    """Gap table with columns d_nm, C_m_fF, g0_ideal_hz, g0_loaded_hz, converted to SI and rad/s."""
    rows = read_table(path or config.GAP_TABLE_PATH).rows
    if rows.shape[1] != 4:
        raise UsageError('gap table needs four columns', field='columns')
    return GapTable(
        d=tuple(rows[:, 0] * 1e-9),
        C_m=tuple(rows[:, 1] * _FEMTO),
        g0_ideal=tuple(hz_to_angular(rows[:, 2])),
        g0_loaded=tuple(hz_to_angular(rows[:, 3])),
    )


def write_json(path: PathLike, payload: Dict[str, Any]) -> Path:
    """Deterministic JSON (sorted keys, numpy scalars converted)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2, default=_plain) + '\n')
    return path


# ---------------------------------------------------------------------------
# Parsing helpers for command-line values
# ---------------------------------------------------------------------------

def parse_window(text: str) -> Tuple[float, float]:
    """Parse ``LO:HI`` (Hz) into an ordered window."""
    lo_text, sep, hi_text = text.partition(':')
    try:
        lo, hi = float(lo_text), float(hi_text)
    except ValueError:
        raise UsageError(f'exclusion window must look like LO:HI, got {text!r}', field='exclude')
    if not sep or not lo < hi:
        raise UsageError(f'exclusion window needs LO < HI, got {text!r}', field='exclude')
    return lo, hi


def parse_number_list(text: str, field_name: str) -> List[float]:
    """Comma-separated numbers; ``off`` or ``-inf`` give -inf (used for powers)."""
    values = []
    for item in text.split(','):
        item = item.strip().lower()
        if not item:
            continue
        if item in ('off', '-inf'):
            values.append(-math.inf)
            continue
        try:
            values.append(float(item))
        except ValueError:
            raise UsageError(f'not a number: {item!r}', field=field_name)
    if not values:
        raise UsageError('empty list', field=field_name)
    return values


def psd_quanta_to_dbm(quanta: np.ndarray, omega: Union[float, np.ndarray], rbw: float,
                      gain_db: float) -> np.ndarray:
    """Spectrum-analyzer power for a PSD in quanta: P = n hbar omega RBW G."""
    power = np.asarray(quanta, dtype=float) * HBAR * omega * rbw * db_to_factor(gain_db)
    return watts_to_dbm(power)


def trace_psd_dbm(trace: Trace, gain_db: float) -> np.ndarray:
    """
    Analyzer power (dBm) of a PSD trace behind an output chain of ``gain_db``.

    The bin frequency is ``reference_hz`` plus the grid offset and the
    resolution bandwidth is the trace's own ``rbw_hz``.

    Raises:
        UsageError: If the trace is not a PSD or carries no ``rbw_hz``.
    """
    if trace.kind != TraceKind.PSD:
        raise UsageError(f'dBm conversion needs a psd trace, got {trace.kind.value}', field='kind')
    rbw = trace.metadata.get('rbw_hz')
    if rbw is None:
        raise UsageError('psd trace has no rbw_hz in its header', field='rbw_hz')
    omega = hz_to_angular(float(trace.metadata.get('reference_hz', 0.0)) + trace.grid)
    return psd_quanta_to_dbm(trace.samples, omega, float(rbw), gain_db)

"""
Toolkit configuration.

Centralizes environment variables and the numerical settings shared by the
fitting engine, the simulators and the file formats.
"""
import os
from datetime import datetime, timezone
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

BASE_DIR = Path(__file__).resolve().parent


class Config:
    """Toolkit configuration loaded from environment variables."""

    # Paths
    DATA_DIR: Path = BASE_DIR / 'data'
    DEFAULT_DEVICE_CONFIG: str = os.environ.get(
        'ELECTROMECH_CONFIG', str(BASE_DIR / 'data' / 'device_soi.json')
    )
    GAP_TABLE_PATH: str = os.environ.get(
        'ELECTROMECH_GAP_TABLE', str(BASE_DIR / 'data' / 'gap_table.csv')
    )

    # Logging
    LOG_LEVEL: str = os.environ.get('ELECTROMECH_LOG_LEVEL', 'INFO')

    # Execution
    WORKERS: int = int(os.environ.get('ELECTROMECH_WORKERS', '1'))
    DEFAULT_SEED: int = int(os.environ.get('ELECTROMECH_SEED', '0'))

    # Ring-down dynamics
    OCCUPANCY_CAP: float = float(os.environ.get('ELECTROMECH_OCCUPANCY_CAP', '1e12'))

    # Levenberg-Marquardt
    LM_MAX_ITERATIONS: int = 200
    LM_FTOL: float = 1e-10
    LM_GTOL: float = 1e-12
    LM_XTOL: float = 1e-15
    LM_INITIAL_DAMPING: float = 1e-3
    LM_DAMPING_FACTOR: float = 10.0
    LM_MAX_DAMPING: float = 1e16
    CI_Z_SCORE: float = 1.96

    # File formats
    TRACE_FORMAT_VERSION: str = 'electromech-trace/1'
    SIGNIFICANT_DIGITS: int = 17

    # Synthetic-data defaults
    JITTER_SATURATION_HZ: float = 20.0
    JITTER_DIFFUSION_HZ2_PER_S: float = 4.0
    SPURIOUS_MODE_OFFSET_HZ: float = -2.4e3
    SPURIOUS_COUPLING_RATIO: float = 0.2

    # Spectrum analyzer resolution bandwidth for noise traces
    RBW_HZ: float = float(os.environ.get('ELECTROMECH_RBW_HZ', '1e3'))

    # Time written on simulated traces, seconds since the Unix epoch
    SOURCE_DATE_EPOCH: int = int(os.environ.get('SOURCE_DATE_EPOCH', '0'))

    @property
    def trace_float_format(self) -> str:
        """printf-style format giving bit-exact decimal round trips."""
        return f"%.{self.SIGNIFICANT_DIGITS}g"

    @property
    def trace_timestamp(self) -> str:
        """ISO-8601 UTC time stamped on simulated traces."""
        return datetime.fromtimestamp(self.SOURCE_DATE_EPOCH, tz=timezone.utc).isoformat()


config = Config()

"""
Shared pytest fixtures.
"""
import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from models import FitResult  # noqa: E402
from utils.helpers import load_device_config  # noqa: E402

DATA_DIR = ROOT / 'data'


@pytest.fixture
def device_config_path() -> Path:
    return DATA_DIR / 'device_soi.json'


@pytest.fixture
def device():
    """The 11 mK device: gamma_i/2pi = 0.56 Hz, g0/2pi = 24.6 Hz."""
    return load_device_config(DATA_DIR / 'device_soi.json').to_device()


@pytest.fixture
def warm_device():
    """The 211 mK device: gamma_i/2pi = 25.7 Hz, g0/2pi = 25.1 Hz."""
    return load_device_config(DATA_DIR / 'device_soi_211mK.json').to_device()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def make_fit_result(estimates, ci95=None, model='test') -> FitResult:
    """Minimal FitResult for tests that only consume estimates and intervals."""
    names = list(estimates)
    ci95 = ci95 or {name: 0.0 for name in names}
    return FitResult(
        model=model,
        estimates=dict(estimates),
        free=names,
        covariance=np.diag([(ci95[n] / 1.96) ** 2 for n in names]),
        ci95=dict(ci95),
        reduced_chi2=1.0,
        residuals=np.zeros(0),
        n_points=0,
        iterations=1,
        converged=True,
        message='test',
        units={name: 'rad/s' for name in names},
    )


@pytest.fixture
def fit_result_factory():
    return make_fit_result


"""Tests for constants, unit conversions and Bose statistics."""
import math

import numpy as np
import pytest

from services.physics import (
    apply_attenuation, bose_occupancy, bose_temperature, db_to_factor, dbm_to_watts,
    hz_to_angular, quality_factor, watts_to_dbm,
)
from utils.errors import DomainError

OMEGA_M = hz_to_angular(9.685e6)


class TestBoseOccupancy:

    def test_warm_mechanical_bath(self):
        assert bose_occupancy(OMEGA_M, 0.211) == pytest.approx(453.0, abs=1.0)

    def test_base_temperature_mechanical_bath(self):
        assert bose_occupancy(OMEGA_M, 0.011) == pytest.approx(23.2, abs=0.1)

    def test_zero_temperature_is_empty(self):
        assert bose_occupancy(OMEGA_M, 0.0) == 0.0

    def test_high_temperature_series(self):
        # x far below the series threshold: k_B T / (hbar omega) - 1/2
        omega, temperature = 1.0, 1e3
        expected = 1.380649e-23 * temperature / (1.054571817e-34 * omega) - 0.5
        assert bose_occupancy(omega, temperature) == pytest.approx(expected, rel=1e-12)

    def test_array_input(self):
        result = bose_occupancy(np.array([OMEGA_M, 2 * OMEGA_M]), 0.1)
        assert result.shape == (2,)
        assert result[0] > result[1]

    @pytest.mark.parametrize('omega, temperature', [(0.0, 1.0), (-1.0, 1.0), (OMEGA_M, -1e-3)])
    def test_domain(self, omega, temperature):
        with pytest.raises(DomainError):
            bose_occupancy(omega, temperature)

    def test_monotone_in_frequency_and_temperature(self, rng):
        omegas = np.sort(rng.uniform(1e5, 1e11, 200))
        temperatures = np.sort(rng.uniform(1e-3, 10.0, 200))
        assert np.all(np.diff(bose_occupancy(omegas, 0.05)) < 0)
        assert np.all(np.diff(bose_occupancy(OMEGA_M, temperatures)) > 0)

    def test_temperature_inverts_occupancy(self):
        for temperature in (0.011, 0.211, 1.0):
            n = bose_occupancy(OMEGA_M, temperature)
            assert bose_temperature(OMEGA_M, n) == pytest.approx(temperature, rel=1e-10)

    def test_temperature_of_empty_mode(self):
        assert bose_temperature(OMEGA_M, 0.0) == 0.0
        assert bose_temperature(OMEGA_M, -1.0) == 0.0


class TestPowerConversions:

    def test_dbm_round_trip(self):
        assert dbm_to_watts(0.0) == pytest.approx(1e-3)
        assert dbm_to_watts(30.0) == pytest.approx(1.0)
        assert watts_to_dbm(dbm_to_watts(-47.3)) == pytest.approx(-47.3)

    def test_off_maps_to_zero_power(self):
        assert dbm_to_watts(-math.inf) == 0.0
        assert watts_to_dbm(0.0) == -math.inf

    def test_attenuation(self):
        assert apply_attenuation(1.0, -30.0) == pytest.approx(1e-3)
        assert db_to_factor(-73.9) == pytest.approx(10 ** -7.39)

    def test_positive_attenuation_rejected(self):
        with pytest.raises(DomainError, match='gain is not attenuation'):
            apply_attenuation(1.0, 3.0)


def test_quality_factor():
    assert quality_factor(OMEGA_M, hz_to_angular(0.56)) == pytest.approx(1.73e7, rel=0.01)
    with pytest.raises(DomainError):
        quality_factor(OMEGA_M, 0.0)

"""Tests for configuration files, the trace format and command-line parsing helpers."""
import json
import math

import numpy as np
import pytest

from models import Trace, TraceKind
from services.physics import angular_to_hz
from services.synthesis import synthesize_noise_trace
from utils.errors import InvariantError, UsageError
from utils.helpers import (
    DeviceConfig, Table, load_device_config, load_gap_table, parse_number_list, parse_window,
    psd_quanta_to_dbm, read_table, read_trace, save_device_config, trace_psd_dbm, write_json, write_table,
    write_trace,
)


class TestDeviceConfig:

    def test_canonical_form_is_file_text(self, device_config_path):
        cfg = load_device_config(device_config_path)
        assert cfg.canonical() == device_config_path.read_text()

    def test_save_then_load(self, device_config_path, tmp_path):
        cfg = load_device_config(device_config_path)
        saved = save_device_config(cfg, tmp_path / 'copy.json')
        assert load_device_config(saved) == cfg

    def test_conversion_to_device(self, device):
        assert angular_to_hz(device.port.omega_r) == pytest.approx(8.872e9)
        assert angular_to_hz(device.port.kappa) == pytest.approx(4.5e6)
        assert angular_to_hz(device.g0) == pytest.approx(24.6)
        assert device.mode.m_eff == pytest.approx(42.9e-15)
        assert device.attenuation == -73.9

    def test_mechanical_bath_from_temperature(self, device):
        assert device.baths.n_mech == pytest.approx(23.2, abs=0.1)

    def test_missing_field_is_named(self, device_config_path, tmp_path):
        data = json.loads(device_config_path.read_text())
        del data['cavity']['kappa_i_hz']
        path = tmp_path / 'broken.json'
        path.write_text(json.dumps(data))
        with pytest.raises(InvariantError, match='cavity.kappa_i_hz') as excinfo:
            load_device_config(path)
        assert excinfo.value.field == 'cavity.kappa_i_hz'

    def test_missing_section(self):
        with pytest.raises(InvariantError, match='circuit'):
            DeviceConfig.from_dict({})

    def test_invalid_value(self, device_config_path, tmp_path):
        data = json.loads(device_config_path.read_text())
        data['cavity']['kappa_e_hz'] = -1.0
        path = tmp_path / 'negative.json'
        path.write_text(json.dumps(data))
        with pytest.raises(InvariantError):
            load_device_config(path)

    def test_non_numeric_value(self, device_config_path, tmp_path):
        data = json.loads(device_config_path.read_text())
        data['mechanics']['omega_m_hz'] = 'fast'
        path = tmp_path / 'text.json'
        path.write_text(json.dumps(data))
        with pytest.raises(InvariantError, match='mechanics.omega_m_hz'):
            load_device_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(UsageError) as excinfo:
            load_device_config(tmp_path / 'nowhere.json')
        assert excinfo.value.exit_code == 2

    def test_not_json(self, tmp_path):
        path = tmp_path / 'bad.json'
        path.write_text('{not json')
        with pytest.raises(UsageError):
            load_device_config(path)


class TestTraceFormat:

    def test_complex_trace_survives_write_and_read(self, tmp_path):
        grid = np.linspace(-1e7, 1e7, 7)
        samples = np.exp(1j * grid / 3e6) * (0.1 + 1 / 3)
        trace = Trace(TraceKind.S11, grid, samples, {'reference_hz': 8.872e9, 'noise': 0.01})
        loaded = read_trace(write_trace(trace, tmp_path / 'cavity.csv'))
        assert loaded.kind == TraceKind.S11
        np.testing.assert_array_equal(loaded.grid, grid)
        np.testing.assert_array_equal(loaded.samples, samples)
        assert loaded.metadata == {'noise': 0.01, 'reference_hz': 8.872e9}

    def test_header_layout(self, tmp_path):
        trace = Trace(TraceKind.PSD, [1.0, 2.0], [31.5, 32.0], {'zeta': True, 'alpha': 'x'})
        lines = write_trace(trace, tmp_path / 'psd.csv').read_text().splitlines()
        assert lines[:5] == [
            '# format=electromech-trace/1',
            '# kind=psd',
            '# columns=freq_hz,quanta',
            '# alpha="x"',
            '# zeta=true',
        ]
        assert lines[5] == '1,31.5'

    def test_empty_trace(self, tmp_path):
        path = write_trace(Trace(TraceKind.S11, [], []), tmp_path / 'empty.csv')
        assert len(read_trace(path)) == 0

    def test_wrong_format_version(self, tmp_path):
        path = tmp_path / 'old.csv'
        path.write_text('# format=electromech-trace/0\n# kind=psd\n# columns=freq_hz,quanta\n1,2\n')
        with pytest.raises(UsageError, match='format'):
            read_trace(path)

    def test_unknown_kind(self, tmp_path):
        path = write_table(tmp_path / 'table.csv', Table('cooling', ['a', 'b'], [[1.0, 2.0]]))
        with pytest.raises(UsageError, match='cooling'):
            read_trace(path)

    def test_column_count_must_match_kind(self, tmp_path):
        path = write_table(tmp_path / 'psd.csv', Table('psd', ['f', 'a', 'b'], [[1.0, 2.0, 3.0]]))
        with pytest.raises(UsageError, match='2 columns'):
            read_trace(path)

    def test_ragged_header(self, tmp_path):
        path = tmp_path / 'ragged.csv'
        path.write_text('# format=electromech-trace/1\n# kind=psd\n# columns=freq_hz,quanta\n1,2,3\n')
        with pytest.raises(UsageError):
            read_table(path)

    def test_missing_trace_file(self, tmp_path):
        with pytest.raises(UsageError, match='not found'):
            read_trace(tmp_path / 'absent.csv')

    def test_table_column_lookup(self):
        table = Table('cooling', ['n_d', 'n_m'], [[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(table.column('n_m'), [2.0, 4.0])
        with pytest.raises(UsageError):
            table.column('missing')


def test_gap_table_loads():
    table = load_gap_table()
    assert len(table.d) == 5
    assert table.d[0] == pytest.approx(50e-9)
    assert angular_to_hz(table.g0_loaded[1]) == pytest.approx(29.3)


def test_write_json_is_sorted_and_handles_numpy(tmp_path):
    path = write_json(tmp_path / 'report.json', {'b': np.float64(1.5), 'a': np.arange(2)})
    text = path.read_text()
    assert text.index('"a"') < text.index('"b"')
    assert json.loads(text) == {'a': [0, 1], 'b': 1.5}


class TestParsing:

    def test_window(self):
        assert parse_window('9.6823e6:9.6835e6') == (9.6823e6, 9.6835e6)

    @pytest.mark.parametrize('text', ['5:1', '1:1', 'a:b', '12', '1:2:3'])
    def test_bad_window(self, text):
        with pytest.raises(UsageError):
            parse_window(text)

    def test_number_list(self):
        assert parse_number_list('-20, -10,0', 'powers') == [-20.0, -10.0, 0.0]

    def test_off_is_minus_infinity(self):
        assert parse_number_list('off,-inf,3', 'powers') == [-math.inf, -math.inf, 3.0]

    @pytest.mark.parametrize('text', ['', ' , ', 'ten'])
    def test_bad_number_list(self, text):
        with pytest.raises(UsageError, match='powers'):
            parse_number_list(text, 'powers')


def test_psd_in_dbm():
    omega = 2 * math.pi * 8.872e9
    dbm = psd_quanta_to_dbm(np.array([1.0, 10.0]), omega, 1.0, 0.0)
    assert dbm[1] - dbm[0] == pytest.approx(10.0)
    assert dbm[0] == pytest.approx(10 * math.log10(1.054571817e-34 * omega / 1e-3))


class TestTracePower:

    @pytest.fixture
    def psd_trace(self, device, rng):
        tone = device.tone(0.0, device.mode.omega_m)
        grid = np.linspace(-2e3, 2e3, 41)
        return synthesize_noise_trace(device, device.baths, tone, grid, rng, rbw_hz=250.0)

    def test_rbw_survives_write_and_read(self, psd_trace, tmp_path):
        path = write_trace(psd_trace, tmp_path / 'psd.csv')
        assert read_trace(path).metadata['rbw_hz'] == 250.0

    def test_uses_trace_rbw_and_absolute_frequency(self, psd_trace, device):
        omega = 2 * math.pi * (psd_trace.metadata['reference_hz'] + psd_trace.grid)
        expected = psd_quanta_to_dbm(psd_trace.samples, omega, 250.0, device.gain_db)
        np.testing.assert_allclose(trace_psd_dbm(psd_trace, device.gain_db), expected, rtol=0, atol=1e-12)

    def test_quadrupling_rbw_adds_six_db(self, psd_trace):
        wide = Trace(TraceKind.PSD, psd_trace.grid, psd_trace.samples, dict(psd_trace.metadata, rbw_hz=1000.0))
        shift = trace_psd_dbm(wide, 0.0) - trace_psd_dbm(psd_trace, 0.0)
        np.testing.assert_allclose(shift, 10 * math.log10(4.0))

    def test_needs_rbw(self, psd_trace):
        bare = Trace(TraceKind.PSD, psd_trace.grid, psd_trace.samples, {'reference_hz': 8.872e9})
        with pytest.raises(UsageError, match='rbw_hz'):
            trace_psd_dbm(bare, 0.0)

    def test_needs_psd(self):
        trace = Trace(TraceKind.S11, np.array([0.0, 1.0]), np.array([1.0 + 0j, 1.0 + 0j]), {'rbw_hz': 1.0})
        with pytest.raises(UsageError, match='psd'):
            trace_psd_dbm(trace, 0.0)

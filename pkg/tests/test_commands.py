"""End-to-end tests of the command-line interface through ``app.main``."""
import json
import logging
import math

import pytest

from app import create_app, main
from config import config
from models import Trace, TraceKind
from services.circuit import coil_inductance_estimate, spiral_geometry
from utils.helpers import read_table, read_trace, write_trace
from utils.logging_config import ROOT_LOGGER


@pytest.fixture(autouse=True)
def fresh_log_handlers():
    """Let every CLI run attach its handler to the current (captured) stderr."""
    logger = logging.getLogger(ROOT_LOGGER)
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
    yield
    for handler in list(logger.handlers):
        logger.removeHandler(handler)


def _run(*argv):
    return main([str(a) for a in argv])


def test_parser_lists_every_command():
    parser = create_app()
    for name in ('simulate', 'fit', 'cooling-curve', 'calibrate-photons', 'ringdown', 'extract-g0', 'plot'):
        args = {
            'simulate': ['--kind', 'cavity'],
            'fit': ['--kind', 'cavity', '--trace', 'x.csv'],
            'cooling-curve': ['--powers', '0'],
            'calibrate-photons': ['--power', '0'],
            'ringdown': [],
            'extract-g0': ['--traces', 'a', 'b', 'c'],
            'plot': ['--input', 'x.csv', '--style', 's11'],
        }[name]
        assert callable(parser.parse_args([name] + args).handler)


def test_missing_subcommand_is_a_usage_error():
    with pytest.raises(SystemExit) as excinfo:
        main([])
    assert excinfo.value.code == 2


class TestCalibrate:

    @pytest.mark.parametrize('argv', [
        ['calibrate-photons', '--power', '22', '--format', 'json'],
        ['--format', 'json', 'calibrate-photons', '--power', '22'],
    ])
    def test_photon_number(self, argv, capsys):
        assert main(argv) == 0
        report = json.loads(capsys.readouterr().out)
        assert report['n_d'] == pytest.approx(4.75e6, rel=0.03)
        assert report['detuning_hz'] == pytest.approx(9.685e6)

    def test_text_summary(self, capsys):
        assert _run('calibrate-photons', '--power', '-20') == 0
        assert 'intra-cavity photons' in capsys.readouterr().out

    def test_drive_off(self, capsys):
        assert _run('calibrate-photons', '--power', 'off', '--format', 'json') == 0
        assert json.loads(capsys.readouterr().out)['n_d'] == 0.0

    def test_missing_config(self, tmp_path, capsys):
        assert _run('--config', tmp_path / 'nowhere.json', 'calibrate-photons', '--power', '0') == 2
        assert 'not found' in capsys.readouterr().err

    def test_gap_table_sets_coupling(self, capsys):
        assert _run('calibrate-photons', '--power', '22', '--gap-nm', '60', '--format', 'json') == 0
        report = json.loads(capsys.readouterr().out)
        assert report['gap_nm'] == 60.0
        assert report['C_m_fF'] == pytest.approx(2.76)
        assert report['g0_hz'] == pytest.approx(29.3)
        assert report['participation_ratio'] == pytest.approx(2.76 / 6.94)
        assert report['gamma_em_hz'] == pytest.approx(4 * report['n_d'] * 29.3 ** 2 / 4.5e6, rel=1e-9)

    def test_gap_outside_table(self, capsys):
        assert _run('calibrate-photons', '--power', '0', '--gap-nm', '500') == 4
        assert 'outside table range' in capsys.readouterr().err

    def test_coil_estimate(self, capsys):
        assert _run('calibrate-photons', '--power', '0', '--coil', '10,300,10,5', '--format', 'json') == 0
        report = json.loads(capsys.readouterr().out)
        d_avg, rho = spiral_geometry(10, 300e-6, 10e-6, 5e-6)
        assert report['L_nH'] == pytest.approx(coil_inductance_estimate(10, d_avg, rho) * 1e9)
        expected = 1 / (2 * math.pi * math.sqrt(report['L_nH'] * 1e-9 * 6.94e-15))
        assert report['circuit_resonance_hz'] == pytest.approx(expected, rel=1e-9)

    def test_coil_needs_four_numbers(self, capsys):
        assert _run('calibrate-photons', '--power', '0', '--coil', '10,300') == 2

    def test_invalid_config(self, device_config_path, tmp_path):
        data = json.loads(device_config_path.read_text())
        data['cavity']['kappa_i_hz'] = -5.0
        path = tmp_path / 'bad.json'
        path.write_text(json.dumps(data))
        assert _run('calibrate-photons', '--power', '0', '--config', path) == 4


class TestSimulate:

    def test_same_seed_same_bytes(self, tmp_path):
        for name in ('a', 'b'):
            assert _run('simulate', '--kind', 'eit', '--photons', '1000,4000', '--noise', '0.01',
                        '--seed', '7', '--out', tmp_path / name) == 0
        for stem in ('eit_000.csv', 'eit_001.csv', 'manifest.json'):
            assert (tmp_path / 'a' / stem).read_bytes() == (tmp_path / 'b' / stem).read_bytes()

    def test_different_seed_different_noise(self, tmp_path):
        _run('simulate', '--kind', 'cavity', '--noise', '0.01', '--seed', '1', '--out', tmp_path / 'a')
        _run('simulate', '--kind', 'cavity', '--noise', '0.01', '--seed', '2', '--out', tmp_path / 'b')
        assert (tmp_path / 'a' / 'cavity_000.csv').read_bytes() != (tmp_path / 'b' / 'cavity_000.csv').read_bytes()

    def test_manifest(self, tmp_path):
        assert _run('simulate', '--kind', 'noise', '--powers', 'off,0', '--out', tmp_path) == 0
        manifest = json.loads((tmp_path / 'manifest.json').read_text())
        assert manifest['files'] == ['noise_000.csv', 'noise_001.csv']
        assert manifest['photons'][0] == 0.0
        assert manifest['device']['name'] == 'soi-membrane-11mK'
        assert manifest['timestamp'] == config.trace_timestamp
        assert manifest['options']['rbw_hz'] == config.RBW_HZ
        trace = read_trace(tmp_path / 'noise_001.csv')
        assert trace.metadata['rbw_hz'] == config.RBW_HZ
        assert trace.metadata['timestamp'] == config.trace_timestamp

    def test_timestamp_follows_source_date_epoch(self, tmp_path, monkeypatch):
        monkeypatch.setattr(config, 'SOURCE_DATE_EPOCH', 1_700_000_000)
        assert _run('simulate', '--kind', 'cavity', '--out', tmp_path) == 0
        assert read_trace(tmp_path / 'cavity_000.csv').metadata['timestamp'] == '2023-11-14T22:13:20+00:00'

    def test_spectral_kinds_need_a_drive(self, tmp_path):
        assert _run('simulate', '--kind', 'eit', '--out', tmp_path) == 2

    def test_ringdown_trace(self, tmp_path):
        assert _run('simulate', '--kind', 'ringdown', '--out', tmp_path) == 0
        trace = read_trace(tmp_path / 'ringdown_000.csv')
        assert trace.kind == TraceKind.TIMESERIES
        assert trace.metadata['pulse_off_s'] == 2.0


class TestFit:

    def test_cavity_round_trip(self, tmp_path, capsys):
        _run('simulate', '--kind', 'cavity', '--noise', '0.01', '--out', tmp_path)
        assert _run('fit', '--kind', 'cavity', '--trace', tmp_path / 'cavity_000.csv', '--out', tmp_path) == 0
        report = json.loads((tmp_path / 'fit_report.json').read_text())
        parameters = report['parameters']
        assert report['converged']
        assert parameters['kappa_i']['value'] == pytest.approx(1.8e6, rel=0.02)
        assert parameters['kappa_e']['value'] == pytest.approx(2.7e6, rel=0.02)
        assert parameters['omega_r']['value'] == pytest.approx(8.872e9, abs=2e4)
        assert parameters['omega_r']['unit'] == 'Hz'
        residual = read_trace(tmp_path / 'residual.csv')
        assert len(residual) == len(read_trace(tmp_path / 'cavity_000.csv'))
        assert 'kappa_i' in capsys.readouterr().out

    def test_csv_report(self, tmp_path):
        _run('simulate', '--kind', 'cavity', '--noise', '0.01', '--out', tmp_path)
        assert _run('fit', '--kind', 'cavity', '--trace', tmp_path / 'cavity_000.csv',
                    '--out', tmp_path, '--format', 'csv') == 0
        lines = (tmp_path / 'fit_report.csv').read_text().splitlines()
        assert lines[0] == 'name,value,ci95,unit,free'
        assert any(line.startswith('kappa_i,') for line in lines)

    def test_excluded_spurious_mode(self, tmp_path):
        _run('simulate', '--kind', 'eit', '--photons', '1000', '--spurious', '--noise', '1e-4', '--out', tmp_path)
        assert _run('fit', '--kind', 'eit', '--trace', tmp_path / 'eit_000.csv', '--out', tmp_path,
                    '--exclude', '9.6823e6:9.6835e6') == 0
        report = json.loads((tmp_path / 'fit_report.json').read_text())
        assert report['exclusions_hz'] == [[9.6823e6, 9.6835e6]]
        assert report['parameters']['G']['value'] == pytest.approx(1000 ** 0.5 * 24.6, rel=0.01)

    def test_noise_fit(self, tmp_path):
        _run('simulate', '--kind', 'noise', '--powers', '0', '--noise', '0.05', '--out', tmp_path)
        assert _run('fit', '--kind', 'noise', '--trace', tmp_path / 'noise_000.csv', '--out', tmp_path) == 0
        report = json.loads((tmp_path / 'fit_report.json').read_text())
        assert report['occupancies']['n_mech'] == pytest.approx(23.2, rel=0.1)
        assert 'unphysical' in report

    def test_empty_trace(self, tmp_path):
        path = write_trace(Trace(TraceKind.S11, [], [], {'reference_hz': 8.872e9}), tmp_path / 'empty.csv')
        assert _run('fit', '--kind', 'cavity', '--trace', path, '--out', tmp_path) == 2

    def test_kind_mismatch(self, tmp_path):
        _run('simulate', '--kind', 'noise', '--powers', '0', '--out', tmp_path)
        assert _run('fit', '--kind', 'cavity', '--trace', tmp_path / 'noise_000.csv', '--out', tmp_path) == 2

    def test_no_transparency_feature(self, tmp_path, capsys):
        _run('simulate', '--kind', 'cavity', '--noise', '0.01', '--out', tmp_path)
        assert _run('fit', '--kind', 'eit', '--trace', tmp_path / 'cavity_000.csv', '--out', tmp_path) == 3
        assert 'error:' in capsys.readouterr().err

    def test_bad_exclusion_window(self, tmp_path):
        _run('simulate', '--kind', 'cavity', '--out', tmp_path)
        assert _run('fit', '--kind', 'cavity', '--trace', tmp_path / 'cavity_000.csv', '--out', tmp_path,
                    '--exclude', '5:1') == 2


class TestCoolingCurve:

    def test_table(self, tmp_path, capsys):
        assert _run('cooling-curve', '--powers', 'off,-10,0,10,20', '--out', tmp_path, '--plot') == 0
        table = read_table(tmp_path / 'cooling_curve.csv')
        assert table.kind == 'cooling'
        ideal = table.column('n_m_ideal')
        assert ideal[0] == pytest.approx(23.2, abs=0.1)
        assert all(b < a for a, b in zip(ideal, ideal[1:]))
        assert table.column('n_m')[-1] >= ideal[-1]
        assert (tmp_path / 'cooling_curve.svg').exists()
        assert 'x cooling' in capsys.readouterr().out

    def test_json_format(self, tmp_path):
        assert _run('cooling-curve', '--powers', '-10,0', '--out', tmp_path, '--format', 'json') == 0
        payload = json.loads((tmp_path / 'cooling_curve.json').read_text())
        assert payload['columns'][:2] == ['power_dbm', 'n_d']
        assert len(payload['rows']) == 2

    def test_powers_must_increase(self, tmp_path):
        assert _run('cooling-curve', '--powers', '0,-10', '--out', tmp_path) == 2

    def test_fitted_occupancies(self, tmp_path):
        _run('simulate', '--kind', 'noise', '--powers', '0,10', '--noise', '0.05', '--out', tmp_path)
        traces = [tmp_path / 'noise_000.csv', tmp_path / 'noise_001.csv']
        assert _run('cooling-curve', '--powers', '0,10', '--traces', *traces, '--out', tmp_path) == 0
        table = read_table(tmp_path / 'cooling_curve.csv')
        assert table.columns[-4:] == ['n_m_fit', 'n_m_fit_ci95', 'deviation', 'anomalous']
        assert table.column('n_m_fit')[1] < table.column('n_m_fit')[0]

    def test_trace_count_must_match(self, tmp_path):
        _run('simulate', '--kind', 'noise', '--powers', '0', '--out', tmp_path)
        assert _run('cooling-curve', '--powers', '0,10', '--traces', tmp_path / 'noise_000.csv',
                    '--out', tmp_path) == 2


class TestRingdown:

    def test_simulated_decay(self, tmp_path):
        assert _run('ringdown', '--out', tmp_path, '--plot') == 0
        report = json.loads((tmp_path / 'ringdown_report.json').read_text())
        assert report['gamma_m_hz'] == pytest.approx(0.722, rel=0.02)
        assert report['gamma_i_hz'] == pytest.approx(0.56, rel=0.05)
        assert report['q_m'] == pytest.approx(1.73e7, rel=0.05)
        assert (tmp_path / 'ringdown_trace.csv').exists()
        assert (tmp_path / 'ringdown.svg').exists()

    def test_fit_existing_trace(self, tmp_path):
        _run('simulate', '--kind', 'ringdown', '--noise', '5', '--out', tmp_path)
        assert _run('ringdown', '--trace', tmp_path / 'ringdown_000.csv', '--out', tmp_path) == 0
        report = json.loads((tmp_path / 'ringdown_report.json').read_text())
        assert report['gamma_m_hz'] == pytest.approx(0.722, abs=0.05)

    def test_trace_without_pulse_time(self, tmp_path):
        path = write_trace(Trace(TraceKind.TIMESERIES, [0.0, 1.0, 2.0], [3.0, 2.0, 1.0]), tmp_path / 'bare.csv')
        assert _run('ringdown', '--trace', path, '--out', tmp_path) == 2


class TestExtractG0:

    def test_power_sweep(self, tmp_path):
        _run('simulate', '--kind', 'eit', '--photons', '1000,4000,16000', '--noise', '1e-4', '--out', tmp_path)
        traces = [tmp_path / f'eit_{i:03d}.csv' for i in range(3)]
        assert _run('extract-g0', '--traces', *traces, '--out', tmp_path, '--plot') == 0
        report = json.loads((tmp_path / 'g0_report.json').read_text())
        assert report['g0_hz'] == pytest.approx(24.6, rel=0.02)
        assert report['loglog_slope'] == pytest.approx(0.5, abs=0.01)
        sweep = read_table(tmp_path / 'g0_sweep.csv')
        assert list(sweep.column('n_d')) == pytest.approx([1000, 4000, 16000], rel=1e-9)
        assert (tmp_path / 'g0.svg').exists()

    def test_needs_three_traces(self, tmp_path):
        assert _run('extract-g0', '--traces', 'a.csv', 'b.csv', '--out', tmp_path) == 2


def test_plot_command(tmp_path):
    _run('simulate', '--kind', 'cavity', '--out', tmp_path)
    assert _run('plot', '--input', tmp_path / 'cavity_000.csv', '--style', 's11', '--out', tmp_path) == 0
    assert (tmp_path / 'cavity_000_plot.svg').exists()
    assert (tmp_path / 'cavity_000_plot.csv').exists()
    assert _run('plot', '--input', tmp_path / 'cavity_000.csv', '--style', 'psd', '--out', tmp_path) == 2


def test_plot_psd_in_dbm(tmp_path):
    _run('simulate', '--kind', 'noise', '--powers', '0', '--out', tmp_path)
    assert _run('plot', '--input', tmp_path / 'noise_000.csv', '--style', 'psd_dbm', '--out', tmp_path) == 0
    companion = read_table(tmp_path / 'noise_000_plot.csv')
    assert companion.columns == ['freq_hz', 'dbm']
    assert companion.metadata['gain_db'] == 52.0
    assert companion.metadata['rbw_hz'] == config.RBW_HZ

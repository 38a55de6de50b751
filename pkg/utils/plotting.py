"""
SVG rendering of traces and result tables.

Every figure is written next to a CSV companion holding exactly the plotted
numbers, so a figure can always be regenerated or re-analysed. Output is
byte-stable: the SVG hash salt is fixed and no creation date is embedded.
"""
from pathlib import Path
from typing import Union

import matplotlib

matplotlib.use('Agg')

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

from models import Trace, TraceKind  # noqa: E402
from utils.errors import UsageError  # noqa: E402
from utils.helpers import PathLike, Table, trace_psd_dbm, write_table, write_trace  # noqa: E402

STYLES = ('s11', 'psd', 'psd_dbm', 'timeseries', 'cooling', 'g0')

_STYLE_KIND = {
    's11': TraceKind.S11,
    'psd': TraceKind.PSD,
    'psd_dbm': TraceKind.PSD,
    'timeseries': TraceKind.TIMESERIES,
}

plt.rcParams.update({
    'svg.hashsalt': 'electromech',
    'svg.fonttype': 'none',
    'figure.figsize': (6.0, 4.0),
    'axes.grid': True,
    'grid.alpha': 0.3,
})

PlotSource = Union[Trace, Table]


def _trace_figure(trace: Trace, style: str, gain_db: float) -> Figure:
    expected = _STYLE_KIND[style]
    if trace.kind != expected:
        raise UsageError(f'style {style!r} needs a {expected.value} trace, got {trace.kind.value}', field='style')
    fig, ax = plt.subplots()
    reference = float(trace.metadata.get('reference_hz', 0.0))
    if style == 's11':
        magnitude_db = 20.0 * np.log10(np.maximum(np.abs(trace.samples), 1e-300))
        ax.plot(trace.grid, magnitude_db, lw=1.0)
        ax.set_xlabel(f'frequency - {reference:.6g} Hz' if reference else 'frequency (Hz)')
        ax.set_ylabel('|S11| (dB)')
    elif style == 'psd':
        ax.plot(trace.grid, trace.samples, lw=1.0)
        ax.set_xlabel(f'frequency - {reference:.6g} Hz' if reference else 'frequency (Hz)')
        ax.set_ylabel('noise (quanta)')
    elif style == 'psd_dbm':
        ax.plot(trace.grid, trace_psd_dbm(trace, gain_db), lw=1.0)
        ax.set_xlabel(f'frequency - {reference:.6g} Hz' if reference else 'frequency (Hz)')
        ax.set_ylabel(f"power in {float(trace.metadata['rbw_hz']):.4g} Hz RBW (dBm)")
    else:
        ax.plot(trace.grid, trace.samples, lw=1.0)
        if np.all(trace.samples > 0):
            ax.set_yscale('log')
        ax.set_xlabel('time (s)')
        ax.set_ylabel('scattered power (quanta/s)')
    return fig


def _cooling_figure(table: Table) -> Figure:
    fig, ax = plt.subplots()
    n_d = table.column('n_d')
    ax.plot(n_d, table.column('n_m'), 'o', label='n_m')
    ax.plot(n_d, table.column('n_m_ideal'), '--', label='n_f,m / (1 + C)')
    ax.set_xscale('log')
    ax.set_yscale('log')
    ax.set_xlabel('drive photons n_d')
    ax.set_ylabel('phonon occupancy n_m')
    ax.legend()
    return fig


def _g0_figure(table: Table) -> Figure:
    fig, ax = plt.subplots()
    n_d = table.column('n_d')
    G = table.column('G_hz')
    ax.errorbar(n_d, G, yerr=table.column('G_ci95_hz'), fmt='o', label='fitted G/2pi')
    g0 = table.metadata.get('g0_hz')
    if g0 is not None:
        grid = np.geomspace(n_d.min(), n_d.max(), 100)
        ax.plot(grid, float(g0) * np.sqrt(grid), '--', label=f'g0/2pi = {float(g0):.4g} Hz')
    ax.set_xscale('log')
    ax.set_yscale('log')
    ax.set_xlabel('drive photons n_d')
    ax.set_ylabel('G/2pi (Hz)')
    ax.legend()
    return fig


def build_figure(source: PlotSource, style: str, gain_db: float = 0.0) -> Figure:
    """
    Figure for ``source`` in one of ``STYLES``; ``gain_db`` is the output-chain gain
    used by the psd_dbm style.

    Raises:
        UsageError: Unknown style, empty input, or input not matching the style.
    """
    if style not in STYLES:
        raise UsageError(f'unknown plot style {style!r}; choose from {", ".join(STYLES)}', field='style')
    if len(source) == 0:
        raise UsageError('nothing to plot: input is empty', field='input')
    if style in _STYLE_KIND:
        if not isinstance(source, Trace):
            raise UsageError(f'style {style!r} plots traces', field='style')
        return _trace_figure(source, style, gain_db)
    if not isinstance(source, Table):
        raise UsageError(f'style {style!r} plots result tables', field='style')
    return _cooling_figure(source) if style == 'cooling' else _g0_figure(source)


def export_plot(source: PlotSource, style: str, out: PathLike, gain_db: float = 0.0) -> Path:
    """Write ``out`` (SVG) and its CSV companion; returns the SVG path."""
    out = Path(out).with_suffix('.svg')
    out.parent.mkdir(parents=True, exist_ok=True)
    fig = build_figure(source, style, gain_db)
    try:
        fig.tight_layout()
        fig.savefig(out, format='svg', metadata={'Date': None})
    finally:
        plt.close(fig)
    companion = out.with_suffix('.csv')
    if style == 'psd_dbm':
        metadata = dict(source.metadata, gain_db=gain_db)
        rows = np.column_stack([source.grid, trace_psd_dbm(source, gain_db)])
        write_table(companion, Table('psd-dbm', ['freq_hz', 'dbm'], rows, metadata))
    elif isinstance(source, Trace):
        write_trace(source, companion)
    else:
        write_table(companion, source)
    return out

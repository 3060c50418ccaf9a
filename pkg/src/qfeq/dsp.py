"""Linear receiver DSP: CD compensation, matched filtering, CPE and sync.

The receive chain assumed by the rest of the package is::

    cd_compensate -> matched_filter_downsample -> carrier_phase_estimate
                  -> synchronize_scale

After synchronization the symbol instants sit on even sample indices of the
2-samples-per-symbol field handed to the equalizer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft
import scipy.signal

from . import kernels
from .errors import ConfigurationError, LengthError, SynchronizationError
from .fiber import C_M_S, _FFT_WORKERS
from .signal import ComplexField, Qam16Constellation, SymbolFrame, rrc_taps


@dataclass(frozen=True)
class DspConfig:
    """Receiver DSP settings."""

    total_cd_ps_nm: float = 1260.0
    cpe_block_len: int = 128
    cpe_test_phases: int = 64
    sps_out: int = 2
    pilot_len: int = 256
    wavelength_um: float = 1.55

    def __post_init__(self):
        if self.cpe_test_phases < 4:
            raise ConfigurationError("cpe_test_phases must be >= 4")
        if self.sps_out not in (1, 2):
            raise ConfigurationError("sps_out must be 1 or 2")
        if self.cpe_block_len < 16:
            raise ConfigurationError("cpe_block_len must be >= 16")


def cd_compensate(
    field: ComplexField, total_cd_ps_nm: float, wavelength_um: float = 1.55
) -> ComplexField:
    """Apply the exact inverse chromatic-dispersion transfer function.

    ``total_cd_ps_nm`` is the accumulated dispersion D*L of the link being
    inverted; zero is the identity.
    """
    if total_cd_ps_nm == 0:
        return field.copy()
    lam = wavelength_um * 1e-6
    dl_si = total_cd_ps_nm * 1e-3  # s/m
    beta2_l = -dl_si * lam**2 / (2.0 * np.pi * C_M_S)  # s^2, accumulated
    n = len(field)
    omega = 2.0 * np.pi * sfft.fftfreq(n, d=1.0 / field.sample_rate)
    h_inv = np.exp(-1j * (beta2_l / 2.0) * omega**2)
    e = np.vstack([field.x, field.y])
    e = sfft.ifft(sfft.fft(e, axis=-1, workers=_FFT_WORKERS) * h_inv, axis=-1, workers=_FFT_WORKERS)
    return ComplexField(e[0], e[1], field.sample_rate)


def matched_filter_downsample(
    field: ComplexField,
    rolloff: float,
    sps_in: int,
    sps_out: int,
    span_symbols: int = 65,
) -> ComplexField:
    """RRC matched filter followed by sampling-phase search and decimation.

    The sampling phase (offset modulo ``sps_in``) is chosen to maximize the
    mean power of symbol-spaced samples; decimation starts there, so symbol
    instants land on output indices 0, sps_out, 2*sps_out, ...
    """
    if sps_in % sps_out != 0:
        raise ConfigurationError(f"sps_in={sps_in} not divisible by sps_out={sps_out}")
    taps = rrc_taps(rolloff, sps_in, span_symbols)
    xs = scipy.signal.fftconvolve(field.x, taps, mode="full")
    ys = scipy.signal.fftconvolve(field.y, taps, mode="full")
    if sps_in == sps_out:
        return ComplexField(xs, ys, field.sample_rate)
    m = sps_in // sps_out
    power = np.abs(xs) ** 2 + np.abs(ys) ** 2
    metrics = [power[p::sps_in].mean() for p in range(sps_in)]
    phase = int(np.argmax(metrics))
    return ComplexField(xs[phase::m], ys[phase::m], field.sample_rate / m)


def _test_phase_grid(n_phases: int) -> np.ndarray:
    return np.linspace(-np.pi / 4.0, np.pi / 4.0, n_phases, endpoint=False)


def _unwrap_quadrant(phases: np.ndarray) -> np.ndarray:
    """Remove pi/2 jumps between consecutive block phases (cycle slips)."""
    out = phases.copy()
    for b in range(1, out.shape[0]):
        d = out[b] - out[b - 1]
        out[b] -= np.pi / 2.0 * np.round(d / (np.pi / 2.0))
    return out


def cpe_phases(
    symbols: np.ndarray,
    cfg: DspConfig,
    constellation: Qam16Constellation | None = None,
) -> np.ndarray:
    """Per-block carrier phase estimates (one value per symbol).

    Blind phase search over ``cfg.cpe_test_phases`` candidate rotations per
    block of ``cfg.cpe_block_len`` symbols, refined by a decision-directed
    fit, then continuity-unwrapped across blocks.  The returned phase is the
    rotation to apply (multiply by ``exp(1j*phase)``); a global quadrant
    ambiguity remains until resolved against known symbols.
    """
    constellation = constellation or Qam16Constellation()
    symbols = np.asarray(symbols, dtype=np.complex128)
    n = symbols.shape[0]
    bl = cfg.cpe_block_len
    if n < bl:
        raise LengthError(f"need at least one block of {bl} symbols, got {n}")
    grid = _test_phase_grid(cfg.cpe_test_phases)
    levels = constellation.grid_levels()
    block_phases = kernels.bps_block_phases(symbols[: (n // bl) * bl], bl, grid, levels)
    block_phases = _unwrap_quadrant(block_phases)
    per_symbol = np.repeat(block_phases, bl)
    if per_symbol.shape[0] < n:  # trailing partial block reuses the last estimate
        pad = np.full(n - per_symbol.shape[0], block_phases[-1])
        per_symbol = np.concatenate([per_symbol, pad])
    return per_symbol


def carrier_phase_estimate(
    symbols: np.ndarray,
    cfg: DspConfig,
    pilot_ref: np.ndarray | None = None,
    constellation: Qam16Constellation | None = None,
) -> np.ndarray:
    """Blind-phase-search carrier recovery over a symbol sequence.

    When ``pilot_ref`` (known transmit symbols for the head of the
    sequence) is given, the global pi/2 ambiguity is resolved against it;
    otherwise the output may be rotated by a quadrant, which downstream
    synchronization absorbs into its complex gain.
    """
    symbols = np.asarray(symbols, dtype=np.complex128)
    phases = cpe_phases(symbols, cfg, constellation)
    out = symbols * np.exp(1j * phases)
    if pilot_ref is not None:
        pilot_ref = np.asarray(pilot_ref, dtype=np.complex128)
        p = min(pilot_ref.shape[0], out.shape[0])
        cands = [out[:p] * (1j**k) for k in range(4)]
        errs = [np.sum(np.abs(c - pilot_ref[:p]) ** 2) for c in cands]
        out = out * (1j ** int(np.argmin(errs)))
    return out


@dataclass
class SyncResult:
    frame: SymbolFrame
    delay: int
    scale_x: complex
    scale_y: complex
    peak_corr: float

    @property
    def scale(self) -> complex:
        return self.scale_x


def synchronize_scale(
    rx: SymbolFrame, tx: SymbolFrame, min_overlap: int = 1000, threshold: float = 0.2
) -> SyncResult:
    """Align a received frame to the transmitted one and equalize its gain.

    Delay comes from the peak of the joint cross-correlation magnitude;
    per-polarization complex gains come from least squares against the
    transmitted symbols (this also absorbs any residual quadrant rotation
    left by carrier recovery).  Raises
    :class:`~qfeq.errors.SynchronizationError` when the normalized peak is
    below ``threshold``.
    """
    n_rx, n_tx = len(rx), len(tx)
    if min(n_rx, n_tx) < min_overlap:
        raise LengthError(f"need >= {min_overlap} overlapping symbols")
    cx = scipy.signal.correlate(rx.x, tx.x, mode="full", method="fft")
    cy = scipy.signal.correlate(rx.y, tx.y, mode="full", method="fft")
    mag = np.abs(cx) + np.abs(cy)
    idx = int(np.argmax(mag))
    delay = idx - (n_tx - 1)

    # normalized peak against the energy of the overlapped segments
    norm = np.sqrt(np.sum(np.abs(rx.x) ** 2) * np.sum(np.abs(tx.x) ** 2)) + np.sqrt(
        np.sum(np.abs(rx.y) ** 2) * np.sum(np.abs(tx.y) ** 2)
    )
    peak = float(mag[idx] / norm) if norm > 0 else 0.0
    if peak < threshold:
        raise SynchronizationError(
            f"correlation peak {peak:.4f} below threshold {threshold}"
        )

    if delay >= 0:
        rx_x, rx_y = rx.x[delay:], rx.y[delay:]
        tx_x, tx_y = tx.x, tx.y
    else:
        rx_x, rx_y = rx.x, rx.y
        tx_x, tx_y = tx.x[-delay:], tx.y[-delay:]
    n = min(rx_x.shape[0], tx_x.shape[0])
    if n < min_overlap:
        raise SynchronizationError("aligned overlap too short")
    rx_x, rx_y, tx_x, tx_y = rx_x[:n], rx_y[:n], tx_x[:n], tx_y[:n]

    sx = np.vdot(tx_x, rx_x) / np.vdot(tx_x, tx_x)
    sy = np.vdot(tx_y, rx_y) / np.vdot(tx_y, tx_y)
    aligned = SymbolFrame(rx_x / sx, rx_y / sy)
    return SyncResult(aligned, int(delay), complex(sx), complex(sy), peak)

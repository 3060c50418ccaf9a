"""Bit/symbol mapping, RRC pulse shaping and frame types for dual-pol 16-QAM.

Conventions used throughout the package:

* A "frame" carries one complex symbol sequence per polarization (x, y).
* Bits are uint8 arrays of 0/1.  Each symbol slot consumes 8 bits: the
  first 4 map to the x symbol, the next 4 to the y symbol (MSB first).
* The constellation lives on the {-3,-1,+1,+3}^2 grid scaled to unit
  average symbol energy, with per-axis Gray labeling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, LengthError

_GRAY2LEVEL = np.array([-3, -1, 3, 1], dtype=np.float64)  # index = 2-bit Gray code
_QAM16_SCALE = 1.0 / np.sqrt(10.0)


def _build_qam16_points() -> np.ndarray:
    pts = np.empty(16, dtype=np.complex128)
    for label in range(16):
        i_bits = (label >> 2) & 0b11
        q_bits = label & 0b11
        pts[label] = (_GRAY2LEVEL[i_bits] + 1j * _GRAY2LEVEL[q_bits]) * _QAM16_SCALE
    return pts


@dataclass(frozen=True)
class Qam16Constellation:
    """16-QAM constellation with a fixed Gray bit labeling.

    ``points[label]`` is the complex symbol assigned to the 4-bit ``label``;
    the in-phase axis is addressed by the two most significant bits and the
    quadrature axis by the two least significant ones, each through the
    2-bit Gray code 00,01,11,10 -> -3,-1,+1,+3 (before unit-energy scaling).
    """

    points: np.ndarray = field(default_factory=_build_qam16_points)

    @property
    def bits_per_symbol(self) -> int:
        return 4

    @property
    def min_distance(self) -> float:
        return 2.0 * _QAM16_SCALE

    def grid_levels(self) -> np.ndarray:
        """Sorted per-axis amplitude levels (used by decision slicers)."""
        return np.sort(np.unique(self.points.real))


@dataclass
class SymbolFrame:
    """Equal-length complex symbol sequences for the two polarizations."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.complex128)
        self.y = np.asarray(self.y, dtype=np.complex128)
        if self.x.shape != self.y.shape or self.x.ndim != 1:
            raise LengthError("x and y symbol sequences must be 1-D and equal length")

    def __len__(self) -> int:
        return self.x.shape[0]


@dataclass
class ComplexField:
    """Sampled dual-polarization complex baseband waveform."""

    x: np.ndarray
    y: np.ndarray
    sample_rate: float  # Hz

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.complex128)
        self.y = np.asarray(self.y, dtype=np.complex128)
        if self.x.shape != self.y.shape or self.x.ndim != 1:
            raise LengthError("x and y sample sequences must be 1-D and equal length")
        if self.sample_rate <= 0:
            raise ConfigurationError("sample_rate must be positive")

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def center_power(self) -> float:
        """Current average power (both polarizations combined) in mW."""
        return float(np.mean(np.abs(self.x) ** 2 + np.abs(self.y) ** 2)) * 1e3

    def copy(self) -> "ComplexField":
        return ComplexField(self.x.copy(), self.y.copy(), self.sample_rate)


def average_power_w(field: ComplexField) -> float:
    """Average total power across both polarizations, in watts."""
    return float(np.mean(np.abs(field.x) ** 2 + np.abs(field.y) ** 2))


def scale_to_power_dbm(field: ComplexField, power_dbm: float) -> ComplexField:
    """Return a copy scaled so total average power equals ``power_dbm``."""
    target_w = 10.0 ** (power_dbm / 10.0) * 1e-3
    cur = average_power_w(field)
    if cur <= 0:
        raise ConfigurationError("cannot scale an all-zero field")
    g = np.sqrt(target_w / cur)
    return ComplexField(field.x * g, field.y * g, field.sample_rate)


# ---------------------------------------------------------------------------
# Bit <-> symbol mapping
# ---------------------------------------------------------------------------


def map_bits_to_symbols(bits: np.ndarray, constellation: Qam16Constellation) -> SymbolFrame:
    """Map a flat bit sequence to a dual-polarization 16-QAM symbol frame.

    Bits are consumed 8 at a time: 4 for the x symbol, 4 for the y symbol,
    MSB first.  The bit count must be divisible by 8.
    """
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    if bits.size % 8 != 0:
        raise LengthError(f"bit count {bits.size} not divisible by 8")
    nsym = bits.size // 8
    grouped = bits.reshape(nsym, 8)
    weights = np.array([8, 4, 2, 1], dtype=np.uint8)
    x_labels = grouped[:, :4] @ weights
    y_labels = grouped[:, 4:] @ weights
    return SymbolFrame(constellation.points[x_labels], constellation.points[y_labels])


def demap_symbols(symbols: np.ndarray, constellation: Qam16Constellation) -> np.ndarray:
    """Nearest-neighbor detection of a symbol sequence to 4-bit labels' bits.

    Each symbol maps to the label of the Euclidean-nearest constellation
    point; exact ties resolve to the lowest constellation index.  Returns a
    flat uint8 bit array, 4 bits per symbol, MSB first.
    """
    symbols = np.asarray(symbols, dtype=np.complex128).ravel()
    labels = np.empty(symbols.shape[0], dtype=np.int64)
    chunk = 1 << 16
    pts = constellation.points
    for lo in range(0, symbols.shape[0], chunk):
        seg = symbols[lo : lo + chunk]
        d = np.abs(seg[:, None] - pts[None, :])
        labels[lo : lo + seg.shape[0]] = np.argmin(d, axis=1)
    out = np.empty((symbols.shape[0], 4), dtype=np.uint8)
    for b in range(4):
        out[:, b] = (labels >> (3 - b)) & 1
    return out.ravel()


def frame_to_bits(frame: SymbolFrame, constellation: Qam16Constellation) -> np.ndarray:
    """Inverse of :func:`map_bits_to_symbols` for noiseless frames."""
    xb = demap_symbols(frame.x, constellation).reshape(-1, 4)
    yb = demap_symbols(frame.y, constellation).reshape(-1, 4)
    return np.concatenate([xb, yb], axis=1).ravel()


# ---------------------------------------------------------------------------
# RRC pulse shaping
# ---------------------------------------------------------------------------


def rrc_taps(rolloff: float, sps: int, span_symbols: int) -> np.ndarray:
    """Unit-energy root raised cosine filter taps.

    Parameters
    ----------
    rolloff : float
        Roll-off factor in (0, 1].
    sps : int
        Samples per symbol (>= 2).
    span_symbols : int
        Filter span in symbols; must be odd so the filter has a well-defined
        center tap and a half-integer-free group delay in symbols.
    """
    if not 0.0 < rolloff <= 1.0:
        raise ConfigurationError(f"rolloff {rolloff} outside (0, 1]")
    if sps < 2:
        raise ConfigurationError("sps must be >= 2")
    if span_symbols % 2 == 0:
        raise ConfigurationError("span_symbols must be odd")
    n = span_symbols * sps + 1
    t = (np.arange(n) - (n - 1) / 2) / sps  # in symbol periods
    b = rolloff
    taps = np.empty(n, dtype=np.float64)
    for k, tk in enumerate(t):
        if abs(tk) < 1e-12:
            taps[k] = 1.0 + b * (4.0 / np.pi - 1.0)
        elif abs(abs(tk) - 1.0 / (4.0 * b)) < 1e-9:
            taps[k] = (b / np.sqrt(2.0)) * (
                (1.0 + 2.0 / np.pi) * np.sin(np.pi / (4.0 * b))
                + (1.0 - 2.0 / np.pi) * np.cos(np.pi / (4.0 * b))
            )
        else:
            num = np.sin(np.pi * tk * (1.0 - b)) + 4.0 * b * tk * np.cos(
                np.pi * tk * (1.0 + b)
            )
            den = np.pi * tk * (1.0 - (4.0 * b * tk) ** 2)
            taps[k] = num / den
    return taps / np.sqrt(np.sum(taps**2))


def upsample(x: np.ndarray, factor: int) -> np.ndarray:
    """Insert ``factor - 1`` zeros after every sample."""
    x = np.asarray(x)
    out = np.zeros(x.shape[0] * factor, dtype=x.dtype)
    out[::factor] = x
    return out


def rrc_shape(
    frame: SymbolFrame,
    rolloff: float,
    sps: int,
    span_symbols: int,
    baud_hz: float = 34.4e9,
) -> ComplexField:
    """Upsample a symbol frame and apply the RRC pulse shaping filter.

    Output uses full linear convolution, so the waveform is longer than
    ``len(frame) * sps`` by the filter length minus one; the shaping filter
    group delay is ``(span_symbols * sps) // 2`` samples.
    """
    from scipy.signal import fftconvolve

    taps = rrc_taps(rolloff, sps, span_symbols)
    xs = fftconvolve(upsample(frame.x, sps), taps, mode="full")
    ys = fftconvolve(upsample(frame.y, sps), taps, mode="full")
    return ComplexField(xs, ys, sample_rate=baud_hz * sps)

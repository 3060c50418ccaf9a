"""The low-complexity sliding-window equalizer network.

Architecture: one complex convolution per polarization, each realized as a
pair of real 41-tap filters (no activation), both polarizations' outputs
concatenated into a joint dense tanh layer, then a linear head producing
four reals — the real and imaginary parts of one output symbol per
polarization.  Sliding the input window forward by two samples (one symbol
at 2 samples/symbol) produces the next symbol pair.

A model is either full precision or quantized.  Quantized models carry
their weights already snapped to per-layer codebooks plus a ``quant``
attachment describing the codebooks and the activation quantizers; the
float execution path is shared, with input/activation quantization applied
when present.  The bit-exact integer path lives in
:mod:`qfeq.fixedpoint`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import LengthError, ShapeError
from .signal import ComplexField, SymbolFrame

CONV_TAPS = 41


@dataclass
class InputWindow:
    """Four equal-length real vectors: re/im of the x and y polarizations."""

    x_re: np.ndarray
    x_im: np.ndarray
    y_re: np.ndarray
    y_im: np.ndarray

    def __post_init__(self):
        shapes = {v.shape for v in (self.x_re, self.x_im, self.y_re, self.y_im)}
        if len(shapes) != 1:
            raise ShapeError("all four window vectors must have equal length")
        if self.x_re.shape[0] < CONV_TAPS:
            raise ShapeError(f"window must hold at least {CONV_TAPS} samples")

    def stack(self) -> np.ndarray:
        return np.stack([self.x_re, self.x_im, self.y_re, self.y_im])

    @classmethod
    def from_field_slice(cls, fld: ComplexField, start: int, length: int) -> "InputWindow":
        sl = slice(start, start + length)
        return cls(fld.x[sl].real, fld.x[sl].imag, fld.y[sl].real, fld.y[sl].imag)


@dataclass
class ModelParams:
    """All equalizer weights, optionally tagged with quantization metadata.

    ``conv_x``/``conv_y`` are (2, 41) arrays holding the real-part filter in
    row 0 and the imaginary-part filter in row 1.  When ``share_filters`` is
    set, ``conv_y`` is the same array object as ``conv_x``.
    """

    conv_x: np.ndarray
    conv_y: np.ndarray
    dense_w: np.ndarray
    dense_b: np.ndarray
    head_w: np.ndarray
    head_b: np.ndarray
    window_len: int = 81
    share_filters: bool = False
    quant: Optional[object] = None  # ModelQuantization, attached by qfeq.quantize

    def __post_init__(self):
        for name in ("conv_x", "conv_y"):
            arr = getattr(self, name)
            if arr.shape != (2, CONV_TAPS):
                raise ShapeError(f"{name} must have shape (2, {CONV_TAPS})")
        if self.window_len < CONV_TAPS:
            raise ShapeError("window_len must be >= the filter length")
        n_dense, dense_in = self.dense_w.shape
        if dense_in != self.dense_in:
            raise ShapeError(
                f"dense_w expects {self.dense_in} inputs for window_len "
                f"{self.window_len}, got {dense_in}"
            )
        if self.dense_b.shape != (n_dense,):
            raise ShapeError("dense_b length must match dense_w rows")
        if self.head_w.shape != (4, n_dense):
            raise ShapeError("head_w must map dense outputs to 4 reals")
        if self.head_b.shape != (4,):
            raise ShapeError("head_b must have 4 entries")

    @property
    def dense_in(self) -> int:
        return 4 * (self.window_len - CONV_TAPS + 1)

    @property
    def repr_tag(self) -> str:
        return "quantized" if self.quant is not None else "full-precision"

    def layer_arrays(self) -> dict[str, np.ndarray]:
        """Named weight tensors; conv_y omitted when filters are shared."""
        out = {"conv_x": self.conv_x}
        if not self.share_filters:
            out["conv_y"] = self.conv_y
        out.update(
            dense_w=self.dense_w,
            dense_b=self.dense_b,
            head_w=self.head_w,
            head_b=self.head_b,
        )
        return out

    def weight_count(self) -> int:
        return sum(a.size for a in self.layer_arrays().values())

    def copy(self, drop_quant: bool = False) -> "ModelParams":
        conv_x = self.conv_x.copy()
        conv_y = conv_x if self.share_filters else self.conv_y.copy()
        return replace(
            self,
            conv_x=conv_x,
            conv_y=conv_y,
            dense_w=self.dense_w.copy(),
            dense_b=self.dense_b.copy(),
            head_w=self.head_w.copy(),
            head_b=self.head_b.copy(),
            quant=None if drop_quant else self.quant,
        )


def init_params(
    window_len: int = 81,
    dense_neurons: int = 100,
    share_filters: bool = False,
    seed: int = 0,
) -> ModelParams:
    """Fresh full-precision parameters.

    The convolution starts as a center spike (identity filter) so the
    untrained network already passes the window center through; dense and
    head layers get scaled uniform (Glorot-style) initialization.
    """
    rng = np.random.default_rng(seed)
    dense_in = 4 * (window_len - CONV_TAPS + 1)

    def conv_init():
        c = 0.01 * rng.standard_normal((2, CONV_TAPS))
        c[0, CONV_TAPS // 2] += 1.0
        return c

    conv_x = conv_init()
    conv_y = conv_x if share_filters else conv_init()
    lim_d = np.sqrt(6.0 / (dense_in + dense_neurons))
    lim_h = np.sqrt(6.0 / (dense_neurons + 4))
    return ModelParams(
        conv_x=conv_x,
        conv_y=conv_y,
        dense_w=rng.uniform(-lim_d, lim_d, (dense_neurons, dense_in)),
        dense_b=np.zeros(dense_neurons),
        head_w=rng.uniform(-lim_h, lim_h, (4, dense_neurons)),
        head_b=np.zeros(4),
        window_len=window_len,
        share_filters=share_filters,
    )


# ---------------------------------------------------------------------------
# Forward paths
# ---------------------------------------------------------------------------


def complex_conv(u_re: np.ndarray, u_im: np.ndarray, filters: np.ndarray):
    """Valid complex convolution via four real convolutions.

    ``filters`` is (2, 41): the real-part and imaginary-part filter.  Output
    follows ``numpy.convolve`` semantics (kernel flipped, no padding) and has
    length ``len(u) - 40``.  Returns ``(re, im)``.
    """
    if u_re.shape[-1] < CONV_TAPS:
        raise ShapeError("input shorter than the filter")
    h_re, h_im = filters[0], filters[1]
    rr = np.convolve(u_re, h_re, mode="valid")
    ii = np.convolve(u_im, h_im, mode="valid")
    ri = np.convolve(u_im, h_re, mode="valid")
    ir = np.convolve(u_re, h_im, mode="valid")
    return rr - ii, ri + ir


def _batch_conv(u: np.ndarray, filters: np.ndarray):
    """complex_conv over a batch of windows, u: (B, 2, W) [re, im] rows."""
    j = u.shape[-1] - CONV_TAPS + 1
    win = np.lib.stride_tricks.sliding_window_view(u, CONV_TAPS, axis=-1)[..., :j, :]
    flipped = filters[:, ::-1]
    rr = win[:, 0] @ flipped[0]
    ii = win[:, 1] @ flipped[1]
    ri = win[:, 1] @ flipped[0]
    ir = win[:, 0] @ flipped[1]
    return rr - ii, ri + ir


def _maybe_quant(values: np.ndarray, params: ModelParams, point: str) -> np.ndarray:
    if params.quant is None:
        return values
    return params.quant.quantize_activation(point, values)


def forward_batch(windows: np.ndarray, params: ModelParams) -> np.ndarray:
    """Forward pass over stacked windows (B, 4, window_len) -> (B, 4)."""
    if windows.ndim != 3 or windows.shape[1] != 4:
        raise ShapeError("windows must have shape (B, 4, window_len)")
    if windows.shape[2] != params.window_len:
        raise ShapeError(
            f"window length {windows.shape[2]} != model window_len {params.window_len}"
        )
    w = _maybe_quant(windows, params, "input")
    cx_re, cx_im = _batch_conv(w[:, 0:2], params.conv_x)
    cy_re, cy_im = _batch_conv(w[:, 2:4], params.conv_y)
    z = np.concatenate([cx_re, cx_im, cy_re, cy_im], axis=1)
    z = _maybe_quant(z, params, "conv_out")
    a = np.tanh(z @ params.dense_w.T + params.dense_b)
    a = _maybe_quant(a, params, "tanh_out")
    return a @ params.head_w.T + params.head_b


def forward(window: InputWindow, params: ModelParams) -> np.ndarray:
    """Equalize one window to four reals (x re/im, y re/im)."""
    return forward_batch(window.stack()[None, ...], params)[0]


def slide_equalize(
    field: ComplexField, params: ModelParams, window_len: int | None = None
) -> SymbolFrame:
    """Run the equalizer across a 2-samples-per-symbol field.

    One output symbol per polarization is produced per 2-sample shift;
    output length is ``(len(field) - window_len)//2 + 1``.  Equivalent to
    stacking :func:`forward` over every window, but computed with one
    convolution over the whole field.
    """
    wl = window_len or params.window_len
    if wl != params.window_len:
        raise ShapeError("window_len differs from the model's window_len")
    n = len(field)
    if n < wl:
        raise LengthError(f"field of {n} samples shorter than one window ({wl})")

    u = np.stack([field.x.real, field.x.imag, field.y.real, field.y.imag])
    u = _maybe_quant(u, params, "input")
    n_out = (n - wl) // 2 + 1
    j = wl - CONV_TAPS + 1

    def pol(re, im, filters):
        fr, fi = complex_conv(re, im, filters)
        vr = np.lib.stride_tricks.sliding_window_view(fr, j)[::2][:n_out]
        vi = np.lib.stride_tricks.sliding_window_view(fi, j)[::2][:n_out]
        return vr, vi

    cx_re, cx_im = pol(u[0], u[1], params.conv_x)
    cy_re, cy_im = pol(u[2], u[3], params.conv_y)
    z = np.concatenate([cx_re, cx_im, cy_re, cy_im], axis=1)
    z = _maybe_quant(z, params, "conv_out")
    a = np.tanh(z @ params.dense_w.T + params.dense_b)
    a = _maybe_quant(a, params, "tanh_out")
    y = a @ params.head_w.T + params.head_b
    return SymbolFrame(y[:, 0] + 1j * y[:, 1], y[:, 2] + 1j * y[:, 3])


def center_symbol_offset(window_len: int) -> int:
    """Symbol index (relative to the window start) that the output targets."""
    return ((window_len - 1) // 2) // 2

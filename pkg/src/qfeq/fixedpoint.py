"""Integer and shift-add inference for quantized models.

The engine executes the same network as the float path but represents every
weight and activation by its codebook integer:

* uniform codebooks accumulate weight-code x activation-code products in
  integer arithmetic (one general multiply per tap);
* PoT / APoT codebooks replace each product by shifts and adds of the
  activation code — the weight path never invokes a general multiplier,
  which an instrumented counter verifies;
* all full-precision scales, range offsets and biases apply after the
  accumulation, once per output.

Accumulators are 32-bit by contract.  Every layer's worst-case accumulation
magnitude (sum of absolute addends, an order-independent bound) is checked
against ``INT32_MAX``; exceeding it raises
:class:`~qfeq.errors.AccumulatorOverflowError` instead of wrapping.

Agreement contract: outputs match the dequantize-then-float-multiply
reference (:func:`qfeq.model.forward` on the same quantized model) to well
within 2^-20; the only divergence source is float64 rounding of the final
rescales.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import AccumulatorOverflowError, StateError
from .kernels import INT32_MAX
from .model import CONV_TAPS, InputWindow, ModelParams
from .quantize import Codebook, ModelQuantization


@dataclass
class OpCounts:
    """Arithmetic-operation tally of one forward pass (weight path only)."""

    weight_mults: int = 0
    shift_adds: int = 0

    def __iadd__(self, other: "OpCounts"):
        self.weight_mults += other.weight_mults
        self.shift_adds += other.shift_adds
        return self


def _require_fixed_point_book(name: str, book: Codebook):
    if book.scheme != "uniform" and book.dyadic_num is None:
        raise StateError(
            f"layer {name}: codebook has no fixed-point decomposition"
        )


@dataclass
class _TensorCode:
    """Integer encoding of one weight tensor."""

    book: Codebook
    codes: np.ndarray  # uniform: symbol indices; pot/apot: uncentered numerators
    shifts: np.ndarray | None  # pot/apot per-weight term shifts
    signs: np.ndarray | None
    row_code_sum: np.ndarray  # per-row sum of codes (exact int)


def _encode_tensor(name: str, arr: np.ndarray, book: Codebook) -> _TensorCode:
    _require_fixed_point_book(name, book)
    _, idx = book.quantize_indices(arr.ravel())
    if not np.array_equal(book.symbols[idx], arr.ravel()):
        raise StateError(f"layer {name}: weights are not codebook members")
    idx = idx.reshape(arr.shape)
    if book.scheme == "uniform":
        codes = idx.astype(np.int64)
        shifts = signs = None
    else:
        codes = (book.dyadic_num[idx] + book.center_num).astype(np.int64)
        shifts = book.term_shifts[idx].astype(np.int8)
        signs = book.term_signs[idx].astype(np.int8)
    return _TensorCode(book, codes, shifts, signs, codes.sum(axis=-1))


def _check_accum(worst: int, where: str):
    if worst > INT32_MAX:
        raise AccumulatorOverflowError(
            f"{where}: worst-case accumulation {worst} exceeds the 32-bit"
            " accumulator contract"
        )


def _popcount_shifts(value: int) -> list[int]:
    return [k for k in range(value.bit_length()) if (value >> k) & 1]


class FixedPointEngine:
    """Bit-faithful integer execution of a quantized model."""

    def __init__(self, params: ModelParams):
        if params.quant is None:
            raise StateError("integer path requires a quantized model")
        quant: ModelQuantization = params.quant
        for point in ("input", "conv_out", "tanh_out"):
            if quant.act_books.get(point) is None:
                raise StateError(
                    "integer path requires activation codebooks; quantize with"
                    " activation_bits set"
                )
        self.params = params
        self.quant = quant
        self.in_book = quant.act_books["input"]
        self.z_book = quant.act_books["conv_out"]
        self.a_book = quant.act_books["tanh_out"]
        self.w = {
            name: _encode_tensor(name, arr, quant.weight_books[name])
            for name, arr in params.layer_arrays().items()
            if name in quant.weight_books and not name.endswith("_b")
        }
        if "conv_y" not in self.w:  # shared filters
            self.w["conv_y"] = self.w["conv_x"]
        self.counts = OpCounts()

    # -- generic affine MAC helpers ------------------------------------

    def _mac(self, code: _TensorCode, pm: np.ndarray, where: str):
        """Row sums of quantized-weight x quantized-activation products.

        ``pm`` holds activation codes per (row, input).  Returns the exact
        integer pieces needed for the affine recombination: (S_wp, S_p).
        """
        if code.book.scheme == "uniform":
            acc, worst, mults = kernels.int_mac(code.codes, pm)
            self.counts.weight_mults += int(mults)
        else:
            acc, worst, ops = kernels.shiftadd_mac(code.shifts, code.signs, pm)
            self.counts.shift_adds += int(ops)
            center = code.book.center_num
            if center:
                sh = _popcount_shifts(center)
                s_p = pm.sum(axis=1)
                corr = np.zeros_like(acc)
                for k in sh:
                    corr += s_p << k
                    self.counts.shift_adds += int(s_p.size)
                worst = worst + np.abs(corr).max()
                acc = acc - corr
        _check_accum(int(worst), where)
        return acc, pm.sum(axis=1)

    def _affine_value(self, code: _TensorCode, acc, s_p, n_in, act_book):
        """Recombine integer sums with the books' scales and offsets."""
        t, d = act_book.step, act_book.a
        book = code.book
        if book.scheme == "uniform":
            s, a = book.step, book.a
            return (
                s * t * acc
                + s * d * code.row_code_sum
                + a * t * s_p
                + n_in * a * d
            )
        g2 = book.gamma * 2.0 ** -float(book.dyadic_exp)
        c = book.center_num
        return (
            g2 * (t * acc + d * (code.row_code_sum - n_in * c))
            + book.beta * (t * s_p + d * n_in)
        )

    # -- layers ---------------------------------------------------------

    def _conv_pol(self, p_re, p_im, code: _TensorCode):
        """Integer complex convolution of one polarization.

        ``p_re``/``p_im`` are input codes; taps row 0 is the real filter,
        row 1 the imaginary one.  Follows numpy.convolve flip semantics.
        """
        j = p_re.shape[0] - CONV_TAPS + 1
        win_re = np.lib.stride_tricks.sliding_window_view(p_re, CONV_TAPS)[:j, ::-1]
        win_im = np.lib.stride_tricks.sliding_window_view(p_im, CONV_TAPS)[:j, ::-1]

        tap = _TensorCode(
            code.book,
            np.broadcast_to(code.codes[0], (j, CONV_TAPS)),
            None if code.shifts is None else np.broadcast_to(code.shifts[0], (j, CONV_TAPS, code.shifts.shape[-1])),
            None if code.signs is None else np.broadcast_to(code.signs[0], (j, CONV_TAPS, code.signs.shape[-1])),
            np.broadcast_to(code.row_code_sum[0], (j,)),
        )
        tap_im = _TensorCode(
            code.book,
            np.broadcast_to(code.codes[1], (j, CONV_TAPS)),
            None if code.shifts is None else np.broadcast_to(code.shifts[1], (j, CONV_TAPS, code.shifts.shape[-1])),
            None if code.signs is None else np.broadcast_to(code.signs[1], (j, CONV_TAPS, code.signs.shape[-1])),
            np.broadcast_to(code.row_code_sum[1], (j,)),
        )

        def mac(tc, pm, tag):
            acc, s_p = self._mac(tc, pm, tag)
            return self._affine_value(tc, acc, s_p, CONV_TAPS, self.in_book)

        rr = mac(tap, win_re, "conv re*re")
        ii = mac(tap_im, win_im, "conv im*im")
        ri = mac(tap, win_im, "conv re*im")
        ir = mac(tap_im, win_re, "conv im*re")
        return rr - ii, ri + ir

    def _dense_like(self, code: _TensorCode, p_vec, act_book, tag):
        pm = np.broadcast_to(p_vec, code.codes.shape)
        acc, s_p = self._mac(code, pm, tag)
        return self._affine_value(code, acc, s_p, p_vec.shape[0], act_book)

    def forward(self, window: InputWindow) -> np.ndarray:
        """Integer-path equalization of one window to 4 reals."""
        w = window.stack()
        if w.shape[1] != self.params.window_len:
            raise StateError("window length does not match the model")
        _, p_in = self.in_book.quantize_indices(w.ravel())
        p_in = p_in.reshape(w.shape).astype(np.int64)

        cx_re, cx_im = self._conv_pol(p_in[0], p_in[1], self.w["conv_x"])
        cy_re, cy_im = self._conv_pol(p_in[2], p_in[3], self.w["conv_y"])
        z = np.concatenate([cx_re, cx_im, cy_re, cy_im])

        _, p_z = self.z_book.quantize_indices(z)
        d = self._dense_like(self.w["dense_w"], p_z.astype(np.int64), self.z_book, "dense")
        a = np.tanh(d + self.params.dense_b)

        _, p_a = self.a_book.quantize_indices(a)
        y = self._dense_like(self.w["head_w"], p_a.astype(np.int64), self.a_book, "head")
        return y + self.params.head_b

    def reset_counts(self) -> None:
        self.counts = OpCounts()


def forward_quantized_int(window: InputWindow, params: ModelParams) -> np.ndarray:
    """One-shot integer-path forward pass (builds an engine per call)."""
    return FixedPointEngine(params).forward(window)

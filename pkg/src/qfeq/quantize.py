"""Codebook construction, quantizers, PTQ, and model-size accounting.

Three codebook families are supported:

``uniform``
    Evenly spaced symbols between calibrated bounds ``[a, c]``.

``pot``
    Power-of-two symbols ``{0} U +/-{2^0 ... 2^-(2^(b-1)-1)} * alpha``.  The
    literal set has ``2^b + 1`` members; by default the negative
    smallest-magnitude symbol is dropped so exactly ``2^b`` symbols remain
    and indices fit in ``b`` bits under sign-magnitude encoding
    (``strict_size=True`` keeps all ``2^b + 1`` for study).

``apot``
    Additive power-of-two: each symbol is a sum of ``n = b/b0`` terms, term
    ``i`` drawing one of ``2^b0`` powers of two whose exponents are congruent
    to ``i`` modulo ``n``.  Interleaving makes every combination a distinct
    dyadic value, so the book has exactly ``2^b`` symbols; subtracting the
    mid value recenters the set symmetrically around zero (zero itself is a
    symbol) before the trainable scale ``gamma`` and shift ``beta`` apply.
    With ``n = 1`` the book degenerates to the PoT book.

Every non-uniform symbol is a dyadic rational times ``gamma`` (plus
``beta``); books carry per-symbol integer numerators and power-of-two term
decompositions so the fixed-point engine can run the weight path with
shifts and adds only.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import (
    ConfigurationError,
    LengthError,
    ModeError,
    RangeError,
)
from .model import ModelParams

# ---------------------------------------------------------------------------
# Core quantizers
# ---------------------------------------------------------------------------


def uniform_quantize(w, a: float, c: float, n_levels: int):
    """Quantize to ``n_levels`` evenly spaced symbols on ``[a, c]``.

    Implements ``w_hat = r*s + a`` with ``s = (c-a)/(N-1)`` and ``r`` the
    nearest integer of ``(clip(w, a, c) - a)/s``.  Exact midpoints round
    toward the symbol of smaller magnitude, then toward the smaller index,
    matching :func:`quantize_to_codebook`.
    """
    if a >= c:
        raise RangeError(f"need a < c, got a={a}, c={c}")
    if n_levels < 2:
        raise RangeError("need at least 2 levels")
    w = np.asarray(w, dtype=np.float64)
    s = (c - a) / (n_levels - 1)
    q = (np.clip(w, a, c) - a) / s
    r0 = np.floor(q)
    frac = q - r0
    r = np.where(frac > 0.5, r0 + 1, r0)
    tie = frac == 0.5
    if np.any(tie):
        lo = a + r0 * s
        hi = lo + s
        pick_hi = np.abs(hi) < np.abs(lo)
        r = np.where(tie & pick_hi, r0 + 1, r)
    r = np.clip(r, 0, n_levels - 1)
    out = r * s + a
    return out if out.shape else float(out)


@dataclass
class Codebook:
    """A finite symbol set plus its generating parameters.

    ``symbols`` is sorted ascending.  For ``pot``/``apot`` books the
    fixed-point fields describe each symbol as
    ``gamma * (num * 2**-dyadic_exp) + beta`` where ``num`` decomposes into
    the signed power-of-two terms ``term_signs * 2**term_shifts`` minus the
    book-wide ``center_num``.
    """

    scheme: str
    symbols: np.ndarray
    b: int
    a: float
    c: float
    alpha: float = 1.0
    gamma: float = 1.0
    beta: float = 0.0
    b0: Optional[int] = None
    dyadic_exp: Optional[int] = None
    dyadic_num: Optional[np.ndarray] = None
    term_shifts: Optional[np.ndarray] = None
    term_signs: Optional[np.ndarray] = None
    center_num: int = 0

    def __post_init__(self):
        self.symbols = np.asarray(self.symbols, dtype=np.float64)
        if self.symbols.ndim != 1 or self.symbols.size == 0:
            raise ConfigurationError("codebook must hold a 1-D nonempty symbol set")
        if np.any(np.diff(self.symbols) <= 0):
            raise ConfigurationError("codebook symbols must be strictly increasing")

    @property
    def n_symbols(self) -> int:
        return int(self.symbols.size)

    @property
    def effective_bits(self) -> float:
        """log2 of the distinct symbol count (reported, never assumed)."""
        return float(np.log2(self.n_symbols))

    @property
    def step(self) -> float:
        if self.scheme != "uniform":
            raise ConfigurationError("step is defined for uniform books only")
        return (self.c - self.a) / (self.n_symbols - 1)

    def stored_scalars(self) -> int:
        """Full-precision scalars persisted alongside the integer payload."""
        return {"uniform": 2, "pot": 1, "apot": 2}[self.scheme]

    def quantize_indices(self, w) -> tuple[np.ndarray, np.ndarray]:
        """Nearest symbol per input; ties prefer smaller magnitude, then index."""
        w = np.atleast_1d(np.asarray(w, dtype=np.float64))
        sym = self.symbols
        if self.scheme == "uniform" and self.n_symbols > 1:
            s = self.step
            q = (np.clip(w, self.a, self.c) - self.a) / s
            r0 = np.floor(q)
            frac = q - r0
            idx = np.where(frac > 0.5, r0 + 1, r0)
            tie = frac == 0.5
            if np.any(tie):
                lo = self.a + r0 * s
                pick_hi = np.abs(lo + s) < np.abs(lo)
                idx = np.where(tie & pick_hi, r0 + 1, idx)
            idx = np.clip(idx, 0, self.n_symbols - 1).astype(np.int64)
            return sym[idx], idx
        right = np.searchsorted(sym, w)
        right = np.clip(right, 1, self.n_symbols - 1)
        left = right - 1
        d_left = np.abs(w - sym[left])
        d_right = np.abs(w - sym[right])
        idx = np.where(d_right < d_left, right, left)
        tie = d_right == d_left
        if np.any(tie):
            pick_right = np.abs(sym[right]) < np.abs(sym[left])
            idx = np.where(tie & pick_right, right, idx)
        idx = idx.astype(np.int64)
        return sym[idx], idx

    def quantize_array(self, w) -> np.ndarray:
        values, _ = self.quantize_indices(np.asarray(w, dtype=np.float64).ravel())
        return values.reshape(np.shape(w))


def quantize_to_codebook(w: float, book: Codebook) -> tuple[float, int]:
    """Nearest-symbol assignment for a scalar; returns (symbol, index)."""
    values, idx = book.quantize_indices(w)
    return float(values[0]), int(idx[0])


# ---------------------------------------------------------------------------
# Codebook builders
# ---------------------------------------------------------------------------


def build_uniform_codebook(a: float, c: float, b: int) -> Codebook:
    if a >= c:
        raise RangeError(f"need a < c, got a={a}, c={c}")
    if not 2 <= b <= 16:
        raise ConfigurationError("uniform precision must be in [2, 16] bits")
    n = 1 << b
    s = (c - a) / (n - 1)
    symbols = a + s * np.arange(n)  # bitwise-identical to the quantizer formula
    return Codebook("uniform", symbols, b, a, float(symbols[-1]))


def _pot_magnitude_exponents(b: int) -> np.ndarray:
    return np.arange(1 << (b - 1))  # magnitudes 2^0 .. 2^-(2^(b-1)-1)


def build_pot_codebook(alpha: float, b: int, strict_size: bool = False) -> Codebook:
    """Power-of-two codebook ``+/- alpha * {0, 2^0, 2^-1, ...}``.

    The full set has ``2^b + 1`` members; unless ``strict_size`` is given,
    the negative smallest-magnitude symbol is dropped so the count is
    exactly ``2^b`` and codes fit ``b`` bits.  Fixed-point shift metadata is
    attached when the exponent depth fits 64-bit integers (b <= 6); deeper
    books still work on the float path.
    """
    if b < 2:
        raise ConfigurationError("pot precision must be >= 2 bits")
    if b > 10:
        raise ConfigurationError("pot books beyond 10 bits underflow float64")
    if alpha <= 0:
        raise ConfigurationError("alpha must be positive")
    exps = _pot_magnitude_exponents(b)
    e_max = int(exps[-1])
    vals = [0.0]
    for e in exps:
        vals.append(2.0 ** -float(e))
        if not (not strict_size and e == e_max):
            vals.append(-(2.0 ** -float(e)))
    symbols = alpha * np.sort(np.array(vals))
    book = Codebook(
        "pot",
        symbols,
        b,
        float(symbols[0]),
        float(symbols[-1]),
        alpha=alpha,
        gamma=alpha,
    )
    if e_max <= 62:
        nums = np.round(np.sort(np.array(vals)) * 2.0**e_max).astype(np.int64)
        shifts = np.full((nums.size, 1), -1, dtype=np.int8)
        signs = np.zeros((nums.size, 1), dtype=np.int8)
        nz = nums != 0
        shifts[nz, 0] = np.round(np.log2(np.abs(nums[nz]))).astype(np.int8)
        signs[nz, 0] = np.sign(nums[nz]).astype(np.int8)
        book.dyadic_exp = e_max
        book.dyadic_num = nums
        book.term_shifts = shifts
        book.term_signs = signs
    return book


def apot_term_numerators(b: int, b0: int) -> list[np.ndarray]:
    """Per-term integer numerator choices of the additive PoT construction.

    Term ``i`` of ``n = b/b0`` contributes 0 or ``2^-(j*n+i)`` for
    ``j = 0 .. 2^b0 - 2``; exponent classes are disjoint modulo ``n``, so
    all ``2^b`` combined sums are distinct.  Numerators are relative to
    ``2^-e_max`` with ``e_max = (2^b0 - 2)*n + n - 1``.
    """
    n = b // b0
    e_max = ((1 << b0) - 2) * n + n - 1
    out = []
    for i in range(n):
        opts = [0] + [1 << (e_max - (j * n + i)) for j in range((1 << b0) - 1)]
        out.append(np.array(sorted(opts), dtype=np.int64))
    return out


def build_apot_codebook(gamma: float, beta: float, b: int, b0: int) -> Codebook:
    """Additive power-of-two codebook with exactly ``2^b`` symbols.

    Symbols are ``gamma * (u - u_mid) + beta`` where ``u`` ranges over all
    sums of the interleaved per-term powers and ``u_mid`` recenters the set
    symmetrically around zero.  ``b`` must be divisible by ``b0``; ``n = 1``
    returns the PoT book scaled by gamma and shifted by beta.
    """
    if b0 is None or b0 < 1:
        raise ConfigurationError("b0 must be >= 1")
    if b % b0 != 0:
        raise ConfigurationError(f"b={b} not divisible by b0={b0}")
    if gamma <= 0:
        raise ConfigurationError("gamma must be positive")
    n = b // b0
    if n == 1:
        base = build_pot_codebook(1.0, b)
        return replace(
            base,
            scheme="apot",
            symbols=gamma * base.symbols + beta,
            a=float(gamma * base.symbols[0] + beta),
            c=float(gamma * base.symbols[-1] + beta),
            alpha=1.0,
            gamma=gamma,
            beta=beta,
            b0=b0,
        )

    e_max = ((1 << b0) - 2) * n + n - 1
    if e_max > 62:
        raise ConfigurationError(
            f"APoT(b={b}, b0={b0}) needs exponent depth {e_max}, beyond exact"
            " 64-bit dyadic arithmetic"
        )
    term_opts = apot_term_numerators(b, b0)
    nums = np.zeros(1, dtype=np.int64)
    choices = np.zeros((1, 0), dtype=np.int64)
    for opts in term_opts:
        nums = (nums[:, None] + opts[None, :]).ravel()
        choices = np.concatenate(
            [
                np.repeat(choices, opts.size, axis=0),
                np.tile(opts, choices.shape[0])[:, None],
            ],
            axis=1,
        )
    if np.unique(nums).size != nums.size:
        raise ConfigurationError("internal: additive terms collided")

    # center on the dyadic mid value 1 - 2^-n (for b0 == 1 simply 2^0),
    # which is itself an achievable sum, so zero is a symbol
    if b0 >= 2:
        center = sum(1 << (e_max - e) for e in range(1, n + 1))
    else:
        center = 1 << e_max
    assert center in set(nums.tolist())

    order = np.argsort(nums)
    nums = nums[order]
    choices = choices[order]
    centered = nums - center
    symbols = gamma * centered.astype(np.float64) * 2.0**-e_max + beta

    shifts = np.full((nums.size, n), -1, dtype=np.int8)
    signs = np.zeros((nums.size, n), dtype=np.int8)
    for t in range(n):
        nz = choices[:, t] != 0
        shifts[nz, t] = np.round(np.log2(choices[nz, t])).astype(np.int8)
        signs[nz, t] = 1
    return Codebook(
        "apot",
        symbols,
        b,
        float(symbols[0]),
        float(symbols[-1]),
        alpha=1.0,
        gamma=gamma,
        beta=beta,
        b0=b0,
        dyadic_exp=e_max,
        dyadic_num=centered,
        term_shifts=shifts,
        term_signs=signs,
        center_num=int(center),
    )


# ---------------------------------------------------------------------------
# Range calibration and schemes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RangeMode:
    """Static bounds fixed a priori, or dynamic per-component calibration."""

    mode: str = "dynamic"
    a: Optional[float] = None
    c: Optional[float] = None
    percentile: Optional[float] = None

    def __post_init__(self):
        if self.mode not in ("static", "dynamic"):
            raise ConfigurationError("range mode must be 'static' or 'dynamic'")
        if self.mode == "static" and (self.a is None or self.c is None):
            raise ConfigurationError("static range mode requires explicit (a, c)")


def calibrate_range(values, range_mode: RangeMode) -> tuple[float, float]:
    """Quantization bounds (a, c) for one network component.

    Dynamic mode uses min/max (or symmetric percentile clipping when
    configured).  Constant inputs widen to ``(v, v+1)`` so the value itself
    stays an exact codeword.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise LengthError("cannot calibrate an empty value set")
    if range_mode.mode == "static":
        return float(range_mode.a), float(range_mode.c)
    if range_mode.percentile is not None:
        p = range_mode.percentile
        a = float(np.percentile(values, 100.0 - p))
        c = float(np.percentile(values, p))
    else:
        a = float(values.min())
        c = float(values.max())
    if a == c:
        c = a + 1.0
    return a, c


@dataclass(frozen=True)
class QuantScheme:
    """Scheme selector: codebook family x mode x range x per-group precision."""

    label: str
    scheme: str  # uniform | pot | apot
    mode: str  # ptq | taq
    b1: int  # conv layers
    b2: int  # dense + head layers
    range_mode: RangeMode = field(default_factory=RangeMode)
    activation_bits: Optional[int] = 8
    b0: int = 2
    quantize_biases: bool = True

    def __post_init__(self):
        if self.scheme not in ("uniform", "pot", "apot"):
            raise ConfigurationError(f"unknown codebook scheme {self.scheme!r}")
        if self.mode not in ("ptq", "taq"):
            raise ConfigurationError(f"unknown quantization mode {self.mode!r}")
        for b in (self.b1, self.b2):
            if not 2 <= b <= 16:
                raise ConfigurationError("precisions must be within [2, 16] bits")
        if self.activation_bits is not None and not 2 <= self.activation_bits <= 16:
            raise ConfigurationError("activation precision must be within [2, 16] bits")

    @property
    def is_fixed_precision(self) -> bool:
        return self.b1 == self.b2


def scheme_from_label(label: str) -> QuantScheme:
    """Parse a scheme label.

    Recognized forms: ``PTQ-U<b>`` / ``TAQ-<b>`` (fixed-precision uniform),
    ``PTQ-P<b>`` (fixed-precision PoT), ``PTQ-A<b>`` (fixed-precision APoT),
    and the named mixed-precision schemes ``PTQ-8`` (uniform, b1=6/b2=8) and
    ``APoT-8`` (additive PoT, b1=6/b2=8).  ``UQ``/``DSP`` are not
    quantization schemes and are rejected here.
    """
    raw = label.strip()
    up = raw.upper()
    if up == "PTQ-8":
        return QuantScheme(raw, "uniform", "ptq", b1=6, b2=8)
    if up == "APOT-8":
        return QuantScheme(raw, "apot", "ptq", b1=6, b2=8, b0=2)
    for prefix, scheme, mode in (
        ("PTQ-U", "uniform", "ptq"),
        ("PTQ-P", "pot", "ptq"),
        ("PTQ-A", "apot", "ptq"),
        ("TAQ-A", "apot", "taq"),
        ("TAQ-", "uniform", "taq"),
    ):
        if up.startswith(prefix) and up[len(prefix) :].isdigit():
            b = int(up[len(prefix) :])
            return QuantScheme(raw, scheme, mode, b1=b, b2=b)
    raise ConfigurationError(f"unrecognized scheme label {label!r}")


# ---------------------------------------------------------------------------
# Model quantization (PTQ) and size accounting
# ---------------------------------------------------------------------------

_CONV_LAYERS = ("conv_x", "conv_y")
ACTIVATION_POINTS = ("input", "conv_out", "tanh_out")


@dataclass
class ModelQuantization:
    """Attachment describing how a quantized model's tensors are encoded."""

    scheme: QuantScheme
    weight_books: dict[str, Codebook]
    act_books: dict[str, Optional[Codebook]]

    def quantize_activation(self, point: str, values: np.ndarray) -> np.ndarray:
        book = self.act_books.get(point)
        if book is None:
            return values
        return book.quantize_array(values)

    def layer_bits(self, layer: str) -> int:
        return self.scheme.b1 if layer in _CONV_LAYERS else self.scheme.b2


def _build_book_for(scheme: QuantScheme, values: np.ndarray, bits: int) -> Codebook:
    a, c = calibrate_range(values, scheme.range_mode)
    if scheme.scheme == "uniform":
        return build_uniform_codebook(a, c, bits)
    span = max(abs(a), abs(c))
    if span == 0:
        span = 1.0
    if scheme.scheme == "pot":
        return build_pot_codebook(span, bits)
    if bits % scheme.b0 != 0:
        raise ConfigurationError(
            f"APoT needs b divisible by b0 (got b={bits}, b0={scheme.b0})"
        )
    n = bits // scheme.b0
    gamma = span / (1.0 - 2.0 ** -float(n)) if n > 1 else span
    return build_apot_codebook(gamma, 0.0, bits, scheme.b0)


def _activation_book(values: np.ndarray, bits: int) -> Codebook:
    a, c = calibrate_range(values, RangeMode())
    return build_uniform_codebook(a, c, bits)


def quantize_model_ptq(
    params: ModelParams, scheme: QuantScheme, calibration_windows: np.ndarray
) -> ModelParams:
    """Post-training quantization of a trained model.

    Conv filters quantize at ``b1`` bits, dense and head tensors at ``b2``;
    biases get their own codebook of the same family and rate unless the
    scheme keeps them full precision.  Activation codebooks (uniform,
    dynamic range) are calibrated from forward passes of the
    weight-quantized network over ``calibration_windows`` (shape (B, 4,
    window_len)).  Quantizing an already-quantized model with the same
    scheme and calibration set is a no-op on the weights.
    """
    if scheme.mode != "ptq":
        raise ModeError(f"scheme {scheme.label!r} is {scheme.mode}, expected ptq")
    calibration_windows = np.asarray(calibration_windows, dtype=np.float64)
    if calibration_windows.ndim != 3 or calibration_windows.shape[1] != 4:
        raise ConfigurationError("calibration windows must have shape (B, 4, W)")

    out = params.copy(drop_quant=True)
    weight_books: dict[str, Codebook] = {}
    for name, arr in out.layer_arrays().items():
        bits = scheme.b1 if name in _CONV_LAYERS else scheme.b2
        is_bias = name.endswith("_b")
        if is_bias and not scheme.quantize_biases:
            continue
        book = _build_book_for(scheme, arr, bits)
        arr[...] = book.quantize_array(arr)
        weight_books[name] = book

    act_books: dict[str, Optional[Codebook]] = {p: None for p in ACTIVATION_POINTS}
    if scheme.activation_bits is not None:
        bits = scheme.activation_bits
        act_books["input"] = _activation_book(calibration_windows, bits)
        win_q = act_books["input"].quantize_array(calibration_windows)
        z, act = _calibration_intermediates(win_q, out)
        act_books["conv_out"] = _activation_book(z, bits)
        act_books["tanh_out"] = _activation_book(act, bits)

    out.quant = ModelQuantization(scheme, weight_books, act_books)
    return out


def _calibration_intermediates(windows: np.ndarray, params: ModelParams):
    """Conv outputs and tanh outputs of the plain float path (no act quant)."""
    from .model import _batch_conv

    cx_re, cx_im = _batch_conv(windows[:, 0:2], params.conv_x)
    cy_re, cy_im = _batch_conv(windows[:, 2:4], params.conv_y)
    z = np.concatenate([cx_re, cx_im, cy_re, cy_im], axis=1)
    act = np.tanh(z @ params.dense_w.T + params.dense_b)
    return z, act


def model_size_bits(params: ModelParams) -> int:
    """Stored model size in bits.

    Full precision: 32 bits per weight.  Quantized: the per-layer rate times
    the element count, plus 32 bits per stored full-precision scalar (range
    bounds or scale/shift) of every weight and activation codebook; tensors
    kept in full precision (e.g. unquantized biases) count 32 bits each.
    """
    if params.quant is None:
        return 32 * params.weight_count()
    q: ModelQuantization = params.quant
    total = 0
    for name, arr in params.layer_arrays().items():
        if name in q.weight_books:
            total += q.layer_bits(name) * arr.size
            total += 32 * q.weight_books[name].stored_scalars()
        else:
            total += 32 * arr.size
    for book in q.act_books.values():
        if book is not None:
            total += 32 * book.stored_scalars()
    return total


def size_reduction_vs_fp32(params: ModelParams) -> float:
    """Fractional size saving of a quantized model against FP32 storage."""
    full = 32 * params.weight_count()
    return 1.0 - model_size_bits(params) / full


__all__ = [
    "ACTIVATION_POINTS",
    "Codebook",
    "ModelQuantization",
    "QuantScheme",
    "RangeMode",
    "apot_term_numerators",
    "build_apot_codebook",
    "build_pot_codebook",
    "build_uniform_codebook",
    "calibrate_range",
    "model_size_bits",
    "quantize_model_ptq",
    "quantize_to_codebook",
    "scheme_from_label",
    "size_reduction_vs_fp32",
    "uniform_quantize",
]

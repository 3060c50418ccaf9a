"""Hot numeric kernels: numba-accelerated with pure-numpy fallbacks.

Three inner loops dominate runtime and get dual implementations here:

* the nonlinear phase rotation inside the split-step fiber propagator,
* the per-block blind phase search of the carrier phase estimator,
* the integer / shift-add multiply-accumulate paths of the fixed-point
  inference engine.

The numba path is used when available; setting the environment variable
``QFEQ_NO_NUMBA=1`` selects the pure-numpy fallbacks (same results, slower).
``scripts/bench_kernels.py`` times both paths side by side.

Fixed-point contract: accumulators are 32-bit.  Kernels return the
worst-case accumulation magnitude (sum of absolute terms) so the caller can
reject any forward pass whose accumulator could exceed ``INT32_MAX`` in some
summation order; overflow is an error, never a silent wrap.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit, prange

    _NUMBA_IMPORTED = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _NUMBA_IMPORTED = False

    def njit(*args, **kwargs):  # type: ignore
        def wrap(f):
            return f

        if args and callable(args[0]):
            return args[0]
        return wrap

    prange = range  # type: ignore

INT32_MAX = np.int64(2**31 - 1)


def numba_enabled() -> bool:
    """True when the numba kernel path is active for this process."""
    if os.environ.get("QFEQ_NO_NUMBA", "0") not in ("", "0"):
        return False
    return _NUMBA_IMPORTED


# ---------------------------------------------------------------------------
# Nonlinear phase rotation (split-step fiber propagator)
# ---------------------------------------------------------------------------


@njit(cache=True, parallel=True)
def _nl_phase_numba(x, y, factor):
    for i in prange(x.shape[0]):
        p = x[i].real * x[i].real + x[i].imag * x[i].imag
        p += y[i].real * y[i].real + y[i].imag * y[i].imag
        th = factor * p
        r = complex(np.cos(th), np.sin(th))
        x[i] = x[i] * r
        y[i] = y[i] * r


def nonlinear_phase(x: np.ndarray, y: np.ndarray, factor: float) -> None:
    """In-place rotation of both polarizations by ``factor*(|x|^2+|y|^2)``."""
    if numba_enabled():
        _nl_phase_numba(x, y, factor)
    else:
        th = factor * (np.abs(x) ** 2 + np.abs(y) ** 2)
        rot = np.exp(1j * th)
        x *= rot
        y *= rot


# ---------------------------------------------------------------------------
# Blind phase search (carrier phase estimation)
# ---------------------------------------------------------------------------


@njit(cache=True)
def _nearest_level(v, levels):
    best = levels[0]
    bd = abs(v - levels[0])
    for k in range(1, levels.shape[0]):
        d = abs(v - levels[k])
        if d < bd:
            bd = d
            best = levels[k]
    return best


@njit(cache=True)
def _bps_numba(symbols, block_len, phases, levels):
    n_blocks = symbols.shape[0] // block_len
    out = np.empty(n_blocks, dtype=np.float64)
    for b in range(n_blocks):
        lo = b * block_len
        hi = lo + block_len
        best_cost = 1e300
        best_p = 0.0
        for ip in range(phases.shape[0]):
            rot = complex(np.cos(phases[ip]), np.sin(phases[ip]))
            cost = 0.0
            for k in range(lo, hi):
                z = symbols[k] * rot
                dr = z.real - _nearest_level(z.real, levels)
                di = z.imag - _nearest_level(z.imag, levels)
                cost += dr * dr + di * di
            if cost < best_cost:
                best_cost = cost
                best_p = phases[ip]
        # decision-directed refinement around the winning grid phase
        rot = complex(np.cos(best_p), np.sin(best_p))
        num = complex(0.0, 0.0)
        for k in range(lo, hi):
            z = symbols[k] * rot
            d = complex(_nearest_level(z.real, levels), _nearest_level(z.imag, levels))
            num += d * np.conj(z)
        if abs(num) > 0.0:
            best_p += np.arctan2(num.imag, num.real)
        out[b] = best_p
    return out


def _slice_levels(values: np.ndarray, levels: np.ndarray) -> np.ndarray:
    idx = np.argmin(np.abs(values[..., None] - levels[None, ...]), axis=-1)
    return levels[idx]


def _bps_numpy(symbols, block_len, phases, levels):
    n_blocks = symbols.shape[0] // block_len
    out = np.empty(n_blocks, dtype=np.float64)
    rot = np.exp(1j * phases)
    for b in range(n_blocks):
        blk = symbols[b * block_len : (b + 1) * block_len]
        z = blk[None, :] * rot[:, None]
        err = (z.real - _slice_levels(z.real, levels)) ** 2
        err += (z.imag - _slice_levels(z.imag, levels)) ** 2
        ip = int(np.argmin(err.sum(axis=1)))
        best_p = phases[ip]
        zb = blk * rot[ip]
        dec = _slice_levels(zb.real, levels) + 1j * _slice_levels(zb.imag, levels)
        num = np.sum(dec * np.conj(zb))
        if abs(num) > 0.0:
            best_p = best_p + np.angle(num)
        out[b] = best_p
    return out


def bps_block_phases(
    symbols: np.ndarray, block_len: int, phases: np.ndarray, levels: np.ndarray
) -> np.ndarray:
    """Best test-phase per block (grid search plus decision-directed trim).

    Returns one phase per complete block of ``block_len`` symbols; trailing
    symbols that do not fill a block are ignored by the kernel and handled
    by the caller.
    """
    symbols = np.ascontiguousarray(symbols, dtype=np.complex128)
    phases = np.ascontiguousarray(phases, dtype=np.float64)
    levels = np.ascontiguousarray(levels, dtype=np.float64)
    if numba_enabled():
        return _bps_numba(symbols, block_len, phases, levels)
    return _bps_numpy(symbols, block_len, phases, levels)


# ---------------------------------------------------------------------------
# Fixed-point multiply-accumulate paths
# ---------------------------------------------------------------------------


@njit(cache=True)
def _int_mac_numba(qw, pm):
    n_out, n_in = qw.shape
    acc = np.zeros(n_out, dtype=np.int64)
    worst = np.int64(0)
    mults = np.int64(0)
    for o in range(n_out):
        a = np.int64(0)
        w = np.int64(0)
        for i in range(n_in):
            t = qw[o, i] * pm[o, i]
            mults += 1
            a += t
            w += abs(t)
        acc[o] = a
        if w > worst:
            worst = w
    return acc, worst, mults


def _int_mac_numpy(qw, pm):
    prod = qw * pm
    acc = prod.sum(axis=1)
    worst = np.abs(prod).sum(axis=1).max() if prod.size else np.int64(0)
    mults = np.int64(prod.size)
    return acc, np.int64(worst), mults


def int_mac(qw: np.ndarray, pm: np.ndarray):
    """Row-wise integer multiply-accumulate with accumulator tracking.

    ``qw`` and ``pm`` are (out, in) weight codes and activation codes (``pm``
    may be a broadcast view of one shared activation vector).  Returns
    ``(acc, worst, mults)``: int64 row sums, the largest sum of absolute
    addends over any row (order-independent 32-bit overflow bound), and the
    number of general multiplier invocations.
    """
    qw = np.ascontiguousarray(qw, dtype=np.int64)
    pm = np.ascontiguousarray(pm, dtype=np.int64)
    if numba_enabled():
        return _int_mac_numba(qw, pm)
    return _int_mac_numpy(qw, pm)


@njit(cache=True)
def _shiftadd_mac_numba(shifts, signs, pm):
    n_out, n_in, n_terms = shifts.shape
    acc = np.zeros(n_out, dtype=np.int64)
    worst = np.int64(0)
    ops = np.int64(0)
    for o in range(n_out):
        a = np.int64(0)
        w = np.int64(0)
        for i in range(n_in):
            p = pm[o, i]
            for t in range(n_terms):
                sh = shifts[o, i, t]
                if sh < 0:
                    continue
                v = p << sh
                ops += 1
                if signs[o, i, t] > 0:
                    a += v
                else:
                    a -= v
                w += abs(v)
        acc[o] = a
        if w > worst:
            worst = w
    return acc, worst, ops


def _shiftadd_mac_numpy(shifts, signs, pm):
    used = shifts >= 0
    sh = np.where(used, shifts, 0).astype(np.int64)
    terms = (pm[:, :, None] << sh) * np.where(used, signs, 0)
    acc = terms.sum(axis=(1, 2))
    mags = np.abs(terms).sum(axis=(1, 2))
    worst = mags.max() if mags.size else np.int64(0)
    ops = np.int64(used.sum())
    return acc.astype(np.int64), np.int64(worst), ops


def shiftadd_mac(shifts: np.ndarray, signs: np.ndarray, pm: np.ndarray):
    """Row-wise shift-add multiply-accumulate for power-of-two term weights.

    ``shifts[o, i, t]`` is the left-shift applied to activation ``pm[o, i]``
    for term ``t`` of weight ``(o, i)``; negative entries mark unused term
    slots.  ``signs`` holds +/-1 per used term.  No general multiplication
    between an activation and a weight occurs on this path.  Returns
    ``(acc, worst, shift_add_ops)``.
    """
    shifts = np.ascontiguousarray(shifts, dtype=np.int8)
    signs = np.ascontiguousarray(signs, dtype=np.int8)
    pm = np.ascontiguousarray(pm, dtype=np.int64)
    if numba_enabled():
        return _shiftadd_mac_numba(shifts, signs, pm)
    return _shiftadd_mac_numpy(shifts, signs, pm)

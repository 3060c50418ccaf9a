"""BER, Q-factor, penalty accounting, power sweeps and scheme comparison.

Q is derived from BER through the Gaussian error model
``Q_dB = 20 log10(sqrt(2) * erfcinv(2 BER))``.  Penalties are paired
differences against the unquantized model under common noise seeds, which
cancels the ASE realization and isolates the quantization effect.  A
zero-count BER cannot be converted to a Q value; such records carry the
Q of the one-error floor and a ``ber-floor`` flag marking the number as a
lower-bound estimate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import erfcinv

from .errors import LengthError, PairingError, RangeError, StateError
from .model import ModelParams, center_symbol_offset, slide_equalize
from .quantize import model_size_bits
from .signal import ComplexField, Qam16Constellation, SymbolFrame, demap_symbols

MIN_REPORT_BITS = 100_000


def bit_error_rate(tx_bits: np.ndarray, rx_bits: np.ndarray) -> float:
    """Hamming distance over length."""
    tx_bits = np.asarray(tx_bits).ravel()
    rx_bits = np.asarray(rx_bits).ravel()
    if tx_bits.shape != rx_bits.shape:
        raise LengthError(
            f"bit sequences differ in length: {tx_bits.size} vs {rx_bits.size}"
        )
    if tx_bits.size == 0:
        raise LengthError("empty bit sequences")
    return float(np.mean(tx_bits != rx_bits))


def q_factor_db(ber: float) -> float:
    """Gaussian-model Q in dB; defined for 0 < BER < 0.5 only."""
    if not 0.0 < ber < 0.5:
        raise RangeError(f"Q-factor undefined for BER={ber}")
    return float(20.0 * np.log10(np.sqrt(2.0) * erfcinv(2.0 * ber)))


def q_confidence_db(ber: float, n_bits: int, z: float = 1.96) -> float:
    """Half-width of the ~95% binomial confidence interval, in Q dB."""
    if ber <= 0:
        ber = 1.0 / (2 * n_bits)
    sigma = np.sqrt(ber * (1.0 - ber) / n_bits)
    lo = max(ber - z * sigma, 1.0 / (10 * n_bits))
    hi = min(ber + z * sigma, 0.49)
    if lo >= hi:
        return 0.0
    return abs(q_factor_db(lo) - q_factor_db(hi)) / 2.0


@dataclass
class ExperimentRecord:
    """One row of the output curves."""

    launch_power_dbm: float
    scheme: str
    b1: int
    b2: int
    ber: float
    q_db: float
    penalty_db: float
    model_bits: int
    seed: int
    test_bits: int
    flags: str = ""

    CSV_COLUMNS = (
        "launch_power_dbm,scheme,b1,b2,ber,q_db,penalty_db,model_bits,seed,"
        "test_bits,flags"
    )

    def csv_row(self) -> str:
        return (
            f"{self.launch_power_dbm:+.1f},{self.scheme},{self.b1},{self.b2},"
            f"{self.ber:.6e},{self.q_db:.4f},{self.penalty_db:.4f},"
            f"{self.model_bits},{self.seed},{self.test_bits},{self.flags}"
        )

    @classmethod
    def from_csv_row(cls, row: str) -> "ExperimentRecord":
        p = row.split(",")
        return cls(
            float(p[0]), p[1], int(p[2]), int(p[3]), float(p[4]), float(p[5]),
            float(p[6]), int(p[7]), int(p[8]), int(p[9]),
            p[10] if len(p) > 10 else "",
        )


def records_to_csv_lines(records: Sequence[ExperimentRecord], config_hash: str = "") -> list[str]:
    lines = []
    if config_hash:
        lines.append(f"# config_hash={config_hash}")
    lines.append(ExperimentRecord.CSV_COLUMNS)
    lines.extend(r.csv_row() for r in records)
    return lines


def records_from_csv_lines(lines: Sequence[str]) -> list[ExperimentRecord]:
    out = []
    for line in lines:
        line = line.strip()
        if not line or line.startswith("#") or line.startswith("launch_power"):
            continue
        out.append(ExperimentRecord.from_csv_row(line))
    return out


# ---------------------------------------------------------------------------
# Cell evaluation
# ---------------------------------------------------------------------------


def equalized_ber(
    tx: SymbolFrame,
    field: ComplexField,
    params: ModelParams,
    constellation: Optional[Qam16Constellation] = None,
) -> tuple[float, int]:
    """BER of the NN-equalized field against the transmitted frame."""
    constellation = constellation or Qam16Constellation()
    out = slide_equalize(field, params)
    off = center_symbol_offset(params.window_len)
    n = min(len(out), len(tx) - off)
    got = np.concatenate(
        [demap_symbols(out.x[:n], constellation), demap_symbols(out.y[:n], constellation)]
    )
    want = np.concatenate(
        [
            demap_symbols(tx.x[off : off + n], constellation),
            demap_symbols(tx.y[off : off + n], constellation),
        ]
    )
    return bit_error_rate(want, got), got.size


def linear_dsp_ber(
    tx: SymbolFrame,
    field: ComplexField,
    constellation: Optional[Qam16Constellation] = None,
) -> tuple[float, int]:
    """BER of the symbol-rate samples with no nonlinear equalizer."""
    constellation = constellation or Qam16Constellation()
    n = min(len(field) // 2, len(tx))
    got = np.concatenate(
        [
            demap_symbols(field.x[: 2 * n : 2], constellation),
            demap_symbols(field.y[: 2 * n : 2], constellation),
        ]
    )
    want = np.concatenate(
        [demap_symbols(tx.x[:n], constellation), demap_symbols(tx.y[:n], constellation)]
    )
    return bit_error_rate(want, got), got.size


def make_record(
    power: float,
    scheme_label: str,
    seed: int,
    ber: float,
    test_bits: int,
    model: Optional[ModelParams],
    b1: int = 32,
    b2: int = 32,
) -> ExperimentRecord:
    flags = []
    if test_bits < MIN_REPORT_BITS:
        flags.append("low-bits")
    if ber <= 0.0:
        ber_for_q = 1.0 / (2 * test_bits)
        flags.append("ber-floor")
    else:
        ber_for_q = ber
    q = q_factor_db(ber_for_q) if ber_for_q < 0.5 else float("nan")
    if not np.isfinite(q):
        flags.append("q-undefined")
    bits = model_size_bits(model) if model is not None else 0
    return ExperimentRecord(
        power, scheme_label, b1, b2, ber, q, 0.0, bits, seed, test_bits,
        ";".join(flags),
    )


# ---------------------------------------------------------------------------
# Sweeps and comparison
# ---------------------------------------------------------------------------


def sweep_power(
    powers: Sequence[float],
    scheme_labels: Sequence[str],
    channel_provider: Callable[[float, int], tuple[SymbolFrame, ComplexField]],
    model_provider: Callable[[float, str], Optional[ModelParams]],
    seeds: Sequence[int],
) -> list[ExperimentRecord]:
    """Evaluate every (power, scheme, seed) cell on a common channel.

    ``channel_provider(power, seed)`` returns the synchronized (tx, field)
    pair — the same object for every scheme, so penalties are paired
    differences.  ``model_provider(power, label)`` returns the equalizer for
    a scheme (None for the plain-DSP baseline).  Penalties are filled in
    against the unquantized rows when present.
    """
    records: list[ExperimentRecord] = []
    for power in powers:
        for seed in seeds:
            tx, field = channel_provider(power, seed)
            for label in scheme_labels:
                if label == "DSP":
                    ber, nbits = linear_dsp_ber(tx, field)
                    records.append(make_record(power, label, seed, ber, nbits, None))
                    continue
                model = model_provider(power, label)
                if model is None:
                    raise StateError(f"no model available for scheme {label!r}")
                ber, nbits = equalized_ber(tx, field, model)
                if model.quant is None:
                    b1 = b2 = 32
                else:
                    b1, b2 = model.quant.scheme.b1, model.quant.scheme.b2
                records.append(
                    make_record(power, label, seed, ber, nbits, model, b1, b2)
                )
    fill_penalties(records)
    return records


def fill_penalties(records: list[ExperimentRecord], baseline: str = "UQ") -> None:
    """Set penalty_db = Q(baseline) - Q(scheme) per (power, seed) pair."""
    base = {
        (r.launch_power_dbm, r.seed): r.q_db
        for r in records
        if r.scheme == baseline
    }
    for r in records:
        key = (r.launch_power_dbm, r.seed)
        if key in base and np.isfinite(r.q_db):
            r.penalty_db = base[key] - r.q_db


@dataclass
class SchemeSummary:
    scheme: str
    b1: int
    b2: int
    model_bits: int
    q_by_power: dict
    penalty_by_power: dict
    ci_by_power: dict


def compare_schemes(records: Sequence[ExperimentRecord], baseline: str = "UQ"):
    """Per-scheme Q table with paired penalties and model sizes.

    All schemes must share the same (power, seed) grid; unpaired records
    raise :class:`~qfeq.errors.PairingError`.  Returns summaries sorted by
    mean Q across powers, best first.
    """
    schemes = sorted({r.scheme for r in records})
    grids = {
        s: {(r.launch_power_dbm, r.seed) for r in records if r.scheme == s}
        for s in schemes
    }
    ref_grid = grids[schemes[0]]
    for s, g in grids.items():
        if g != ref_grid:
            raise PairingError(
                f"scheme {s!r} covers {sorted(g)} but {schemes[0]!r} covers"
                f" {sorted(ref_grid)}"
            )
    powers = sorted({p for p, _ in ref_grid})

    summaries = []
    for s in schemes:
        rows = [r for r in records if r.scheme == s]
        q_by_power, pen_by_power, ci_by_power = {}, {}, {}
        for p in powers:
            cell = [r for r in rows if r.launch_power_dbm == p]
            q_by_power[p] = float(np.mean([r.q_db for r in cell]))
            pen_by_power[p] = float(np.mean([r.penalty_db for r in cell]))
            ci = np.sqrt(
                np.sum([q_confidence_db(r.ber, r.test_bits) ** 2 for r in cell])
            ) / len(cell)
            ci_by_power[p] = float(ci)
        summaries.append(
            SchemeSummary(
                s,
                rows[0].b1,
                rows[0].b2,
                rows[0].model_bits,
                q_by_power,
                pen_by_power,
                ci_by_power,
            )
        )
    summaries.sort(key=lambda s: -np.mean(list(s.q_by_power.values())))
    return summaries


def comparison_csv_lines(summaries, config_hash: str = "") -> list[str]:
    powers = sorted(next(iter(summaries)).q_by_power) if summaries else []
    lines = []
    if config_hash:
        lines.append(f"# config_hash={config_hash}")
    header = ["scheme", "b1", "b2", "model_bits"]
    for p in powers:
        header += [f"q_db@{p:+.1f}", f"penalty_db@{p:+.1f}"]
    lines.append(",".join(header))
    for s in summaries:
        row = [s.scheme, str(s.b1), str(s.b2), str(s.model_bits)]
        for p in powers:
            row += [f"{s.q_by_power[p]:.4f}", f"{s.penalty_by_power[p]:.4f}"]
        lines.append(",".join(row))
    return lines

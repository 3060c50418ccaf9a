"""End-to-end chain: transmit, propagate, receive, synchronize, dataset.

One call produces everything the training and evaluation stages need for a
given (launch power, seed) cell: the transmitted frame, the synchronized
2-samples-per-symbol receive field (symbol instants on even indices, unit
constellation scale), ready for the equalizer or the plain-DSP baseline.

Randomness: each run seed expands into independent streams for payload
bits, per-span amplifier noise, and the transmit/receive laser walks, via
seed-sequence spawning.  The same run seed reproduces the identical channel
realization at any launch power, so power sweeps are noise-paired.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.fft as sfft

from .dsp import (
    DspConfig,
    carrier_phase_estimate,
    cd_compensate,
    cpe_phases,
    matched_filter_downsample,
    synchronize_scale,
)
from .errors import ConfigurationError
from .fiber import LinkConfig, transmit_link, wiener_phase_noise
from .framefile import read_sections, write_sections
from .signal import (
    ComplexField,
    Qam16Constellation,
    SymbolFrame,
    map_bits_to_symbols,
    rrc_shape,
    scale_to_power_dbm,
)
from .training import Dataset

_DOMAIN_BITS = 0
_DOMAIN_LINK = 1
_DOMAIN_PHASE_TX = 2
_DOMAIN_PHASE_RX = 3


def derived_rng(run_seed: int, domain: int) -> np.random.Generator:
    """Independent, reproducible stream for one noise domain of a run."""
    ss = np.random.SeedSequence(run_seed, spawn_key=(domain,))
    return np.random.Generator(np.random.PCG64(ss))


def derived_seed(run_seed: int, domain: int) -> int:
    return int(np.random.SeedSequence(run_seed, spawn_key=(domain,)).generate_state(1)[0])


@dataclass(frozen=True)
class ChannelSpec:
    """Everything fixed about the link and transceiver except power/seed."""

    link: LinkConfig = dc_field(default_factory=LinkConfig)
    baud_hz: float = 34.4e9
    rolloff: float = 0.1
    rrc_span: int = 65
    linewidth_hz: float = 100e3
    cpe_block_len: int = 128
    cpe_test_phases: int = 64
    guard_symbols: int = 128

    def dsp_config(self) -> DspConfig:
        return DspConfig(
            total_cd_ps_nm=self.link.total_cd_ps_nm,
            cpe_block_len=self.cpe_block_len,
            cpe_test_phases=self.cpe_test_phases,
            wavelength_um=self.link.fiber.center_wavelength_um,
        )


@dataclass
class ChannelRun:
    """Synchronized output of one simulated transmission."""

    tx: SymbolFrame
    field: ComplexField  # 2 sps, symbol instants on even indices, unit scale
    launch_power_dbm: float
    seed: int
    delay: int
    peak_corr: float


def simulate_rx(
    spec: ChannelSpec, n_symbols: int, power_dbm: float, run_seed: int
) -> ChannelRun:
    """Simulate one transmission and run the linear receiver.

    Returns the guard-trimmed transmitted frame and the synchronized,
    gain-corrected 2-samples-per-symbol field.
    """
    if n_symbols < 2 * spec.guard_symbols + 1024:
        raise ConfigurationError(
            "n_symbols too small for the configured guard interval"
        )
    const = Qam16Constellation()
    bits = derived_rng(run_seed, _DOMAIN_BITS).integers(0, 2, 8 * n_symbols).astype(np.uint8)
    tx_frame = map_bits_to_symbols(bits, const)

    sps = spec.link.oversampling
    field = rrc_shape(tx_frame, spec.rolloff, sps, spec.rrc_span, baud_hz=spec.baud_hz)
    field = scale_to_power_dbm(field, power_dbm)
    # pad to an FFT-friendly length; trailing zeros fall in the guard region
    n_fast = sfft.next_fast_len(len(field))
    if n_fast > len(field):
        pad = n_fast - len(field)
        field = ComplexField(
            np.pad(field.x, (0, pad)), np.pad(field.y, (0, pad)), field.sample_rate
        )
    if spec.linewidth_hz > 0:
        field = wiener_phase_noise(
            field, spec.linewidth_hz, derived_rng(run_seed, _DOMAIN_PHASE_TX)
        )
    field = transmit_link(field, spec.link, derived_seed(run_seed, _DOMAIN_LINK))
    if spec.linewidth_hz > 0:
        field = wiener_phase_noise(
            field, spec.linewidth_hz, derived_rng(run_seed, _DOMAIN_PHASE_RX)
        )

    field = cd_compensate(
        field, spec.link.total_cd_ps_nm, spec.link.fiber.center_wavelength_um
    )
    field = matched_filter_downsample(field, spec.rolloff, sps, 2, spec.rrc_span)

    # per-polarization carrier recovery on symbol-spaced samples, applied to
    # both samples of each symbol
    dsp_cfg = spec.dsp_config()
    n_sym_rx = len(field) // 2
    x = field.x[: 2 * n_sym_rx]
    y = field.y[: 2 * n_sym_rx]
    if spec.linewidth_hz > 0:
        for arr in (x, y):
            ph = cpe_phases(arr[::2], dsp_cfg, const)
            arr *= np.exp(1j * np.repeat(ph, 2))
    field = ComplexField(x, y, field.sample_rate)

    rx_sym = SymbolFrame(field.x[::2], field.y[::2])
    sync = synchronize_scale(rx_sym, tx_frame)
    d = max(sync.delay, 0)
    n_use = min(n_symbols, n_sym_rx - d)
    g = spec.guard_symbols
    lo_sym, hi_sym = g, n_use - g
    if hi_sym - lo_sym < 256:
        raise ConfigurationError("too few symbols remain after guard trimming")
    tx_out = SymbolFrame(tx_frame.x[lo_sym:hi_sym], tx_frame.y[lo_sym:hi_sym])
    out = ComplexField(
        field.x[2 * (d + lo_sym) : 2 * (d + hi_sym)] / sync.scale_x,
        field.y[2 * (d + lo_sym) : 2 * (d + hi_sym)] / sync.scale_y,
        field.sample_rate,
    )
    return ChannelRun(tx_out, out, power_dbm, run_seed, sync.delay, sync.peak_corr)


def dataset_from_run(
    run: ChannelRun,
    window_len: int = 81,
    split: tuple[float, float, float] = (0.8, 0.1, 0.1),
) -> Dataset:
    from .training import build_dataset

    return build_dataset(
        run.tx,
        run.field,
        window_len,
        split,
        launch_power_dbm=run.launch_power_dbm,
        seed=run.seed,
    )


def test_slice(run: ChannelRun, ds: Dataset) -> tuple[SymbolFrame, ComplexField]:
    """The (tx, field) slice covered by a dataset's test windows.

    Window k of the dataset covers samples [2k, 2k + W); its output symbol
    aligns with tx[k + center].  Returning the slice starting at the first
    test window keeps evaluation strictly on held-out data.
    """
    te = ds.test_idx
    if len(te) == 0:
        raise ConfigurationError("dataset has no test split")
    k0, k1 = int(te[0]), int(te[-1])
    field = ComplexField(
        ds.field.x[2 * k0 : 2 * k1 + ds.window_len],
        ds.field.y[2 * k0 : 2 * k1 + ds.window_len],
        ds.field.sample_rate,
    )
    tx = SymbolFrame(run.tx.x[k0:], run.tx.y[k0:])
    return tx, field


# ---------------------------------------------------------------------------
# Dataset persistence
# ---------------------------------------------------------------------------


def save_dataset(path, ds: Dataset, config_hash: str = "") -> None:
    write_sections(
        path,
        {
            "config_hash": np.frombuffer(config_hash.encode(), dtype=np.uint8),
            "field_x": ds.field.x,
            "field_y": ds.field.y,
            "sample_rate": np.array([ds.field.sample_rate]),
            "targets": ds.targets.ravel(),
            "window_len": np.array([ds.window_len], dtype=np.int64),
            "train_idx": ds.train_idx.astype(np.int64),
            "val_idx": ds.val_idx.astype(np.int64),
            "test_idx": ds.test_idx.astype(np.int64),
            "launch_power_dbm": np.array([ds.launch_power_dbm]),
            "seed": np.array([ds.seed], dtype=np.int64),
        },
    )


def load_dataset(path) -> tuple[Dataset, str]:
    s = read_sections(path)
    ds = Dataset(
        ComplexField(s["field_x"], s["field_y"], float(s["sample_rate"][0])),
        s["targets"].reshape(-1, 4),
        int(s["window_len"][0]),
        s["train_idx"],
        s["val_idx"],
        s["test_idx"],
        float(s["launch_power_dbm"][0]),
        int(s["seed"][0]),
    )
    return ds, bytes(s["config_hash"]).decode()

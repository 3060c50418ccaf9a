"""Receiver DSP contracts: CD inversion, matched filtering, CPE, sync."""

import numpy as np
import pytest

from qfeq.dsp import (
    DspConfig,
    carrier_phase_estimate,
    cd_compensate,
    cpe_phases,
    matched_filter_downsample,
    synchronize_scale,
)
from qfeq.errors import ConfigurationError, SynchronizationError
from qfeq.fiber import FiberParams, propagate_span, wiener_phase_noise
from qfeq.signal import (
    ComplexField,
    Qam16Constellation,
    SymbolFrame,
    map_bits_to_symbols,
    rrc_shape,
)

CONST = Qam16Constellation()


def _qam_frame(n, seed=0):
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2, 8 * n).astype(np.uint8)
    return map_bits_to_symbols(bits, CONST)


def _random_field(n=4096, seed=0, sample_rate=256e9):
    rng = np.random.default_rng(seed)
    return ComplexField(
        rng.normal(size=n) + 1j * rng.normal(size=n),
        rng.normal(size=n) + 1j * rng.normal(size=n),
        sample_rate,
    )


class TestCdCompensate:
    def test_zero_cd_identity(self):
        f = _random_field(1024)
        out = cd_compensate(f, 0.0)
        np.testing.assert_array_equal(out.x, f.x)

    def test_inverts_cd_only_link(self):
        f = _random_field(8192)
        fiber = FiberParams(loss_db_km=0.0, gamma_nl=0.0, length_km=50.0)
        prop = f
        for _ in range(9):
            prop = propagate_span(prop, fiber, 10.0)
        rec = cd_compensate(prop, total_cd_ps_nm=9 * 50 * 2.8)
        scale = np.max(np.abs(f.x))
        np.testing.assert_allclose(rec.x, f.x, atol=1e-6 * scale)
        np.testing.assert_allclose(rec.y, f.y, atol=1e-6 * scale)

    def test_roundtrip_on_arbitrary_field(self):
        f = _random_field(4096, seed=9)
        out = cd_compensate(cd_compensate(f, 1260.0), -1260.0)
        np.testing.assert_allclose(out.x, f.x, atol=1e-9)


class TestMatchedFilter:
    def test_back_to_back_recovers_symbols(self):
        # residual EVM is set by filter truncation: the default 65-symbol
        # span floors near 1e-3, a 257-symbol span gets below 1e-4
        frame = _qam_frame(4000)

        def chain_evm(span):
            field = rrc_shape(frame, 0.1, 8, span, baud_hz=34.4e9)
            rx = matched_filter_downsample(field, 0.1, 8, 2, span_symbols=span)
            sym = SymbolFrame(rx.x[::2], rx.y[::2])
            res = synchronize_scale(sym, frame)
            sl = slice(100, len(res.frame) - 100)
            return np.sqrt(
                np.mean(np.abs(res.frame.x[sl] - frame.x[sl]) ** 2)
                / np.mean(np.abs(frame.x[sl]) ** 2)
            )

        assert chain_evm(65) < 2e-3
        assert chain_evm(257) < 1e-4

    def test_equal_rates_filter_only(self):
        f = _random_field(2048)
        out = matched_filter_downsample(f, 0.1, 2, 2)
        assert len(out) == len(f) + 2 * 65 + 0  # full convolution growth
        assert out.sample_rate == f.sample_rate

    def test_indivisible_rates_rejected(self):
        with pytest.raises(ConfigurationError):
            matched_filter_downsample(_random_field(256), 0.1, 8, 3)

    def test_sampling_phase_search_absorbs_shift(self):
        frame = _qam_frame(3000, seed=4)
        field = rrc_shape(frame, 0.1, 8, 65, baud_hz=34.4e9)
        for shift in (1, 3, 6):
            shifted = ComplexField(field.x[shift:], field.y[shift:], field.sample_rate)
            rx = matched_filter_downsample(shifted, 0.1, 8, 2)
            sym = SymbolFrame(rx.x[::2], rx.y[::2])
            res = synchronize_scale(sym, frame)
            n = len(res.frame)
            evm = np.sqrt(np.mean(np.abs(res.frame.x[:n] - frame.x[:n]) ** 2))
            assert evm < 1e-3


class TestCpe:
    def test_constant_offset_recovered(self):
        frame = _qam_frame(2048, seed=1)
        rot = frame.x * np.exp(1j * np.pi / 7)
        cfg = DspConfig()
        out = carrier_phase_estimate(rot, cfg, pilot_ref=frame.x[:256])
        phase_err = np.angle(np.sum(out * np.conj(frame.x)))
        assert abs(phase_err) < 0.01
        np.testing.assert_allclose(np.abs(out), np.abs(rot), atol=1e-12)

    def test_zero_offset_near_identity(self):
        frame = _qam_frame(1024, seed=2)
        out = carrier_phase_estimate(frame.x, DspConfig(), pilot_ref=frame.x[:256])
        np.testing.assert_allclose(out, frame.x, atol=1e-9)

    def test_residual_phase_zero_mean_per_block(self):
        frame = _qam_frame(1024, seed=3)
        rot = frame.x * np.exp(1j * 0.11)
        cfg = DspConfig()
        out = carrier_phase_estimate(rot, cfg, pilot_ref=frame.x[:256])
        for b in range(len(out) // cfg.cpe_block_len):
            blk = out[b * cfg.cpe_block_len : (b + 1) * cfg.cpe_block_len]
            ref = frame.x[b * cfg.cpe_block_len : (b + 1) * cfg.cpe_block_len]
            assert abs(np.angle(np.sum(blk * np.conj(ref)))) < 1e-3

    def test_wiener_walk_penalty_below_half_db(self):
        # oracle: genie phase correction on the same noisy sequence
        n = 32768
        frame = _qam_frame(n, seed=5)
        rng = np.random.default_rng(17)
        snr_db = 15.0
        sigma = np.sqrt(10 ** (-snr_db / 10) / 2)
        noise = sigma * (rng.normal(size=n) + 1j * rng.normal(size=n))
        field = ComplexField(frame.x, frame.y, 34.4e9)
        walked = wiener_phase_noise(field, 100e3, rng_seed=23)
        true_phase = np.angle(walked.x * np.conj(frame.x) + walked.y * np.conj(frame.y))
        rx = walked.x + noise
        genie = rx * np.exp(-1j * true_phase)
        evm_genie = np.sqrt(np.mean(np.abs(genie - frame.x) ** 2))
        out = carrier_phase_estimate(rx, DspConfig(), pilot_ref=frame.x[:256])
        evm_cpe = np.sqrt(np.mean(np.abs(out - frame.x) ** 2))
        penalty_db = 20 * np.log10(evm_cpe / evm_genie)
        assert penalty_db < 0.5

    def test_magnitudes_never_change(self):
        frame = _qam_frame(512, seed=6)
        rot = frame.x * np.exp(1j * 0.3)
        out = carrier_phase_estimate(rot, DspConfig())
        np.testing.assert_allclose(np.abs(out), np.abs(rot), atol=1e-12)

    def test_phases_piecewise_constant_per_block(self):
        frame = _qam_frame(512, seed=8)
        cfg = DspConfig()
        ph = cpe_phases(frame.x * np.exp(1j * 0.2), cfg)
        blocks = ph[: 512 // cfg.cpe_block_len * cfg.cpe_block_len].reshape(
            -1, cfg.cpe_block_len
        )
        assert np.all(blocks == blocks[:, :1])


class TestSynchronizeScale:
    def test_known_delay_and_unit_scale(self):
        frame = _qam_frame(4000, seed=7)
        rx = SymbolFrame(
            np.concatenate([np.zeros(17, complex), frame.x]),
            np.concatenate([np.zeros(17, complex), frame.y]),
        )
        res = synchronize_scale(rx, frame)
        assert res.delay == 17
        assert abs(res.scale - 1.0) < 1e-9
        np.testing.assert_allclose(res.frame.x, frame.x, atol=1e-12)

    def test_complex_gain_recovered(self):
        frame = _qam_frame(2000, seed=8)
        rx = SymbolFrame(0.5j * frame.x, 0.5j * frame.y)
        res = synchronize_scale(rx, frame)
        assert abs(res.scale - 0.5j) < 1e-9
        assert abs(res.scale_y - 0.5j) < 1e-9

    def test_unrelated_sequences_fail(self):
        a = _qam_frame(4000, seed=9)
        b = _qam_frame(4000, seed=10)
        with pytest.raises(SynchronizationError):
            synchronize_scale(a, b)

    def test_short_overlap_rejected(self):
        a = _qam_frame(100, seed=11)
        with pytest.raises(Exception):
            synchronize_scale(a, a, min_overlap=1000)

"""Split-step propagation physics and amplifier noise contracts."""

import numpy as np
import pytest

from qfeq.errors import ConfigurationError
from qfeq.fiber import (
    FiberParams,
    LinkConfig,
    ase_psd_w_hz,
    edfa_amplify,
    propagate_span,
    transmit_link,
    wiener_phase_noise,
)
from qfeq.signal import ComplexField, average_power_w


def _random_field(n=4096, seed=0, sample_rate=64e9, power_scale=0.01):
    rng = np.random.default_rng(seed)
    x = power_scale * (rng.normal(size=n) + 1j * rng.normal(size=n))
    y = power_scale * (rng.normal(size=n) + 1j * rng.normal(size=n))
    return ComplexField(x, y, sample_rate)


def _gaussian_pulse_field(n=8192, sample_rate=256e9, t0_s=50e-12, f_offset=0.0):
    t = (np.arange(n) - n / 2) / sample_rate
    env = np.exp(-(t**2) / (2 * t0_s**2)).astype(complex)
    if f_offset:
        env = env * np.exp(2j * np.pi * f_offset * t)
    return ComplexField(env, np.zeros_like(env), sample_rate)


class TestPropagateSpan:
    def test_cd_only_preserves_magnitude_spectrum(self):
        f = _random_field()
        fiber = FiberParams(loss_db_km=0.0, gamma_nl=0.0)
        out = propagate_span(f, fiber, 5.0)
        for a, b in ((f.x, out.x), (f.y, out.y)):
            np.testing.assert_allclose(
                np.abs(np.fft.fft(b)), np.abs(np.fft.fft(a)), rtol=1e-9
            )

    def test_loss_matches_db_arithmetic(self):
        f = _random_field()
        fiber = FiberParams(loss_db_km=0.23, gamma_nl=0.0, length_km=50.0)
        out = propagate_span(f, fiber, 1.0)
        drop_db = 10 * np.log10(average_power_w(f) / average_power_w(out))
        assert abs(drop_db - 11.5) < 0.01

    def test_dispersionless_spm_matches_closed_form(self):
        n = 2048
        rng = np.random.default_rng(4)
        x = 0.03 * (rng.normal(size=n) + 1j * rng.normal(size=n))
        f = ComplexField(x, np.zeros(n, complex), 32e9)
        fiber = FiberParams(
            loss_db_km=0.0, dispersion_ps_nm_km=0.0, gamma_nl=2.5, length_km=50.0
        )
        out = propagate_span(f, fiber, 0.5)
        expected = x * np.exp(1j * (8.0 / 9.0) * 2.5 * np.abs(x) ** 2 * 50.0)
        np.testing.assert_allclose(out.x, expected, atol=1e-6 * np.abs(x).max())

    def test_energy_conserved_without_loss_or_noise(self):
        f = _gaussian_pulse_field()
        fiber = FiberParams(loss_db_km=0.0, gamma_nl=2.5)
        out = propagate_span(f, fiber, 0.5)
        e_in = average_power_w(f)
        e_out = average_power_w(out)
        assert abs(e_out / e_in - 1.0) < 1e-9

    def test_step_halving_shrinks_error(self):
        f = _gaussian_pulse_field(t0_s=10e-12)
        f = ComplexField(f.x * np.sqrt(0.01), f.y, f.sample_rate)  # ~10 mW peak
        fiber = FiberParams(loss_db_km=0.0, gamma_nl=2.5, length_km=50.0)
        ref = propagate_span(f, fiber, 0.125)
        e_h = propagate_span(f, fiber, 4.0)
        e_h2 = propagate_span(f, fiber, 2.0)
        err_h = np.linalg.norm(e_h.x - ref.x)
        err_h2 = np.linalg.norm(e_h2.x - ref.x)
        assert err_h / err_h2 >= 3.0

    def test_dispersion_sign_convention_and_group_delay(self):
        # oracle: a tone at positive envelope frequency df accumulates group
        # delay -beta2 * 2pi*df * L (positive-frequency envelope bins sit
        # below the optical carrier, so D > 0 delays them)
        df = 30e9
        f = _gaussian_pulse_field(n=1 << 15, sample_rate=256e9, t0_s=100e-12, f_offset=df)
        fiber = FiberParams(loss_db_km=0.0, gamma_nl=0.0, length_km=50.0)
        out = f
        for _ in range(9):
            out = propagate_span(out, fiber, 10.0)
        t = np.arange(len(f)) / f.sample_rate
        c_in = np.sum(t * np.abs(f.x) ** 2) / np.sum(np.abs(f.x) ** 2)
        c_out = np.sum(t * np.abs(out.x) ** 2) / np.sum(np.abs(out.x) ** 2)
        shift = c_out - c_in
        expected = -fiber.beta2_s2_km * (2 * np.pi * df) * 450.0
        assert expected > 0
        assert shift > 0
        assert abs(shift - expected) < 0.1 * abs(expected)

    def test_unchirped_pulse_broadens(self):
        f = _gaussian_pulse_field(n=1 << 15, sample_rate=256e9, t0_s=10e-12)
        fiber = FiberParams(loss_db_km=0.0, gamma_nl=0.0, length_km=50.0)
        out = f
        for _ in range(9):
            out = propagate_span(out, fiber, 10.0)
        t = np.arange(len(f)) / f.sample_rate

        def rms_width(x):
            p = np.abs(x) ** 2
            c = np.sum(t * p) / np.sum(p)
            return np.sqrt(np.sum((t - c) ** 2 * p) / np.sum(p))

        w_in, w_out = rms_width(f.x), rms_width(out.x)
        beta2_l = fiber.beta2_s2_km * 450.0
        expected = w_in * np.sqrt(1.0 + (beta2_l / (10e-12) ** 2) ** 2)
        assert w_out > 5 * w_in
        assert abs(w_out / expected - 1.0) < 0.05

    def test_bad_step_rejected(self):
        f = _random_field(256)
        with pytest.raises(ConfigurationError):
            propagate_span(f, FiberParams(), 0.0)
        with pytest.raises(ConfigurationError):
            propagate_span(f, FiberParams(length_km=1.0), 2.0)


class TestEdfa:
    def test_zero_noise_gain_identity(self):
        f = _random_field(512)
        # linear noise figure of 2 at unit gain zeroes the ASE term
        out = edfa_amplify(f, 0.0, 10 * np.log10(2.0), rng_seed=1)
        np.testing.assert_allclose(out.x, f.x, atol=1e-15)
        np.testing.assert_allclose(out.y, f.y, atol=1e-15)

    def test_noise_variance_matches_psd(self):
        # oracle: sample variance of the added noise vs closed-form PSD * B
        n = 1_000_000
        f = ComplexField(np.zeros(n, complex), np.zeros(n, complex), 64e9)
        gain_db, nf_db = 11.5, 5.0
        out = edfa_amplify(f, gain_db, nf_db, rng_seed=42)
        expected = ase_psd_w_hz(gain_db, nf_db, 299792458.0 / 1.55e-6) * 64e9
        got = np.mean(np.abs(out.x) ** 2)
        assert abs(got / expected - 1.0) < 0.05

    def test_same_seed_bit_identical(self):
        f = _random_field(1024)
        a = edfa_amplify(f, 11.5, 5.0, rng_seed=7)
        b = edfa_amplify(f, 11.5, 5.0, rng_seed=7)
        np.testing.assert_array_equal(a.x, b.x)
        np.testing.assert_array_equal(a.y, b.y)

    def test_negative_gain_rejected(self):
        with pytest.raises(ConfigurationError):
            edfa_amplify(_random_field(64), -1.0, 5.0, rng_seed=0)


class TestTransmitLink:
    def test_zero_spans_identity(self):
        f = _random_field(512)
        link = LinkConfig(spans=0)
        out = transmit_link(f, link, rng_seed=3)
        np.testing.assert_array_equal(out.x, f.x)

    def test_reproducible_output(self):
        f = _random_field(2048, sample_rate=256e9)
        link = LinkConfig(spans=3, step_km=2.0)
        a = transmit_link(f, link, rng_seed=11)
        b = transmit_link(f, link, rng_seed=11)
        np.testing.assert_array_equal(a.x, b.x)
        c = transmit_link(f, link, rng_seed=12)
        assert not np.array_equal(a.x, c.x)

    def test_gain_balances_loss(self):
        f = _random_field(4096, sample_rate=256e9, power_scale=0.02)
        link = LinkConfig(spans=9, step_km=2.0)
        out = transmit_link(f, link, rng_seed=5)
        p_in, p_out = average_power_w(f), average_power_w(out)
        # output power = input power + accumulated ASE, so slightly above
        assert p_out >= p_in
        assert p_out / p_in < 1.2

    def test_default_link_matches_span_loss(self):
        link = LinkConfig()
        assert abs(link.span_gain_db - 11.5) < 1e-12
        assert abs(link.total_cd_ps_nm - 1260.0) < 1e-9


class TestPhaseNoise:
    def test_zero_linewidth_identity(self):
        f = _random_field(256)
        out = wiener_phase_noise(f, 0.0, rng_seed=1)
        np.testing.assert_array_equal(out.x, f.x)

    def test_walk_variance_scales_with_linewidth(self):
        n = 200_000
        f = ComplexField(np.ones(n, complex), np.ones(n, complex), 34.4e9)
        out = wiener_phase_noise(f, 100e3, rng_seed=2)
        dphi = np.diff(np.unwrap(np.angle(out.x)))
        var = np.var(dphi)
        expected = 2 * np.pi * 100e3 / 34.4e9
        assert abs(var / expected - 1.0) < 0.05
        # common walk on both polarizations
        np.testing.assert_allclose(np.angle(out.x), np.angle(out.y), atol=1e-12)

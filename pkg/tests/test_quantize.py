"""Codebook construction and quantizer contracts."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qfeq.errors import ConfigurationError, LengthError, ModeError, RangeError
from qfeq.model import forward_batch, init_params
from qfeq.quantize import (
    Codebook,
    QuantScheme,
    RangeMode,
    apot_term_numerators,
    build_apot_codebook,
    build_pot_codebook,
    build_uniform_codebook,
    calibrate_range,
    model_size_bits,
    quantize_model_ptq,
    quantize_to_codebook,
    scheme_from_label,
    size_reduction_vs_fp32,
    uniform_quantize,
)


def _brute_force_nearest(w, symbols):
    """Oracle: distance scan with smaller-magnitude-then-smaller-index ties."""
    d = np.abs(symbols - w)
    best = np.flatnonzero(np.isclose(d, d.min(), rtol=0, atol=0))
    if len(best) > 1:
        mags = np.abs(symbols[best])
        best = best[np.flatnonzero(mags == mags.min())]
    return int(best.min())


class TestUniformQuantize:
    def test_endpoints_and_clipping(self):
        assert uniform_quantize(-1.0, -1, 1, 5) == -1.0
        assert uniform_quantize(1.0, -1, 1, 5) == 1.0
        assert uniform_quantize(101.0, -1, 1, 5) == 1.0
        assert uniform_quantize(-55.0, -1, 1, 5) == -1.0

    def test_worked_example(self):
        # s = 0.5, r = round(2.6) = 3 -> -1 + 1.5 = 0.5
        assert uniform_quantize(0.3, -1, 1, 5) == 0.5

    def test_bad_range_rejected(self):
        with pytest.raises(RangeError):
            uniform_quantize(0.0, 1.0, -1.0, 4)
        with pytest.raises(RangeError):
            uniform_quantize(0.0, 0.0, 0.0, 4)

    def test_matches_brute_force_search(self):
        rng = np.random.default_rng(11)
        for _ in range(2000):
            a = rng.uniform(-5, 1)
            c = a + rng.uniform(0.1, 6)
            n = int(rng.integers(2, 257))
            w = rng.uniform(a - 1, c + 1)
            got = uniform_quantize(w, a, c, n)
            s = (c - a) / (n - 1)
            symbols = a + s * np.arange(n)
            assert got == symbols[_brute_force_nearest(w, symbols)]

    @given(
        a=st.floats(-10, 9),
        width=st.floats(0.5, 20),
        n=st.integers(2, 512),
        t=st.floats(-0.2, 1.2),
    )
    @settings(max_examples=300, deadline=None)
    def test_projection_error_bound(self, a, width, n, t):
        c = a + width
        w = a + t * width
        s = width / (n - 1)
        w_hat = uniform_quantize(w, a, c, n)
        if a <= w <= c:
            assert abs(w_hat - w) <= s / 2 + 1e-12
        assert a <= w_hat <= c + 1e-12

    @given(
        w1=st.floats(-3, 3),
        w2=st.floats(-3, 3),
        n=st.integers(2, 64),
    )
    @settings(max_examples=200, deadline=None)
    def test_non_expansive(self, w1, w2, n):
        s = 2.0 / (n - 1)
        q1 = uniform_quantize(w1, -1, 1, n)
        q2 = uniform_quantize(w2, -1, 1, n)
        assert abs(q1 - q2) <= abs(w1 - w2) + s + 1e-12


class TestPotCodebook:
    def test_three_bit_book_contents(self):
        book = build_pot_codebook(1.0, 3)
        want = np.sort([0, 1, 0.5, 0.25, 0.125, -1, -0.5, -0.25])
        np.testing.assert_allclose(book.symbols, want, atol=0)
        assert book.n_symbols == 8 == 1 << 3

    def test_strict_flag_keeps_extra_symbol(self):
        book = build_pot_codebook(1.0, 3, strict_size=True)
        assert book.n_symbols == 9
        assert -0.125 in book.symbols.tolist()

    def test_alpha_scales_all_nonzero_symbols(self):
        b1 = build_pot_codebook(1.0, 4)
        b2 = build_pot_codebook(2.0, 4)
        np.testing.assert_allclose(b2.symbols, 2 * b1.symbols, atol=0)

    def test_nearest_symbol_example(self):
        book = build_pot_codebook(1.0, 3)
        val, idx = quantize_to_codebook(0.3, book)
        assert val == 0.25
        assert idx == _brute_force_nearest(0.3, book.symbols)

    def test_small_precision_rejected(self):
        with pytest.raises(ConfigurationError):
            build_pot_codebook(1.0, 1)

    def test_denser_near_zero_than_uniform(self):
        for b in (4, 5, 6, 8):
            pot = build_pot_codebook(1.0, b)
            uni = build_uniform_codebook(-1.0, 1.0, b)
            cutoff = (uni.c - uni.a) / 8
            n_pot = np.sum(np.abs(pot.symbols) < cutoff)
            n_uni = np.sum(np.abs(uni.symbols) < cutoff)
            assert n_pot > n_uni


class TestApotCodebook:
    @pytest.mark.parametrize("b,b0", [(4, 2), (6, 2), (6, 3), (8, 2), (8, 4)])
    def test_exhaustive_enumeration_gives_exactly_2_pow_b(self, b, b0):
        book = build_apot_codebook(1.0, 0.0, b, b0)
        # oracle: cartesian product over the per-term choices, dedup
        terms = apot_term_numerators(b, b0)
        sums = {
            sum(combo) - book.center_num for combo in itertools.product(*terms)
        }
        assert len(sums) == 1 << b
        assert book.n_symbols == 1 << b
        got = np.sort(np.array(sorted(sums), dtype=np.float64)) * 2.0 ** -book.dyadic_exp
        np.testing.assert_allclose(book.symbols, got, atol=0)

    def test_zero_is_a_symbol_and_range_symmetric(self):
        for b, b0 in [(4, 2), (6, 2), (6, 3), (8, 4)]:
            book = build_apot_codebook(1.3, 0.0, b, b0)
            assert 0.0 in book.symbols.tolist()
            assert np.isclose(book.symbols[0], -book.symbols[-1])

    def test_beta_shifts_every_symbol(self):
        base = build_apot_codebook(1.0, 0.0, 6, 2)
        shifted = build_apot_codebook(1.0, 0.5, 6, 2)
        np.testing.assert_allclose(shifted.symbols, base.symbols + 0.5, atol=1e-15)

    def test_degenerate_n1_equals_pot(self):
        apot = build_apot_codebook(2.0, 0.25, 4, 4)
        pot = build_pot_codebook(1.0, 4)
        np.testing.assert_allclose(apot.symbols, 2.0 * pot.symbols + 0.25, atol=0)

    def test_indivisible_bits_rejected(self):
        with pytest.raises(ConfigurationError):
            build_apot_codebook(1.0, 0.0, 7, 2)

    def test_gamma_scales(self):
        a1 = build_apot_codebook(1.0, 0.0, 6, 2)
        a2 = build_apot_codebook(3.0, 0.0, 6, 2)
        np.testing.assert_allclose(a2.symbols, 3 * a1.symbols, atol=0)

    def test_dyadic_terms_reconstruct_symbols(self):
        # per-symbol shift/sign decomposition must rebuild the numerators
        book = build_apot_codebook(1.7, 0.1, 6, 2)
        rebuilt = np.zeros(book.n_symbols, dtype=np.int64)
        for k in range(book.n_symbols):
            for t in range(book.term_shifts.shape[1]):
                sh = book.term_shifts[k, t]
                if sh >= 0:
                    rebuilt[k] += int(book.term_signs[k, t]) << int(sh)
        np.testing.assert_array_equal(rebuilt - book.center_num, book.dyadic_num)
        np.testing.assert_allclose(
            book.gamma * book.dyadic_num * 2.0 ** -book.dyadic_exp + book.beta,
            book.symbols,
            rtol=1e-15,
        )


class TestQuantizeToCodebook:
    def test_exact_symbol_maps_to_itself(self):
        book = build_pot_codebook(1.0, 4)
        for k, sym in enumerate(book.symbols):
            val, idx = quantize_to_codebook(float(sym), book)
            assert val == sym and idx == k

    def test_midpoint_tie_prefers_smaller_magnitude(self):
        book = Codebook("uniform", np.array([-1.0, 0.0, 1.0, 2.0]), 2, -1.0, 2.0)
        val, _ = quantize_to_codebook(0.5, book)
        assert val == 0.0
        val, _ = quantize_to_codebook(-0.5, book)
        assert val == 0.0
        val, _ = quantize_to_codebook(1.5, book)
        assert val == 1.0

    def test_uniform_book_agrees_with_formula_on_grid(self):
        a, c, b = -0.7, 1.1, 5
        book = build_uniform_codebook(a, c, b)
        grid = np.linspace(a - 1, c + 1, 10_000)
        formula = uniform_quantize(grid, a, c, book.n_symbols)
        via_book = book.quantize_array(grid)
        np.testing.assert_array_equal(formula, via_book)

    def test_membership_of_quantizer_outputs(self):
        rng = np.random.default_rng(5)
        for book in (
            build_uniform_codebook(-0.3, 0.9, 6),
            build_pot_codebook(0.7, 5),
            build_apot_codebook(1.1, 0.0, 6, 2),
        ):
            w = rng.uniform(-2, 2, 5000)
            q = book.quantize_array(w)
            assert np.all(np.isin(q, book.symbols))


class TestCalibrateRange:
    def test_static_ignores_data(self):
        assert calibrate_range([5.0, 6.0], RangeMode("static", a=-1, c=1)) == (-1, 1)

    def test_dynamic_min_max(self):
        assert calibrate_range([-0.2, 0.7], RangeMode()) == (-0.2, 0.7)

    def test_percentile_clips_heavy_tails(self):
        rng = np.random.default_rng(3)
        vals = rng.standard_t(df=1.5, size=20_000)
        a, c = calibrate_range(vals, RangeMode(percentile=99.9))
        assert vals.min() < a < c < vals.max()
        lo, hi = np.percentile(vals, [0.1, 99.9])
        assert np.isclose(a, lo) and np.isclose(c, hi)

    def test_empty_rejected(self):
        with pytest.raises(LengthError):
            calibrate_range([], RangeMode())

    def test_constant_values_widen(self):
        a, c = calibrate_range(np.zeros(5), RangeMode())
        assert a == 0.0 and c == 1.0

    def test_straddling_data_brackets_zero(self):
        a, c = calibrate_range([-0.4, 0.1, 0.5], RangeMode())
        assert a <= 0 <= c


class TestSchemeLabels:
    def test_named_schemes(self):
        s = scheme_from_label("PTQ-8")
        assert (s.scheme, s.mode, s.b1, s.b2) == ("uniform", "ptq", 6, 8)
        s = scheme_from_label("APoT-8")
        assert (s.scheme, s.mode, s.b1, s.b2, s.b0) == ("apot", "ptq", 6, 8, 2)
        s = scheme_from_label("TAQ-6")
        assert (s.scheme, s.mode, s.b1, s.b2) == ("uniform", "taq", 6, 6)
        s = scheme_from_label("PTQ-U5")
        assert (s.scheme, s.mode, s.b1, s.b2) == ("uniform", "ptq", 5, 5)

    def test_unknown_label_rejected(self):
        with pytest.raises(ConfigurationError):
            scheme_from_label("UQ")
        with pytest.raises(ConfigurationError):
            scheme_from_label("magic")

    def test_bit_bounds_enforced(self):
        with pytest.raises(ConfigurationError):
            QuantScheme("x", "uniform", "ptq", b1=1, b2=8)
        with pytest.raises(ConfigurationError):
            QuantScheme("x", "uniform", "ptq", b1=8, b2=17)


def _calibration_windows(n=64, window_len=81, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(scale=0.8, size=(n, 4, window_len))


class TestQuantizeModelPtq:
    def test_mixed_precision_membership(self):
        params = init_params(seed=1)
        scheme = scheme_from_label("PTQ-8")
        q = quantize_model_ptq(params, scheme, _calibration_windows())
        for name, arr in q.layer_arrays().items():
            book = q.quant.weight_books[name]
            assert np.all(np.isin(arr.ravel(), book.symbols))
            want_bits = 6 if name.startswith("conv") else 8
            assert book.b == want_bits
            assert book.n_symbols == 1 << want_bits

    def test_idempotent(self):
        params = init_params(seed=2)
        scheme = scheme_from_label("PTQ-U6")
        cal = _calibration_windows()
        q1 = quantize_model_ptq(params, scheme, cal)
        q2 = quantize_model_ptq(q1, scheme, cal)
        for (n1, a1), (n2, a2) in zip(q1.layer_arrays().items(), q2.layer_arrays().items()):
            assert n1 == n2
            np.testing.assert_array_equal(a1, a2)

    def test_high_rate_is_near_lossless(self):
        params = init_params(seed=3)
        cal = _calibration_windows()
        wins = _calibration_windows(n=16, seed=9)
        ref = forward_batch(wins, params)
        errs = {}
        for b in (8, 16):
            scheme = QuantScheme(
                f"PTQ-U{b}", "uniform", "ptq", b1=b, b2=b, activation_bits=None
            )
            q = quantize_model_ptq(params, scheme, cal)
            errs[b] = np.max(np.abs(forward_batch(wins, q) - ref))
        assert errs[16] < 1e-3
        assert errs[16] < errs[8] / 16

    def test_taq_scheme_rejected(self):
        with pytest.raises(ModeError):
            quantize_model_ptq(
                init_params(), scheme_from_label("TAQ-6"), _calibration_windows()
            )

    def test_keep_biases_full_precision_flag(self):
        params = init_params(seed=4)
        scheme = QuantScheme("x", "uniform", "ptq", b1=6, b2=6, quantize_biases=False)
        q = quantize_model_ptq(params, scheme, _calibration_windows())
        assert "dense_b" not in q.quant.weight_books
        np.testing.assert_array_equal(q.dense_b, params.dense_b)

    def test_effective_bits_reported(self):
        book = build_apot_codebook(1.0, 0.0, 8, 2)
        assert book.effective_bits == 8.0


class TestModelSize:
    def test_fp32_size(self):
        params = init_params()
        assert model_size_bits(params) == 32 * 17068
        assert params.weight_count() == 17068

    def test_five_bit_reduction(self):
        params = init_params(seed=5)
        scheme = QuantScheme(
            "PTQ-U5", "uniform", "ptq", b1=5, b2=5, activation_bits=None
        )
        q = quantize_model_ptq(params, scheme, _calibration_windows())
        assert size_reduction_vs_fp32(q) >= 0.843

    def test_mixed_size_formula(self):
        params = init_params(seed=6)
        scheme = QuantScheme(
            "PTQ-M", "uniform", "ptq", b1=6, b2=8, activation_bits=None
        )
        q = quantize_model_ptq(params, scheme, _calibration_windows())
        w_conv = 2 * 2 * 41
        w_dense = 16400 + 100 + 400 + 4
        overhead = 32 * 2 * 6  # two scalars per weight-tensor codebook
        assert model_size_bits(q) == 6 * w_conv + 8 * w_dense + overhead

    def test_shared_filters_counted_once(self):
        params = init_params(share_filters=True)
        assert params.weight_count() == 17068 - 82

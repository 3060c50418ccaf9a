"""Integer/shift-add inference vs the dequantized float reference."""

import numpy as np
import pytest

from qfeq.errors import AccumulatorOverflowError, StateError
from qfeq.fixedpoint import FixedPointEngine, forward_quantized_int
from qfeq.model import InputWindow, forward, init_params
from qfeq.quantize import QuantScheme, quantize_model_ptq, scheme_from_label


def _calibration(n=96, wl=81, seed=0, scale=0.8):
    rng = np.random.default_rng(seed)
    return rng.normal(scale=scale, size=(n, 4, wl))


def _window(wl=81, seed=0, scale=0.8):
    rng = np.random.default_rng(seed)
    return InputWindow(*(rng.normal(scale=scale, size=wl) for _ in range(4)))


def _quantized(label="PTQ-8", seed=1, scheme=None):
    params = init_params(seed=seed)
    scheme = scheme or scheme_from_label(label)
    return quantize_model_ptq(params, scheme, _calibration())


class TestUniformIntegerPath:
    def test_matches_float_reference_within_2_pow_20(self):
        q = _quantized("PTQ-8")
        eng = FixedPointEngine(q)
        worst = 0.0
        for seed in range(50):
            w = _window(seed=seed + 100)
            got = eng.forward(w)
            ref = forward(w, q)
            worst = max(worst, np.max(np.abs(got - ref)))
        assert worst <= 2.0**-20

    def test_uniform_path_uses_multipliers(self):
        q = _quantized("PTQ-U6")
        eng = FixedPointEngine(q)
        eng.forward(_window(seed=1))
        assert eng.counts.weight_mults > 0
        assert eng.counts.shift_adds == 0

    def test_one_shot_helper(self):
        q = _quantized("PTQ-U6")
        w = _window(seed=2)
        np.testing.assert_allclose(
            forward_quantized_int(w, q), FixedPointEngine(q).forward(w), atol=0
        )


class TestShiftAddPath:
    def test_apot_runs_without_multiplies(self):
        q = _quantized("APoT-8")
        eng = FixedPointEngine(q)
        for seed in range(5):
            eng.forward(_window(seed=seed))
        assert eng.counts.weight_mults == 0
        assert eng.counts.shift_adds > 0

    def test_apot_matches_float_reference(self):
        q = _quantized("APoT-8")
        eng = FixedPointEngine(q)
        worst = 0.0
        for seed in range(30):
            w = _window(seed=seed + 500)
            worst = max(worst, np.max(np.abs(eng.forward(w) - forward(w, q))))
        assert worst <= 2.0**-20

    def test_pot_scheme_also_shift_add(self):
        q = _quantized(scheme=QuantScheme("pot5", "pot", "ptq", b1=5, b2=5))
        eng = FixedPointEngine(q)
        eng.forward(_window(seed=3))
        assert eng.counts.weight_mults == 0
        assert eng.counts.shift_adds > 0


class TestContracts:
    def test_all_zero_quantized_weights_give_exact_zero_pre_bias(self):
        params = init_params(seed=4)
        for arr in (params.conv_x, params.conv_y, params.dense_w, params.head_w):
            arr[...] = 0.0
        params.dense_b[...] = 0.0
        q = quantize_model_ptq(params, scheme_from_label("PTQ-U6"), _calibration())
        eng = FixedPointEngine(q)
        out = eng.forward(_window(seed=5))
        np.testing.assert_array_equal(out, q.head_b)

    def test_unquantized_model_rejected(self):
        with pytest.raises(StateError):
            FixedPointEngine(init_params())

    def test_missing_activation_books_rejected(self):
        params = init_params(seed=6)
        scheme = QuantScheme(
            "weights-only", "uniform", "ptq", b1=8, b2=8, activation_bits=None
        )
        q = quantize_model_ptq(params, scheme, _calibration())
        with pytest.raises(StateError):
            FixedPointEngine(q)

    def test_overflow_detected_not_wrapped(self):
        params = init_params(seed=7)
        params.dense_w[...] = 300.0 * np.sign(params.dense_w)
        scheme = QuantScheme(
            "wide", "uniform", "ptq", b1=16, b2=16, activation_bits=16
        )
        q = quantize_model_ptq(
            params, scheme, _calibration(scale=300.0)
        )
        eng = FixedPointEngine(q)
        with pytest.raises(AccumulatorOverflowError):
            eng.forward(_window(seed=8, scale=300.0))

    def test_counts_reset(self):
        q = _quantized("PTQ-U6")
        eng = FixedPointEngine(q)
        eng.forward(_window(seed=9))
        eng.reset_counts()
        assert eng.counts.weight_mults == 0

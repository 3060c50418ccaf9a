"""Split-step fiber propagation with per-span amplification and ASE noise.

The link model is the averaged dual-polarization propagation equation with
an 8/9 nonlinear coupling factor, integrated by the symmetric split-step
Fourier method: linear half-steps (loss + chromatic dispersion, frequency
domain) alternate with nonlinear phase rotations (time domain).  Each span
ends in an amplifier that by default exactly compensates the span loss and
adds circularly symmetric white Gaussian noise set by its noise figure.

Units at the API surface match data-sheet conventions (dB/km, ps/(nm km),
1/(W km), km, um); fields are complex envelopes in sqrt(W).  Spectral sign
convention: positive-frequency envelope components sit below the optical
carrier, so positive dispersion delays them; ``dsp.cd_compensate`` applies
the matching inverse.  All randomness enters through explicit seeds;
nothing touches global RNG state.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.fft as sfft

from . import kernels
from .errors import ConfigurationError
from .signal import ComplexField

C_M_S = 299792458.0
PLANCK_J_S = 6.62607015e-34
_FFT_WORKERS = max(1, os.cpu_count() or 1)


@dataclass(frozen=True)
class FiberParams:
    """Per-kilometer fiber characteristics."""

    loss_db_km: float = 0.23
    dispersion_ps_nm_km: float = 2.8
    gamma_nl: float = 2.5  # 1/(W km)
    length_km: float = 50.0
    center_wavelength_um: float = 1.55

    def __post_init__(self):
        if self.loss_db_km < 0:
            raise ConfigurationError("loss must be >= 0")
        if self.length_km <= 0:
            raise ConfigurationError("span length must be positive")
        if self.gamma_nl < 0:
            raise ConfigurationError("nonlinearity parameter must be >= 0")

    @property
    def beta2_s2_km(self) -> float:
        """Group velocity dispersion in s^2/km (negative for positive D)."""
        lam = self.center_wavelength_um * 1e-6
        d_si = self.dispersion_ps_nm_km * 1e-6  # s/m^2
        return -d_si * lam**2 / (2.0 * np.pi * C_M_S) * 1e3

    @property
    def carrier_hz(self) -> float:
        return C_M_S / (self.center_wavelength_um * 1e-6)


@dataclass(frozen=True)
class LinkConfig:
    """A chain of identical amplified spans.

    ``edfa_gain_db=None`` means exact span-loss compensation.  ``spans=0``
    is allowed as a degenerate identity link (useful for chain tests).
    """

    spans: int = 9
    fiber: FiberParams = dc_field(default_factory=FiberParams)
    edfa_gain_db: float | None = None
    edfa_nf_db: float = 5.0
    step_km: float = 0.1
    oversampling: int = 8

    def __post_init__(self):
        if self.spans < 0:
            raise ConfigurationError("spans must be >= 0")
        if self.step_km <= 0:
            raise ConfigurationError("step_km must be positive")
        if self.oversampling < 2:
            raise ConfigurationError("propagation oversampling must be >= 2")

    @property
    def span_gain_db(self) -> float:
        if self.edfa_gain_db is not None:
            return self.edfa_gain_db
        return self.fiber.loss_db_km * self.fiber.length_km

    @property
    def total_cd_ps_nm(self) -> float:
        return self.spans * self.fiber.dispersion_ps_nm_km * self.fiber.length_km


def _fft2(a):
    return sfft.fft(a, axis=-1, workers=_FFT_WORKERS)


def _ifft2(a):
    return sfft.ifft(a, axis=-1, workers=_FFT_WORKERS)


def propagate_span(field: ComplexField, fiber: FiberParams, step_km: float) -> ComplexField:
    """Propagate through one fiber span with the symmetric split-step method.

    The span is divided into ``ceil(length/step)`` equal steps no longer
    than ``step_km``.  Loss and dispersion act in the frequency domain;
    the nonlinear rotation uses the per-step effective length, so the
    dispersionless case reproduces the closed-form self-phase-modulation
    solution exactly.
    """
    if step_km <= 0:
        raise ConfigurationError("step_km must be positive")
    if step_km > fiber.length_km:
        raise ConfigurationError("step_km exceeds span length")
    n_steps = int(np.ceil(fiber.length_km / step_km - 1e-12))
    h = fiber.length_km / n_steps

    alpha_np_km = fiber.loss_db_km * np.log(10.0) / 10.0
    beta2 = fiber.beta2_s2_km
    if alpha_np_km > 0:
        h_eff = (1.0 - np.exp(-alpha_np_km * h)) / alpha_np_km
    else:
        h_eff = h
    nl_factor = (8.0 / 9.0) * fiber.gamma_nl * h_eff

    n = len(field)
    omega = 2.0 * np.pi * sfft.fftfreq(n, d=1.0 / field.sample_rate)
    lin_half = np.exp((-alpha_np_km / 2.0 + 1j * (beta2 / 2.0) * omega**2) * (h / 2.0))
    lin_full = lin_half * lin_half

    e = np.vstack([field.x, field.y])
    ef = _fft2(e)
    ef *= lin_half
    for k in range(n_steps):
        e = _ifft2(ef)
        e = np.ascontiguousarray(e)
        kernels.nonlinear_phase(e[0], e[1], nl_factor)
        ef = _fft2(e)
        ef *= lin_full if k < n_steps - 1 else lin_half
    e = _ifft2(ef)
    return ComplexField(e[0], e[1], field.sample_rate)


def ase_psd_w_hz(gain_db: float, nf_db: float, carrier_hz: float) -> float:
    """One-polarization ASE power spectral density in W/Hz.

    ``(F G / 2 - 1) h nu`` with linear noise figure F and gain G, clamped at
    zero (tiny configured noise figures express a noiseless amplifier).
    """
    g = 10.0 ** (gain_db / 10.0)
    f = 10.0 ** (nf_db / 10.0)
    return max(0.0, (f * g / 2.0 - 1.0)) * PLANCK_J_S * carrier_hz


def edfa_amplify(
    field: ComplexField,
    gain_db: float,
    nf_db: float,
    rng_seed,
    wavelength_um: float = 1.55,
) -> ComplexField:
    """Flat-gain amplifier with additive circular complex Gaussian ASE.

    Noise of power ``ase_psd * sample_rate`` is added per polarization
    (white over the simulated band).  ``rng_seed`` may be an integer or a
    ``numpy.random.Generator``; the same seed gives bit-identical output.
    """
    if gain_db < 0:
        raise ConfigurationError("EDFA gain must be >= 0 dB")
    rng = (
        rng_seed
        if isinstance(rng_seed, np.random.Generator)
        else np.random.default_rng(rng_seed)
    )
    g_amp = 10.0 ** (gain_db / 20.0)
    carrier = C_M_S / (wavelength_um * 1e-6)
    p_noise = ase_psd_w_hz(gain_db, nf_db, carrier) * field.sample_rate
    n = len(field)
    x = field.x * g_amp
    y = field.y * g_amp
    if p_noise > 0:
        sigma = np.sqrt(p_noise / 2.0)
        nx = rng.normal(0.0, sigma, 2 * n)
        ny = rng.normal(0.0, sigma, 2 * n)
        x = x + nx[:n] + 1j * nx[n:]
        y = y + ny[:n] + 1j * ny[n:]
    return ComplexField(x, y, field.sample_rate)


def transmit_link(field: ComplexField, link: LinkConfig, rng_seed: int) -> ComplexField:
    """Propagate through ``link.spans`` spans, each followed by its EDFA.

    Per-span noise streams are spawned deterministically from ``rng_seed``,
    so the full link is reproducible and span count changes do not reshuffle
    earlier spans' noise.
    """
    out = field
    children = np.random.SeedSequence(rng_seed).spawn(max(link.spans, 0))
    for s in range(link.spans):
        out = propagate_span(out, link.fiber, link.step_km)
        out = edfa_amplify(
            out,
            link.span_gain_db,
            link.edfa_nf_db,
            np.random.Generator(np.random.PCG64(children[s])),
            wavelength_um=link.fiber.center_wavelength_um,
        )
    return out


def wiener_phase_noise(field: ComplexField, linewidth_hz: float, rng_seed) -> ComplexField:
    """Apply a laser phase random walk common to both polarizations.

    Per-sample phase increments are N(0, 2 pi linewidth / sample_rate); a
    linewidth of zero returns the field unchanged.
    """
    if linewidth_hz < 0:
        raise ConfigurationError("linewidth must be >= 0")
    if linewidth_hz == 0:
        return field.copy()
    rng = (
        rng_seed
        if isinstance(rng_seed, np.random.Generator)
        else np.random.default_rng(rng_seed)
    )
    var = 2.0 * np.pi * linewidth_hz / field.sample_rate
    dphi = rng.normal(0.0, np.sqrt(var), len(field))
    rot = np.exp(1j * np.cumsum(dphi))
    return ComplexField(field.x * rot, field.y * rot, field.sample_rate)

"""qfeq: quantized neural-network equalization over a simulated fiber link.

The package covers the full loop: dual-polarization 16-QAM transmit signal
generation, split-step fiber propagation with amplifier noise, linear
receiver DSP, a small sliding-window neural equalizer, a quantization engine
(uniform / power-of-two / additive power-of-two codebooks, post-training and
training-aware modes, fixed and mixed precision), a fixed-point inference
path, and Q-factor / model-size evaluation with a reproducible CLI harness.
"""

__version__ = "0.1.0"

from .signal import (  # noqa: F401
    ComplexField,
    Qam16Constellation,
    SymbolFrame,
    demap_symbols,
    frame_to_bits,
    map_bits_to_symbols,
    rrc_shape,
    rrc_taps,
)
from .fiber import FiberParams, LinkConfig, edfa_amplify, propagate_span, transmit_link  # noqa: F401
from .dsp import DspConfig, carrier_phase_estimate, cd_compensate, matched_filter_downsample, synchronize_scale  # noqa: F401

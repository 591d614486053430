"""Microphone-array annotation, measurement and simulation toolkit."""

__version__ = "0.1.0"

from .dsp import (
    CorrelationResult,
    ImpulseResponse,
    MonoSignal,
    MultiChannelSignal,
    convolve,
    fractional_delay,
    fractional_resample,
    gcc,
    pchip_interpolate,
    resample_to,
    stft,
)

__all__ = [
    "CorrelationResult",
    "ImpulseResponse",
    "MonoSignal",
    "MultiChannelSignal",
    "convolve",
    "fractional_delay",
    "fractional_resample",
    "gcc",
    "pchip_interpolate",
    "resample_to",
    "stft",
    "__version__",
]

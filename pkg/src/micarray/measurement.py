"""Impulse-response measurement with exponential sine sweeps, reverberation
time estimation, and device impulse-response extraction.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve
from scipy.special import erf

from .dsp import ImpulseResponse, MonoSignal
from .errors import (
    BadSpec,
    DegenerateSignal,
    InsufficientDecay,
    NoDistinctPath,
    RateMismatch,
)


@dataclass(frozen=True)
class SweepSpec:
    """Exponential sine sweep parameters."""

    f1: float
    f2: float
    duration_s: float
    rate: int
    repetitions: int = 1

    def __post_init__(self):
        if not (0 < self.f1 < self.f2 <= self.rate / 2):
            raise BadSpec(f"need 0 < f1 < f2 <= rate/2; got f1={self.f1}, f2={self.f2}, rate={self.rate}")
        if self.duration_s <= 0:
            raise BadSpec("duration must be positive")
        if self.repetitions < 1:
            raise BadSpec("repetitions must be >= 1")


@dataclass(frozen=True)
class DecayCurve:
    """Schroeder energy decay curve, normalized to 0 dB at t=0."""

    time_s: np.ndarray
    level_db: np.ndarray
    rate: int

    def __post_init__(self):
        if len(self.time_s) != len(self.level_db):
            raise ValueError("time and level arrays differ in length")


@dataclass(frozen=True)
class DeviceIR:
    """Extracted device (loudspeaker + microphone) impulse response."""

    taps: ImpulseResponse
    extraction_window: tuple  # (start_sample, length) in the source RIR

    def __post_init__(self):
        start, length = self.extraction_window
        if length < 1:
            raise ValueError("extraction window must have positive length")
        peak = int(np.argmax(np.abs(self.taps.taps)))
        if not (0 <= peak < length):
            raise ValueError("peak tap outside extraction window")

    @classmethod
    def identity(cls, rate):
        """Unit-impulse device response (ideal transparent device)."""
        return cls(ImpulseResponse(np.array([1.0]), rate), (0, 1))


# Deconvolution target band edges relative to (f1, f2): erf-smoothed skirts.
# Smooth edges keep the deconvolved pulse compact; sharp ones ring for tens
# of milliseconds because of the low band edge.
_EDGE_LO_CENTER = 1.75
_EDGE_LO_WIDTH = 0.45
_EDGE_HI_CENTER = 0.875
_EDGE_HI_WIDTH = 0.075


def invert_sweep(sweep: MonoSignal, f1, f2, reg_db=-80.0):
    """Regularized spectral inverse of a sweep.

    Builds conj(S) * D / (|S|^2 + eps) where D is an erf-smoothed bandpass
    target inside [f1, f2]. Convolving the sweep with the result gives a
    compact bandlimited pulse with sidelobes more than 60 dB down outside
    +-5 ms of its peak.
    """
    n = len(sweep)
    m = int(2 ** np.ceil(np.log2(max(2 * n, 16))))
    spec = np.fft.rfft(sweep.samples, m)
    f = np.fft.rfftfreq(m, 1.0 / sweep.rate)
    c1, s1 = _EDGE_LO_CENTER * f1, _EDGE_LO_WIDTH * f1
    c2, s2 = _EDGE_HI_CENTER * f2, _EDGE_HI_WIDTH * f2
    target = 0.25 * (1.0 + erf((f - c1) / s1)) * (1.0 + erf((c2 - f) / s2))
    eps = 10.0 ** (reg_db / 10.0) * float(np.max(np.abs(spec))) ** 2
    inv = np.fft.irfft(np.conj(spec) * target / (np.abs(spec) ** 2 + eps), m)
    probe = fftconvolve(sweep.samples, inv)
    inv /= np.max(np.abs(probe))
    return MonoSignal(inv, sweep.rate)


def generate_ess(spec: SweepSpec, fade_s=0.03, amplitude=0.5):
    """Generate an exponential sine sweep and its inverse filter.

    The sweep's instantaneous frequency rises exponentially from f1 to f2.
    The inverse filter is a regularized spectral inverse (see invert_sweep),
    normalized so that sweep * inverse peaks at 1. Raised-cosine fades keep
    the sweep's own band edges clean.

    Returns (sweep, inverse_filter) as MonoSignals at spec.rate.
    """
    n = int(round(spec.duration_s * spec.rate))
    if n < 16:
        raise BadSpec("sweep too short")
    t = np.arange(n) / spec.rate
    w1 = 2 * math.pi * spec.f1
    w2 = 2 * math.pi * spec.f2
    L = spec.duration_s / math.log(w2 / w1)
    sweep = np.sin(w1 * L * (np.exp(t / L) - 1.0))
    n_fade = min(int(round(fade_s * spec.rate)), n // 4)
    if n_fade > 0:
        ramp = 0.5 * (1.0 - np.cos(np.pi * np.arange(n_fade) / n_fade))
        sweep[:n_fade] *= ramp
        sweep[-n_fade:] *= ramp[::-1]
    sweep *= amplitude
    out = MonoSignal(sweep, spec.rate)
    return out, invert_sweep(out, spec.f1, spec.f2)


def excitation_signal(spec: SweepSpec, gap_s=0.1):
    """The played excitation: the sweep tiled spec.repetitions times with
    silent gaps (one trial per repetition)."""
    sweep, _ = generate_ess(spec)
    gap = np.zeros(int(round(gap_s * spec.rate)))
    parts = []
    for _ in range(spec.repetitions):
        parts.append(sweep.samples)
        parts.append(gap)
    return MonoSignal(np.concatenate(parts), spec.rate)


def estimate_rir(recorded: MonoSignal, inverse_filter: MonoSignal,
                 rir_length_s=1.0, pre_peak_s=0.0025):
    """Deconvolve a recorded sweep response into an impulse response.

    The result is aligned so its dominant peak sits pre_peak_s from the
    start, and trimmed to rir_length_s.
    """
    if recorded.rate != inverse_filter.rate:
        raise RateMismatch("recording and inverse filter rates differ")
    if np.mean(recorded.samples**2) < 1e-15:
        raise DegenerateSignal("recorded signal has (near-)zero energy")
    full = fftconvolve(recorded.samples, inverse_filter.samples)
    peak = int(np.argmax(np.abs(full)))
    pre = int(round(pre_peak_s * recorded.rate))
    length = int(round(rir_length_s * recorded.rate))
    start = peak - pre
    out = np.zeros(length)
    src_lo = max(0, start)
    src_hi = min(len(full), start + length)
    if src_hi > src_lo:
        out[src_lo - start : src_hi - start] = full[src_lo:src_hi]
    return ImpulseResponse(out, recorded.rate)


def schroeder_edc(rir: ImpulseResponse, floor_db=-200.0):
    """Reverse-time cumulative energy integration, normalized to 0 dB."""
    e = rir.taps**2
    total = float(np.sum(e))
    if total < 1e-30:
        raise DegenerateSignal("impulse response has zero energy")
    tail = np.cumsum(e[::-1])[::-1]
    level = 10.0 * np.log10(np.maximum(tail / total, 10.0 ** (floor_db / 10.0)))
    time = np.arange(len(e)) / rir.rate
    return DecayCurve(time_s=time, level_db=level, rate=rir.rate)


@dataclass(frozen=True)
class T60Fit:
    t60_s: float
    t20_s: float
    slope_db_per_s: float
    fit_range_db: tuple


def estimate_t60_fit(edc: DecayCurve, fit_range_db=(-5.0, -25.0)):
    """Least-squares line on the EDC segment between the two levels.

    T20 is the time to fall 20 dB at the fitted slope and T60 is returned as
    exactly 3 * T20.
    """
    hi, lo = fit_range_db
    if not hi > lo:
        raise ValueError("fit range must be (hi, lo) with hi > lo")
    level = edc.level_db
    below_hi = np.nonzero(level <= hi)[0]
    below_lo = np.nonzero(level < lo)[0]
    if len(below_lo) == 0 or len(below_hi) == 0:
        raise InsufficientDecay(f"EDC never reaches {lo} dB")
    i0, i1 = below_hi[0], below_lo[0]
    if i1 - i0 < 2:
        raise InsufficientDecay("decay segment too short to fit")
    t = edc.time_s[i0:i1]
    y = level[i0:i1]
    slope, _ = np.polyfit(t, y, 1)
    if slope >= 0:
        raise InsufficientDecay("EDC segment is not decaying")
    t20 = -20.0 / slope
    return T60Fit(t60_s=3.0 * t20, t20_s=t20, slope_db_per_s=float(slope),
                  fit_range_db=(hi, lo))


def estimate_t60(edc: DecayCurve, fit_range_db=(-5.0, -25.0)):
    return estimate_t60_fit(edc, fit_range_db).t60_s


def extract_device_ir(rir: ImpulseResponse, window_ms=5.0, fade_ms=0.5,
                      gap_factor=2.0, reflection_floor_db=-20.0):
    """Extract the device response from one clearly distinct path in a RIR.

    A window of window_ms is centered on the dominant peak with raised-cosine
    edge fades. The path counts as distinct only if no sample outside the
    window but within gap_factor * window of the peak exceeds
    reflection_floor_db relative to the peak.
    """
    h = rir.taps
    n = len(h)
    peak = int(np.argmax(np.abs(h)))
    peak_amp = abs(h[peak])
    if peak_amp <= 0:
        raise NoDistinctPath("impulse response is silent")
    w = max(4, int(round(window_ms * rir.rate / 1000.0)))
    start = max(0, peak - w // 2)
    stop = min(n, start + w)
    gap = int(round(gap_factor * w))
    floor = peak_amp * 10.0 ** (reflection_floor_db / 20.0)
    guard_lo = max(0, peak - gap)
    guard_hi = min(n, peak + gap + 1)
    guard = np.abs(h[guard_lo:guard_hi]).copy()
    guard[start - guard_lo : stop - guard_lo] = 0.0
    if np.any(guard >= floor):
        raise NoDistinctPath(
            f"reflection within {gap} samples of the peak exceeds "
            f"{reflection_floor_db} dB; no isolatable path"
        )
    seg = h[start:stop].copy()
    n_fade = min(int(round(fade_ms * rir.rate / 1000.0)), len(seg) // 4)
    if n_fade > 0:
        ramp = 0.5 * (1.0 - np.cos(np.pi * np.arange(n_fade) / n_fade))
        seg[:n_fade] *= ramp
        seg[-n_fade:] *= ramp[::-1]
    return DeviceIR(ImpulseResponse(seg, rir.rate), (start, len(seg)))


@dataclass(frozen=True)
class TrialAggregate:
    t60_mean_s: float
    t60_std_s: float
    t20_mean_s: float
    trials: tuple


def measure_t60_trials(recordings, inverse_filter, fit_range_db=(-5.0, -25.0),
                       rir_length_s=1.0):
    """Estimate T60 from several recorded sweep responses (one per trial)
    and aggregate as mean and standard deviation."""
    fits = []
    for rec in recordings:
        rir = estimate_rir(rec, inverse_filter, rir_length_s=rir_length_s)
        fits.append(estimate_t60_fit(schroeder_edc(rir), fit_range_db))
    t60s = np.array([f.t60_s for f in fits])
    t20s = np.array([f.t20_s for f in fits])
    return TrialAggregate(
        t60_mean_s=float(np.mean(t60s)),
        t60_std_s=float(np.std(t60s)),
        t20_mean_s=float(np.mean(t20s)),
        trials=tuple(fits),
    )

"""Core signal operations: correlation, resampling, convolution, interpolation,
framing and windowed overlap-add.

Everything operates on float64 internally. All functions are pure; the signal
containers are frozen dataclasses and safe to share across workers.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.signal import fftconvolve, resample_poly

from .errors import (
    BadFraming,
    DegenerateSignal,
    RateMismatch,
    RatioOutOfRange,
    TooFewKnots,
    UnsortedKnots,
)

# Interpolation kernel: 64-tap windowed sinc, Kaiser beta = 12.
KERNEL_HALF = 32
KAISER_BETA = 12.0

_ENERGY_FLOOR = 1e-15  # per-sample mean-square floor for "degenerate"


def _as_samples(x):
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 1:
        raise ValueError(f"expected 1-D samples, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class MonoSignal:
    """Single-channel signal with its sample rate."""

    samples: np.ndarray
    rate: int

    def __post_init__(self):
        object.__setattr__(self, "samples", _as_samples(self.samples))
        if self.rate <= 0:
            raise ValueError("rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("samples contain NaN or Inf")

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self):
        return len(self.samples) / self.rate

    def rms(self):
        if len(self.samples) == 0:
            return 0.0
        return float(np.sqrt(np.mean(self.samples**2)))


@dataclass(frozen=True)
class ImpulseResponse:
    """Single-channel impulse response (room IR or device IR)."""

    taps: np.ndarray
    rate: int

    def __post_init__(self):
        object.__setattr__(self, "taps", _as_samples(self.taps))
        if self.rate <= 0:
            raise ValueError("rate must be positive")
        if not np.all(np.isfinite(self.taps)):
            raise ValueError("taps contain NaN or Inf")

    def __len__(self):
        return len(self.taps)


@dataclass(frozen=True)
class MultiChannelSignal:
    """Ordered channels of equal length and rate."""

    channels: tuple

    def __post_init__(self):
        chans = tuple(self.channels)
        if len(chans) < 1:
            raise ValueError("need at least one channel")
        if any(not isinstance(c, MonoSignal) for c in chans):
            raise ValueError("channels must be MonoSignal instances")
        rates = {c.rate for c in chans}
        lengths = {len(c) for c in chans}
        if len(rates) != 1:
            raise RateMismatch("channels have mixed rates")
        if len(lengths) != 1:
            raise ValueError("channels have mixed lengths")
        object.__setattr__(self, "channels", chans)

    @classmethod
    def from_array(cls, array, rate):
        """Build from an (n_samples, n_channels) or (n_samples,) array."""
        a = np.asarray(array, dtype=np.float64)
        if a.ndim == 1:
            a = a[:, None]
        return cls(tuple(MonoSignal(a[:, i], rate) for i in range(a.shape[1])))

    def to_array(self):
        return np.stack([c.samples for c in self.channels], axis=1)

    @property
    def rate(self):
        return self.channels[0].rate

    @property
    def n_channels(self):
        return len(self.channels)

    def __len__(self):
        return len(self.channels[0])


@dataclass(frozen=True)
class CorrelationResult:
    """Cross-correlation over a symmetric lag window.

    peak_sharpness is the peak magnitude divided by the median magnitude over
    the searched window; it is the reliability measure used to reject weak
    delay estimates.
    """

    lags: np.ndarray
    values: np.ndarray
    peak_lag: int
    peak_value: float
    peak_sharpness: float

    def __post_init__(self):
        if len(self.lags) != len(self.values):
            raise ValueError("lags and values differ in length")


def _check_energy(x, name):
    x = np.asarray(x)
    if len(x) == 0 or np.mean(x**2) < _ENERGY_FLOOR:
        raise DegenerateSignal(f"{name} has (near-)zero energy")


def gcc(a: MonoSignal, b: MonoSignal, weighting="phat", max_lag=None):
    """Generalized cross-correlation between two signals.

    Parameters
    ----------
    a, b : MonoSignal
        Signals at the same rate. A positive peak lag means ``b`` is a
        delayed copy of ``a``.
    weighting : {"phat", "none"}
        "phat" whitens the cross-spectrum, which sharpens the peak under
        reverberation; "none" is the plain cross-correlation.
    max_lag : int
        Half-width of the searched lag window, in samples. Must be smaller
        than the shorter input.

    Returns
    -------
    CorrelationResult
    """
    if a.rate != b.rate:
        raise RateMismatch("gcc inputs must share a sample rate")
    if weighting not in ("phat", "none"):
        raise ValueError(f"unknown weighting {weighting!r}")
    if max_lag is None:
        max_lag = min(len(a), len(b)) // 2
    max_lag = int(max_lag)
    if max_lag < 1 or max_lag >= min(len(a), len(b)):
        raise ValueError("max_lag must be in [1, min(len(a), len(b)))")
    _check_energy(a.samples, "gcc input a")
    _check_energy(b.samples, "gcc input b")

    corr = _cross_correlation(a.samples, b.samples, weighting, max_lag)
    lags = np.arange(-max_lag, max_lag + 1)
    values = np.abs(corr)
    peak_index = int(np.argmax(values))
    peak_value = float(values[peak_index])
    med = float(np.median(values))
    sharpness = peak_value / max(med, 1e-30)
    return CorrelationResult(
        lags=lags,
        values=values,
        peak_lag=int(lags[peak_index]),
        peak_value=peak_value,
        peak_sharpness=sharpness,
    )


def _cross_correlation(a, b, weighting, max_lag, oversample=1):
    """Cross-correlation r[k] = sum_t a[t] * b[t + k] for |k| <= max_lag.

    With oversample > 1 the band-limited correlation is evaluated on a grid
    of 1/oversample-sample steps (spectral zero padding).
    """
    n = int(2 ** np.ceil(np.log2(len(a) + len(b))))
    spec = np.conj(np.fft.rfft(a, n)) * np.fft.rfft(b, n)
    if weighting == "phat":
        mag = np.abs(spec)
        floor = 1e-12 * float(np.max(mag)) + 1e-300
        spec = spec / np.maximum(mag, floor)
    if oversample == 1:
        r = np.fft.irfft(spec, n)
        return np.concatenate([r[-max_lag:], r[: max_lag + 1]])
    m = n * oversample
    r = np.fft.irfft(spec, m) * oversample
    k = max_lag * oversample
    return np.concatenate([r[-k:], r[: k + 1]])


def refine_peak_parabolic(values, peak_index):
    """Sub-sample peak offset from a parabola through the peak and neighbors.

    Returns the fractional offset in [-1, 1] relative to peak_index; 0 when
    the peak sits at the window border.
    """
    v = np.asarray(values, dtype=np.float64)
    if peak_index <= 0 or peak_index >= len(v) - 1:
        return 0.0
    y0, y1, y2 = v[peak_index - 1], v[peak_index], v[peak_index + 1]
    denom = y0 - 2.0 * y1 + y2
    if denom >= -1e-300:
        return 0.0
    off = 0.5 * (y0 - y2) / denom
    return float(np.clip(off, -1.0, 1.0))


def refine_peak_centroid(values, peak_index, rel_threshold=0.5, max_halfwidth=None):
    """Sub-sample peak position as the centroid of the lobe around the peak.

    The lobe is the contiguous run around peak_index where the magnitude
    stays above rel_threshold * peak. Robust when motion smears the
    correlation peak into a plateau: the centroid recovers the plateau
    center where the raw argmax is arbitrary.
    """
    v = np.asarray(values, dtype=np.float64)
    peak = v[peak_index]
    if peak <= 0:
        return float(peak_index)
    thr = rel_threshold * peak
    lo = peak_index
    while lo > 0 and v[lo - 1] >= thr:
        lo -= 1
    hi = peak_index
    while hi < len(v) - 1 and v[hi + 1] >= thr:
        hi += 1
    if max_halfwidth is not None:
        lo = max(lo, peak_index - int(max_halfwidth))
        hi = min(hi, peak_index + int(max_halfwidth))
    idx = np.arange(lo, hi + 1)
    w = v[lo : hi + 1] - thr
    total = float(np.sum(w))
    if total <= 0:
        return float(peak_index)
    return float(np.sum(idx * w) / total)


# --- windowed-sinc interpolation -------------------------------------------


def _kaiser_window(x):
    """Continuous Kaiser window over [-KERNEL_HALF, KERNEL_HALF]."""
    t = x / KERNEL_HALF
    out = np.zeros_like(t)
    inside = np.abs(t) <= 1.0
    out[inside] = np.i0(KAISER_BETA * np.sqrt(1.0 - t[inside] ** 2)) / np.i0(KAISER_BETA)
    return out


_TABLE_PHASES = 512
_KERNEL_OFFSETS = np.arange(-KERNEL_HALF + 1, KERNEL_HALF + 1, dtype=np.float64)
_KERNEL_TABLE = None


def _kernel_table():
    global _KERNEL_TABLE
    if _KERNEL_TABLE is None:
        fracs = np.arange(_TABLE_PHASES + 1) / _TABLE_PHASES
        t = _KERNEL_OFFSETS[None, :] - fracs[:, None]
        _KERNEL_TABLE = np.sinc(t) * _kaiser_window(t)
    return _KERNEL_TABLE


def interp_kernel(fracs):
    """Kernel rows (len(fracs), 64) for fractional offsets in [0, 1).

    Rows come from a 512-phase polyphase table with linear interpolation
    between phases (error below -100 dB)."""
    table = _kernel_table()
    pos = np.asarray(fracs, dtype=np.float64) * _TABLE_PHASES
    p0 = np.floor(pos).astype(np.int64)
    w = (pos - p0)[:, None]
    return table[p0] * (1.0 - w) + table[p0 + 1] * w


def sinc_interpolate(x, positions, smoothing=1.0, chunk=65536):
    """Evaluate a sampled signal at real-valued sample positions.

    Uses the toolkit-wide 64-tap Kaiser-windowed sinc kernel. ``smoothing``
    >= 1 scales the kernel cutoff down by that factor (anti-aliasing when
    reading faster than unit rate). Positions within 1e-9 of an integer are
    snapped so integer shifts reproduce samples bitwise. Out-of-range
    positions read zeros.
    """
    x = np.asarray(x, dtype=np.float64)
    positions = np.asarray(positions, dtype=np.float64)
    s = float(max(1.0, smoothing))
    pad = KERNEL_HALF + 1
    xp = np.concatenate([np.zeros(pad), x, np.zeros(pad)])
    out = np.empty(len(positions))
    offs = _KERNEL_OFFSETS
    for start in range(0, len(positions), chunk):
        p = positions[start : start + chunk]
        nearest = np.round(p)
        snap = np.abs(p - nearest) < 1e-9
        p = np.where(snap, nearest, p)
        i0 = np.floor(p).astype(np.int64)
        frac = p - i0
        block = np.empty(len(p))
        if np.any(snap):
            idx = np.clip(i0[snap] + pad, 0, len(xp) - 1)
            valid = (i0[snap] >= -pad) & (i0[snap] < len(xp) - pad)
            block[snap] = np.where(valid, xp[idx], 0.0)
        todo = ~snap
        if np.any(todo):
            if s <= 1.02:
                # anti-alias scaling for <2% rate excess would only shave a
                # sliver below Nyquist; use the fast polyphase table instead
                kern = interp_kernel(frac[todo])
            else:
                t = (offs[None, :] - frac[todo, None]) / s
                kern = np.sinc(t) * _kaiser_window(t * s) / s
            base = np.clip(i0[todo, None] + offs[None, :].astype(np.int64) + pad,
                           0, len(xp) - 1)
            block[todo] = np.einsum("ij,ij->i", xp[base], kern)
        out[start : start + len(p)] = block
    return out


def fractional_resample(x: MonoSignal, ratio):
    """Resample by a real-valued ratio (time-stretch convention).

    ratio > 1 compresses duration: a pure tone at frequency f comes out at
    f * ratio and the output has round(len(x) / ratio) samples. Anti-alias
    filtering is applied for ratio > 1. The supported range is [0.5, 2.0].
    """
    ratio = float(ratio)
    if not (0.5 <= ratio <= 2.0):
        raise RatioOutOfRange(f"ratio {ratio} outside [0.5, 2.0]")
    n_out = int(round(len(x) / ratio))
    positions = np.arange(n_out, dtype=np.float64) * ratio
    return MonoSignal(sinc_interpolate(x.samples, positions, smoothing=ratio), x.rate)


def fractional_delay(x: MonoSignal, shift):
    """Delay a signal by a (possibly fractional) number of samples.

    Output has the same length; samples shifted in from outside are zero.
    """
    positions = np.arange(len(x), dtype=np.float64) - float(shift)
    return MonoSignal(sinc_interpolate(x.samples, positions), x.rate)


def resample_to(x: MonoSignal, new_rate):
    """Rate conversion between the toolkit's standard rates (48k/16k/8k)."""
    new_rate = int(new_rate)
    if new_rate == x.rate:
        return x
    g = np.gcd(x.rate, new_rate)
    out = resample_poly(x.samples, new_rate // g, x.rate // g)
    return MonoSignal(out, new_rate)


def convolve(x: MonoSignal, h: ImpulseResponse):
    """Full linear convolution; output length len(x) + len(h) - 1."""
    if x.rate != h.rate:
        raise RateMismatch("convolve operands must share a sample rate")
    return MonoSignal(fftconvolve(x.samples, h.taps), x.rate)


def pchip_interpolate(knot_x, knot_y, query_x):
    """Shape-preserving piecewise-cubic interpolation through the knots.

    Queries outside the knot span return the edge knot values (held flat).
    """
    kx = np.asarray(knot_x, dtype=np.float64)
    ky = np.asarray(knot_y, dtype=np.float64)
    if kx.ndim != 1 or kx.shape != ky.shape:
        raise ValueError("knot arrays must be 1-D and equal length")
    if len(kx) < 2:
        raise TooFewKnots("need at least two knots")
    if np.any(np.diff(kx) <= 0):
        raise UnsortedKnots("knot_x must be strictly increasing")
    q = np.clip(np.asarray(query_x, dtype=np.float64), kx[0], kx[-1])
    return PchipInterpolator(kx, ky)(q)


def stft(x: MonoSignal, window_len, hop):
    """Hann-windowed STFT.

    Returns a (n_frames, window_len // 2 + 1) complex array. Frames start at
    multiples of ``hop``; trailing samples that do not fill a window are
    dropped.
    """
    window_len = int(window_len)
    hop = int(hop)
    if hop <= 0 or hop > window_len or window_len > len(x):
        raise BadFraming(
            f"need 0 < hop <= window_len <= len(x); got hop={hop}, "
            f"window_len={window_len}, len={len(x)}"
        )
    win = hann_window(window_len)
    n_frames = 1 + (len(x) - window_len) // hop
    idx = np.arange(window_len)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = x.samples[idx] * win[None, :]
    return np.fft.rfft(frames, axis=1)


def hann_window(n):
    """Periodic Hann window (COLA at 50% overlap)."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


# --- trapezium-window overlap-add -------------------------------------------
#
# Segments of length 2*hop at 50% overlap. Interior windows are triangles
# (the degenerate trapezium); the first and last windows hold 1 out to the
# signal edge, so the set sums to exactly 1 everywhere. The annotator and
# the moving-source simulator share this scheme.


def segment_starts(n_total, hop):
    """Segment start indices covering [0, n_total) with length-2*hop segments."""
    hop = int(hop)
    if hop <= 0 or n_total <= 0:
        raise BadFraming("hop and total length must be positive")
    win = 2 * hop
    if n_total <= win:
        return np.array([0])
    n_seg = int(np.ceil((n_total - win) / hop)) + 1
    return hop * np.arange(n_seg)


def trapezium_window(k, n_seg, hop):
    """Window for segment k of n_seg at 50% overlap (ramps of length hop)."""
    hop = int(hop)
    win = 2 * hop
    up = np.arange(hop) / hop
    w = np.concatenate([up, 1.0 - up])
    if k == 0:
        w[:hop] = 1.0
    if k == n_seg - 1:
        w[hop:] = 1.0
    return w


def overlap_add(segments, hop, n_total):
    """Sum length-2*hop segments under trapezium windows; crop to n_total."""
    hop = int(hop)
    win = 2 * hop
    n_seg = len(segments)
    out = np.zeros(n_total + win)
    for k, seg in enumerate(segments):
        if len(seg) != win:
            raise BadFraming(f"segment {k} has length {len(seg)}, expected {win}")
        w = trapezium_window(k, n_seg, hop)
        start = k * hop
        out[start : start + win] += seg * w
    return out[:n_total]

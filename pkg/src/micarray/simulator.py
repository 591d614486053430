"""Shoebox image-source simulation, piece-wise moving-source rendering,
coherence-constrained diffuse noise, and spatial-coherence estimation.

This module is the toolkit's synthesis oracle: it produces multichannel
recordings together with exact per-sample delay/gain ground truth so that
the annotator and the metrics can be validated end to end.
"""

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy.signal import butter, fftconvolve, sosfiltfilt

from .dsp import (
    ImpulseResponse,
    KERNEL_HALF,
    MonoSignal,
    MultiChannelSignal,
    interp_kernel,
    segment_starts,
    sinc_interpolate,
    stft,
    trapezium_window,
)
from .errors import (
    GeometryError,
    NoiseTooShort,
    PositionOutsideRoom,
    TooShort,
    TrajectoryMismatch,
)
from .fisheye import FRAME_PERIOD_MS, LocationTrack

SPEED_OF_SOUND = 343.0
REFERENCE_GAIN = 1.0 / (4.0 * np.pi)  # free-field amplitude at 1 m


@dataclass(frozen=True)
class ShoeboxRoom:
    """Rectangular room with a frequency-independent reverberation time."""

    dimensions_m: tuple
    t60_s: float
    speed_of_sound: float = SPEED_OF_SOUND

    def __post_init__(self):
        dims = tuple(float(d) for d in self.dimensions_m)
        if len(dims) != 3 or any(d <= 0 for d in dims):
            raise ValueError("room needs three positive dimensions")
        if self.t60_s < 0:
            raise ValueError("t60 must be non-negative")
        object.__setattr__(self, "dimensions_m", dims)

    def anechoic(self):
        return dataclasses.replace(self, t60_s=0.0)

    def reflection_coefficient(self):
        """Uniform wall reflection coefficient from Sabine's formula."""
        if self.t60_s <= 0:
            return 0.0
        lx, ly, lz = self.dimensions_m
        volume = lx * ly * lz
        surface = 2.0 * (lx * ly + lx * lz + ly * lz)
        absorption = 0.161 * volume / (surface * self.t60_s)
        if absorption >= 1.0:
            return 0.0
        return float(np.sqrt(1.0 - absorption))


@dataclass(frozen=True)
class Trajectory:
    """Time-stamped waypoints with linear interpolation between them."""

    times_s: np.ndarray
    positions_m: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times_s, dtype=np.float64)
        p = np.asarray(self.positions_m, dtype=np.float64)
        if t.ndim != 1 or p.shape != (len(t), 3):
            raise ValueError("need times (N,) and positions (N, 3)")
        if len(t) < 1:
            raise ValueError("need at least one waypoint")
        if np.any(np.diff(t) <= 0):
            raise ValueError("waypoint times must be strictly increasing")
        object.__setattr__(self, "times_s", t)
        object.__setattr__(self, "positions_m", p)

    @property
    def duration_s(self):
        return float(self.times_s[-1] - self.times_s[0])

    def position_at(self, t):
        """Positions (len(t), 3) at times t, held constant beyond the ends."""
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        out = np.empty((len(t), 3))
        for ax in range(3):
            out[:, ax] = np.interp(t, self.times_s, self.positions_m[:, ax])
        return out

    @classmethod
    def static(cls, position, duration_s):
        p = np.asarray(position, dtype=np.float64)
        return cls(np.array([0.0, duration_s]), np.stack([p, p]))


@dataclass(frozen=True)
class GroundTruth:
    """Per-sample direct-path delay/gain plus the 100 ms location track,
    all for the reference microphone."""

    tau_samples: np.ndarray
    gain: np.ndarray
    location: LocationTrack
    rate: int


@dataclass(frozen=True)
class CoherenceProfile:
    """Measured pairwise spatial coherence and its theoretical model."""

    frequencies_hz: np.ndarray
    measured: np.ndarray  # complex
    model: np.ndarray  # real sinc curve, or None when spacing unknown

    def __post_init__(self):
        if np.any(np.abs(self.measured) > 1.0 + 1e-6):
            raise ValueError("coherence magnitude exceeds 1")


def _check_inside(room, pos, what):
    p = np.asarray(pos, dtype=np.float64)
    if p.shape != (3,):
        raise ValueError(f"{what} must be a 3-vector")
    dims = np.asarray(room.dimensions_m)
    if np.any(p <= 0) or np.any(p >= dims):
        raise PositionOutsideRoom(f"{what} {p.tolist()} outside room {dims.tolist()}")
    return p


def _auto_order(room, source, mic):
    """Image order covering 60 dB of decay for the room's T60."""
    if room.t60_s <= 0:
        return (0, 0, 0)
    reach = room.speed_of_sound * room.t60_s + float(np.linalg.norm(source - mic))
    return tuple(int(np.ceil(reach / (2.0 * d))) + 1 for d in room.dimensions_m)


def simulate_shoebox_rir(room: ShoeboxRoom, source_pos, mic_pos, max_order=None,
                         rate=48000, highpass_hz=50.0):
    """Image-source room impulse response with fractional-delay placement.

    The wall reflection coefficient is uniform, derived from the room's T60
    via Sabine's formula. Each image contributes beta^n_reflections / (4 pi d)
    through the toolkit's windowed-sinc kernel at its exact fractional delay.

    Reverberant responses are highpass-filtered (zero phase, default 50 Hz)
    to remove the near-DC buildup of the all-positive image sum, which
    otherwise masks the late decay. Anechoic responses (t60 = 0) are returned
    untouched: a single fractional-delay ray.

    max_order may be an int, a per-axis triple, or None to cover 60 dB of
    decay automatically.
    """
    source = _check_inside(room, source_pos, "source position")
    mic = _check_inside(room, mic_pos, "microphone position")
    beta = room.reflection_coefficient()
    if max_order is None:
        order = _auto_order(room, source, mic)
    elif np.isscalar(max_order):
        order = (int(max_order),) * 3
    else:
        order = tuple(int(o) for o in max_order)

    dims = np.asarray(room.dimensions_m)
    # per-axis image coordinates and reflection counts, for both mirror
    # parities u: coord = (1 - 2u) * s + 2nL, reflections = |n - u| + |n|
    def axis_images(ax):
        n = np.arange(-order[ax], order[ax] + 1)
        coord = np.concatenate([source[ax] + 2 * n * dims[ax],
                                -source[ax] + 2 * n * dims[ax]])
        refl = np.concatenate([2 * np.abs(n), np.abs(n - 1) + np.abs(n)])
        return coord, refl

    cx, rx = axis_images(0)
    cy, ry = axis_images(1)
    cz, rz = axis_images(2)

    dx = (cx - mic[0])[:, None, None]
    dy = (cy - mic[1])[None, :, None]
    dz = (cz - mic[2])[None, None, :]
    dist = np.sqrt(dx * dx + dy * dy + dz * dz).ravel()
    n_refl = (rx[:, None, None] + ry[None, :, None] + rz[None, None, :]).ravel()
    amp = np.power(beta, n_refl) / (4.0 * np.pi * dist)
    delay = dist / room.speed_of_sound * rate

    keep = amp > (np.max(amp) * 1e-6)
    amp, delay = amp[keep], delay[keep]
    length = int(np.ceil(np.max(delay))) + KERNEL_HALF + 2
    taps = _place_fractional(amp, delay, length)
    if beta > 0 and highpass_hz:
        sos = butter(2, highpass_hz, "highpass", fs=rate, output="sos")
        taps = sosfiltfilt(sos, taps)
    return ImpulseResponse(taps, rate)


def _place_fractional(amplitudes, delays, length, chunk=65536):
    """Scatter impulses at fractional delays through the sinc kernel."""
    offs = np.arange(-KERNEL_HALF + 1, KERNEL_HALF + 1)
    i0 = np.floor(delays).astype(np.int64)
    frac = delays - i0
    integer = frac < 1e-9
    out_len = length + 2 * KERNEL_HALF + 2
    shift = KERNEL_HALF + 1
    taps = np.zeros(out_len)
    if np.any(integer):
        np.add.at(taps, i0[integer] + shift, amplitudes[integer])
    rest = np.nonzero(~integer)[0]
    for lo in range(0, len(rest), chunk):
        sel = rest[lo : lo + chunk]
        kern = interp_kernel(frac[sel]) * amplitudes[sel, None]
        idx = (i0[sel, None] + offs[None, :] + shift).ravel()
        taps += np.bincount(idx, weights=kern.ravel(), minlength=out_len)[:out_len]
    return taps[shift : shift + length]


def ground_truth_tracks(traj: Trajectory, mic_pos, n_samples, rate,
                        c=SPEED_OF_SOUND):
    """Exact per-sample direct-path delay (in samples) and gain for a
    microphone, from the trajectory geometry alone."""
    t = np.arange(n_samples) / rate
    pos = traj.position_at(t)
    d = np.linalg.norm(pos - np.asarray(mic_pos)[None, :], axis=1)
    tau = d / c * rate
    gain = REFERENCE_GAIN / d
    return tau, gain


def render_direct_path_exact(source: MonoSignal, traj: Trajectory, mic_pos,
                             c=SPEED_OF_SOUND):
    """Sample-exact direct-path signal for a moving source.

    Evaluates gain(t) * source(t - tau(t)) per sample with the toolkit's
    interpolation kernel; this is the realization of the ground-truth tracks,
    free of the piece-wise simulator's hop discretization. Used as the
    reference signal when scoring rendered direct paths and as the oracle
    pre-enhancement input.
    """
    n = len(source)
    tau, gain = ground_truth_tracks(traj, mic_pos, n, source.rate, c)
    dp = sinc_interpolate(source.samples, np.arange(n) - tau) * gain
    return MonoSignal(dp, source.rate)


def location_track_from_trajectory(traj: Trajectory, array_center, n_samples, rate):
    """Azimuth/elevation/distance of the source relative to the array center
    on the 100 ms annotation grid."""
    n_frames = int(np.floor((n_samples - 1) / rate * 1000.0 / FRAME_PERIOD_MS)) + 1
    times_ms = FRAME_PERIOD_MS * np.arange(n_frames, dtype=np.int64)
    pos = traj.position_at(times_ms / 1000.0)
    rel = pos - np.asarray(array_center)[None, :]
    horizontal = np.hypot(rel[:, 0], rel[:, 1])
    azimuth = np.degrees(np.arctan2(rel[:, 1], rel[:, 0])) % 360.0
    elevation = np.degrees(np.arctan2(rel[:, 2], horizontal))
    distance = np.linalg.norm(rel, axis=1)
    return LocationTrack(times_ms=times_ms, azimuth_deg=azimuth,
                         elevation_deg=elevation, distance_m=distance,
                         valid=np.ones(n_frames, dtype=bool))


def simulate_moving_source(source: MonoSignal, traj: Trajectory,
                           room: ShoeboxRoom, mic_positions, hop_s=0.1,
                           max_order=None, reference_channel=0):
    """Render a moving source through the room onto the microphones.

    The trajectory is discretized at hop_s; one RIR is computed per position
    and the half-overlapped segments are combined under trapezium windows
    that sum to unity (the same scheme the annotator uses). Ground-truth
    delay/gain tracks are emitted for the direct path at the reference
    microphone.

    Returns (MultiChannelSignal, GroundTruth).
    """
    mics = [_check_inside(room, m, f"microphone {i}")
            for i, m in enumerate(mic_positions)]
    if abs(traj.duration_s - source.duration) > hop_s:
        raise TrajectoryMismatch(
            f"trajectory covers {traj.duration_s:.3f} s but the source lasts "
            f"{source.duration:.3f} s")
    n = len(source)
    rate = source.rate
    hop = int(round(hop_s * rate))
    starts = segment_starts(n, hop)
    win = 2 * hop
    n_seg = len(starts)
    centers_s = (starts + win / 2.0) / rate
    positions = traj.position_at(centers_s)
    for k in range(n_seg):
        _check_inside(room, positions[k], f"trajectory point {k}")

    outputs = np.zeros((len(mics), n))
    for m, mic in enumerate(mics):
        for k, start in enumerate(starts):
            rir = simulate_shoebox_rir(room, positions[k], mic,
                                       max_order=max_order, rate=rate)
            seg = _convolve_segment(source.samples, rir.taps, start, win)
            w = trapezium_window(k, n_seg, hop)
            stop = min(n, start + win)
            outputs[m, start:stop] += (seg * w)[: stop - start]

    ref = mics[reference_channel]
    tau, gain = ground_truth_tracks(traj, ref, n, rate, room.speed_of_sound)
    center = np.mean(np.stack(mics), axis=0)
    location = location_track_from_trajectory(traj, center, n, rate)
    truth = GroundTruth(tau_samples=tau, gain=gain, location=location, rate=rate)
    return MultiChannelSignal.from_array(outputs.T, rate), truth


def _convolve_segment(x, h, start, length):
    """Samples [start, start+length) of convolve(x, h), without computing
    the full convolution."""
    lo = max(0, start - (len(h) - 1))
    hi = min(len(x), start + length)
    if hi <= lo:
        return np.zeros(length)
    chunk = fftconvolve(x[lo:hi], h)
    offset = start - lo
    out = np.zeros(length)
    avail = chunk[offset : offset + length]
    out[: len(avail)] = avail
    return out


def simulate_static_source(source: MonoSignal, position, room: ShoeboxRoom,
                           mic_positions, max_order=None, reference_channel=0):
    """Static-scene counterpart of simulate_moving_source (single RIR per
    microphone, no segmentation)."""
    traj = Trajectory.static(position, source.duration)
    mics = [_check_inside(room, m, f"microphone {i}")
            for i, m in enumerate(mic_positions)]
    n = len(source)
    outputs = np.zeros((len(mics), n))
    for m, mic in enumerate(mics):
        rir = simulate_shoebox_rir(room, position, mic, max_order=max_order,
                                   rate=source.rate)
        outputs[m] = fftconvolve(source.samples, rir.taps)[:n]
    ref = mics[reference_channel]
    tau, gain = ground_truth_tracks(traj, ref, n, source.rate, room.speed_of_sound)
    center = np.mean(np.stack(mics), axis=0)
    location = location_track_from_trajectory(traj, center, n, source.rate)
    truth = GroundTruth(tau_samples=tau, gain=gain, location=location,
                        rate=source.rate)
    return MultiChannelSignal.from_array(outputs.T, source.rate), truth


# --- diffuse noise -----------------------------------------------------------


def sinc_coherence_model(d_m, f_hz, c=SPEED_OF_SOUND):
    """Spherical (3-D diffuse) field coherence sin(2 pi f d / c)/(2 pi f d / c)."""
    if d_m < 0:
        raise ValueError("spacing must be non-negative")
    return np.sinc(2.0 * np.asarray(f_hz, dtype=np.float64) * d_m / c)


def generate_diffuse_noise(source_noise: MonoSignal, mic_positions,
                           model="spherical", duration_s=None, c=SPEED_OF_SOUND,
                           freq_chunk=1 << 16):
    """Multichannel noise whose pairwise coherence follows the diffuse model.

    Non-overlapping chunks of the source noise provide one independent
    stream per microphone; the streams are mixed per frequency bin with a
    decomposition of the target coherence matrix (eigenvalues floored at
    1e-8 to stay well-posed where the field is fully coherent).
    """
    if model != "spherical":
        raise ValueError(f"unknown coherence model {model!r}")
    mics = np.asarray(mic_positions, dtype=np.float64)
    if mics.ndim != 2 or mics.shape[0] < 2 or mics.shape[1] != 3:
        raise GeometryError("need at least two microphone positions (M, 3)")
    m_ch = mics.shape[0]
    rate = source_noise.rate
    if duration_s is None:
        duration_s = source_noise.duration / m_ch
    n = int(round(duration_s * rate))
    if len(source_noise) < m_ch * n:
        raise NoiseTooShort(
            f"need {m_ch * n} source samples for {m_ch} channels, have {len(source_noise)}")
    streams = source_noise.samples[: m_ch * n].reshape(m_ch, n).copy()
    streams /= np.sqrt(np.mean(streams**2, axis=1, keepdims=True)) + 1e-30

    dist = np.linalg.norm(mics[:, None, :] - mics[None, :, :], axis=2)
    spectra = np.fft.rfft(streams, axis=1)
    freqs = np.fft.rfftfreq(n, 1.0 / rate)
    mixed = np.empty_like(spectra)
    for lo in range(0, len(freqs), freq_chunk):
        hi = min(lo + freq_chunk, len(freqs))
        gamma = np.sinc(2.0 * freqs[lo:hi, None, None] * dist[None, :, :] / c)
        lam, vec = np.linalg.eigh(gamma)
        lam = np.maximum(lam, 1e-8)
        mix = vec * np.sqrt(lam)[:, None, :]
        mixed[:, lo:hi] = np.einsum("fij,jf->if", mix, spectra[:, lo:hi])
    out = np.fft.irfft(mixed, n, axis=1)
    out /= np.sqrt(np.mean(out**2, axis=1, keepdims=True)) + 1e-30
    out *= source_noise.rms()
    return MultiChannelSignal.from_array(out.T, rate)


def estimate_spatial_coherence(noise: MultiChannelSignal, pair, spacing_m=None,
                               window=1024, c=SPEED_OF_SOUND):
    """Welch-averaged complex coherence between two channels.

    Gamma_ij(f) = Phi_ij / sqrt(Phi_ii * Phi_jj) with Hann windows at 50%
    overlap. When the pair spacing is given, the theoretical spherical-field
    curve is attached as the model.
    """
    i, j = pair
    if len(noise) < noise.rate:
        raise TooShort("need at least one second of signal")
    hop = window // 2
    xi = stft(noise.channels[i], window, hop)
    xj = stft(noise.channels[j], window, hop)
    phi_ij = np.mean(xi * np.conj(xj), axis=0)
    phi_ii = np.mean(np.abs(xi) ** 2, axis=0)
    phi_jj = np.mean(np.abs(xj) ** 2, axis=0)
    gamma = phi_ij / np.sqrt(phi_ii * phi_jj + 1e-300)
    freqs = np.fft.rfftfreq(window, 1.0 / noise.rate)
    model = sinc_coherence_model(spacing_m, freqs, c) if spacing_m is not None else None
    return CoherenceProfile(frequencies_hz=freqs, measured=gamma, model=model)


def sliding_coherence(noise: MultiChannelSignal, pair, window_s=1.0,
                      spacing_m=None, fft_window=1024, c=SPEED_OF_SOUND):
    """Coherence re-estimated over consecutive window_s blocks.

    Returns (block_times_s, frequencies_hz, coherence[blocks, freqs]) for
    the time-varying analysis of real noise fields.
    """
    block = int(round(window_s * noise.rate))
    n_blocks = len(noise) // block
    if n_blocks < 1:
        raise TooShort("signal shorter than one analysis block")
    times = (np.arange(n_blocks) + 0.5) * window_s
    rows = []
    arr = noise.to_array()
    for b in range(n_blocks):
        seg = MultiChannelSignal.from_array(arr[b * block : (b + 1) * block], noise.rate)
        prof = estimate_spatial_coherence(seg, pair, spacing_m, fft_window, c)
        rows.append(prof.measured)
    freqs = np.fft.rfftfreq(fft_window, 1.0 / noise.rate)
    return times, freqs, np.stack(rows)

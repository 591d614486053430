"""Direct-path target speech estimation from a microphone recording and the
known played source signal.

The recording model is x = dp + reverb + noise with dp(t) = A * s_dev(t - tau)
and s_dev = device_ir * source. Estimation runs at a reduced correlation rate
(default 8 kHz) for robustness and reports delays in recording-rate samples
(default 48 kHz); the band-limited correlation is evaluated on the recording
rate grid by spectral zero padding, and peak positions are refined with a
lobe centroid.

For moving sources the utterance is processed in 1-second segments with 50%
overlap. Three things make the segment delay estimates robust:

* drift-matched correlation: each segment is correlated against the source
  stretched by a small grid of delay-drift hypotheses, so the peak of a
  fast-moving source is not smeared into a plateau;
* neighbor-guided tracking: segments are re-searched near the delay
  predicted from already-tracked neighbors, growing outward from the
  sharpest segments, which suppresses pitch-period correlation aliases; the
  candidate track whose aligned render correlates best with the recording
  wins;
* aligned residual passes: the source is re-aligned by the current track
  and per-segment residual delays are measured against it, canceling both
  the motion smear and the energy-weighting bias of the first pass.

Per-segment delays are then cleansed and PCHIP-smoothed, per-segment gains
are interpolated down to sample level, and the direct path is rendered by
stretching each source segment by the local delay drift (the Doppler effect
of the motion) and recombining under the same trapezium overlap-add windows
the scene simulator uses.
"""

from dataclasses import dataclass, replace

import numpy as np

from .dsp import (
    MonoSignal,
    MultiChannelSignal,
    _cross_correlation,
    convolve,
    overlap_add,
    pchip_interpolate,
    refine_peak_centroid,
    resample_to,
    segment_starts,
    sinc_interpolate,
)
from .errors import (
    DegenerateSignal,
    HookFailure,
    NoSharpPeak,
    TooFewValidSegments,
    TrackCoverageGap,
)
from .measurement import DeviceIR

_SEG_ENERGY_FLOOR = 1e-10  # mean-square floor for a usable segment


@dataclass(frozen=True)
class AnnotatorConfig:
    record_hz: int = 48000
    gcc_hz: int = 8000
    segment_s: float = 1.0
    hop_s: float = 0.5
    weighting: str = "phat"
    min_tau_s: float = -0.005  # small negative allowance for device latency
    max_tau_s: float = 0.12
    sharpness_threshold: float = 6.0
    centroid_halfwidth: int = 400  # recording-rate samples
    drift_span: float = 0.0045  # delay-drift hypotheses cover +-span
    drift_step: float = 0.0015
    growth_halfwidth: float = 150.0  # search span around the predicted delay
    n_seeds: int = 3  # tracking restarts from independently sharp segments
    residual_halfwidth: float = 90.0  # search span of the residual passes
    residual_iterations: int = 2
    outlier_guard_samples: float = 150.0  # rejects pitch-period delay aliases
    max_source_speed_mps: float = 5.0
    gain_bounds: tuple = (0.01, 100.0)
    gain_estimator: str = "projection"  # or "power_ratio"
    max_invalid_fraction: float = 0.5
    reference_channel: int = 0
    speed_of_sound: float = 343.0

    def __post_init__(self):
        if self.record_hz % self.gcc_hz != 0:
            raise ValueError("record_hz must be a multiple of gcc_hz")
        if self.gain_estimator not in ("projection", "power_ratio"):
            raise ValueError(f"unknown gain estimator {self.gain_estimator!r}")

    @property
    def oversample(self):
        return self.record_hz // self.gcc_hz

    def drift_grid(self):
        n = int(np.floor(self.drift_span / self.drift_step))
        return self.drift_step * np.arange(-n, n + 1)


@dataclass(frozen=True)
class DirectPathModel:
    """Time-invariant direct-path parameters of a static utterance."""

    tau_samples: float  # at the recording rate, may be fractional
    gain: float

    def __post_init__(self):
        if self.gain <= 0:
            raise ValueError("gain must be positive")


@dataclass(frozen=True)
class DelayGainTrack:
    """Per-segment delay and per-sample gain over an utterance.

    segment_times_s are the 1-second segment centers on the 0.5 s grid.
    tau_track holds one recording-rate delay per segment; gain_track holds
    one linear gain per recording-rate sample (None until gains have been
    estimated). validity flags segments whose delay came from measurement
    rather than interpolation.
    """

    segment_times_s: np.ndarray
    tau_track: np.ndarray
    validity: np.ndarray
    rate: int
    hop_s: float = 0.5
    gain_track: np.ndarray = None

    def __post_init__(self):
        t = np.asarray(self.segment_times_s, dtype=np.float64)
        tau = np.asarray(self.tau_track, dtype=np.float64)
        v = np.asarray(self.validity, dtype=bool)
        if not (len(t) == len(tau) == len(v)):
            raise ValueError("per-segment arrays differ in length")
        if len(t) > 1 and not np.allclose(np.diff(t), self.hop_s, atol=1e-9):
            raise ValueError("segment spacing must equal hop_s")
        if np.any(~np.isfinite(tau[v])):
            raise ValueError("valid segments must have finite delays")
        object.__setattr__(self, "segment_times_s", t)
        object.__setattr__(self, "tau_track", tau)
        object.__setattr__(self, "validity", v)
        if self.gain_track is not None:
            g = np.asarray(self.gain_track, dtype=np.float64)
            if np.any(g <= 0):
                raise ValueError("gain track must be strictly positive")
            object.__setattr__(self, "gain_track", g)

    @property
    def n_segments(self):
        return len(self.segment_times_s)


@dataclass(frozen=True)
class AnnotationResult:
    direct_path: MonoSignal
    track: DelayGainTrack
    diagnostics: dict
    model: DirectPathModel = None

    def __post_init__(self):
        bad = int(np.sum(~self.track.validity))
        if self.diagnostics.get("interpolated_count") != bad:
            raise ValueError("diagnostics inconsistent with validity flags")


# --- pre-enhancement hook ----------------------------------------------------


def default_hook(cfg: AnnotatorConfig):
    """Reference-channel pass-through downsampled to the correlation rate."""

    def hook(recording: MultiChannelSignal):
        return resample_to(recording.channels[cfg.reference_channel], cfg.gcc_hz)

    return hook


def oracle_hook(direct_path: MonoSignal, cfg: AnnotatorConfig):
    """Hook that returns a known ground-truth direct path (the simulator's),
    standing in for the learned pre-enhancement network."""
    enhanced = resample_to(direct_path, cfg.gcc_hz)

    def hook(recording):
        return enhanced

    return hook


def pre_enhance(recording: MultiChannelSignal, hook=None, cfg=AnnotatorConfig()):
    """Run the pre-enhancement hook and validate its output contract
    (mono signal at cfg.gcc_hz)."""
    if hook is None:
        hook = default_hook(cfg)
    try:
        out = hook(recording)
    except Exception as exc:
        raise HookFailure(f"pre-enhancement hook raised: {exc}") from exc
    if not isinstance(out, MonoSignal):
        raise HookFailure(f"hook returned {type(out).__name__}, expected MonoSignal")
    if out.rate != cfg.gcc_hz:
        raise HookFailure(f"hook returned rate {out.rate}, expected {cfg.gcc_hz}")
    return out


# --- delay estimation --------------------------------------------------------


def _stretched(samples, drift):
    """Reference read at rate (1 - drift): the time-stretch a linearly
    drifting delay imposes on the emitted signal."""
    if drift == 0.0:
        return samples
    pos = (1.0 - drift) * np.arange(len(samples), dtype=np.float64)
    return sinc_interpolate(samples, pos)


def _drift_correlation(ref_samples, enh_samples, cfg, drift=0.0):
    """Whitened correlation of the enhanced segment against the (optionally
    drift-stretched) reference, on the recording-rate lag grid.

    Returns (values, center_index). For drift != 0 the lag axis is in
    stretched-reference time; _to_center_delay converts a lag into the
    delay at the segment center.
    """
    r = _stretched(ref_samples, drift)
    max_lag8 = int(np.ceil(cfg.max_tau_s * cfg.gcc_hz)) + 2
    max_lag8 = min(max_lag8, min(len(r), len(enh_samples)) - 1)
    if max_lag8 < 1:
        raise DegenerateSignal("segment too short for delay search")
    values = np.abs(_cross_correlation(r, enh_samples, cfg.weighting, max_lag8,
                                       oversample=cfg.oversample))
    return values, max_lag8 * cfg.oversample


def _to_center_delay(lag48, drift, n_enh8, cfg):
    """Delay at the segment center from a stretched-reference lag."""
    center48 = 0.5 * n_enh8 * cfg.oversample
    return (1.0 - drift) * lag48 + drift * center48


def _from_center_delay(tau48, drift, n_enh8, cfg):
    center48 = 0.5 * n_enh8 * cfg.oversample
    return (tau48 - drift * center48) / (1.0 - drift)


def _peak_in_bounds(values, center, lo48, hi48, halfwidth):
    lo = max(int(np.ceil(lo48)) + center, 0)
    hi = min(int(np.floor(hi48)) + center, len(values) - 1)
    if hi <= lo:
        return None
    window = values[lo : hi + 1]
    peak_rel = int(np.argmax(window))
    peak_idx = lo + peak_rel
    med = float(np.median(window))
    sharpness = float(window[peak_rel]) / max(med, 1e-30)
    refined = refine_peak_centroid(values, peak_idx, max_halfwidth=halfwidth)
    return float(refined - center), sharpness, float(window[peak_rel])


def _estimate_delay(reference8, enhanced8, cfg, bounds48=None, halfwidth=None,
                    drift=0.0):
    """Delay of enhanced8 relative to reference8 at the segment center, in
    recording-rate samples. Returns (tau, sharpness)."""
    if bounds48 is None:
        bounds48 = (cfg.min_tau_s * cfg.record_hz, cfg.max_tau_s * cfg.record_hz)
    if halfwidth is None:
        halfwidth = cfg.centroid_halfwidth
    values, center = _drift_correlation(reference8.samples, enhanced8.samples,
                                        cfg, drift)
    n8 = len(enhanced8)
    lag_lo = _from_center_delay(bounds48[0], drift, n8, cfg)
    lag_hi = _from_center_delay(bounds48[1], drift, n8, cfg)
    hit = _peak_in_bounds(values, center, lag_lo, lag_hi, halfwidth)
    if hit is None:
        raise DegenerateSignal("empty delay search window")
    lag, sharpness, _ = hit
    return _to_center_delay(lag, drift, n8, cfg), sharpness


def _best_drift_delay(ref_seg, enh_seg, cfg, bounds48=None, drifts=None,
                      halfwidth=None):
    """Strongest correlation peak over a grid of delay-drift hypotheses.

    Returns (tau_at_center, sharpness, drift). Matching the drift keeps the
    peak of a fast-moving source compact instead of smearing it over the
    delay swept during the segment.
    """
    if bounds48 is None:
        bounds48 = (cfg.min_tau_s * cfg.record_hz, cfg.max_tau_s * cfg.record_hz)
    if drifts is None:
        drifts = cfg.drift_grid()
    if halfwidth is None:
        halfwidth = cfg.centroid_halfwidth
    n8 = len(enh_seg)
    best = None
    for drift in drifts:
        values, center = _drift_correlation(ref_seg, enh_seg, cfg, drift)
        lag_lo = _from_center_delay(bounds48[0], drift, n8, cfg)
        lag_hi = _from_center_delay(bounds48[1], drift, n8, cfg)
        hit = _peak_in_bounds(values, center, lag_lo, lag_hi, halfwidth)
        if hit is None:
            continue
        lag, sharpness, peak = hit
        if best is None or peak > best[0]:
            best = (peak, _to_center_delay(lag, drift, n8, cfg), sharpness, drift)
    if best is None:
        raise DegenerateSignal("empty delay search window")
    return best[1], best[2], best[3]


def _candidate_delays(enh_seg, ref_seg, cfg, n_peaks=4, separation=120):
    """Strongest distinct delay hypotheses of one segment, drift-matched and
    centroid refined, as (tau, peak_value, sharpness) triples. On voiced
    speech the true delay may lose the arg-max to a pitch-period alias, but
    it is almost always among the top peaks."""
    _, _, drift = _best_drift_delay(ref_seg, enh_seg, cfg)
    values, center = _drift_correlation(ref_seg, enh_seg, cfg, drift)
    n8 = len(enh_seg)
    lo = max(int(np.ceil(_from_center_delay(cfg.min_tau_s * cfg.record_hz,
                                            drift, n8, cfg))) + center, 0)
    hi = min(int(np.floor(_from_center_delay(cfg.max_tau_s * cfg.record_hz,
                                             drift, n8, cfg))) + center,
             len(values) - 1)
    med = float(np.median(values[lo : hi + 1]))
    masked = values.copy()
    masked[:lo] = 0.0
    masked[hi + 1 :] = 0.0
    out = []
    for _ in range(n_peaks):
        peak = int(np.argmax(masked))
        if masked[peak] <= 0:
            break
        refined = refine_peak_centroid(values, peak,
                                       max_halfwidth=cfg.centroid_halfwidth)
        tau = _to_center_delay(refined - center, drift, n8, cfg)
        out.append((tau, float(values[peak]), float(values[peak]) / max(med, 1e-30)))
        masked[max(0, peak - separation) : peak + separation + 1] = 0.0
    return out


def _lattice_track(pairs, win8, cfg, n_peaks=4):
    """Globally consistent delay track over the per-segment candidate peaks.

    A small Viterbi pass picks one candidate per segment maximizing the
    summed peak strength, subject to the physical bound on how far the
    delay can move between segment centers. Segments without usable
    candidates are bridged. Pitch-period aliases lose this global vote even
    when they win individual segments; velocity reversals cost nothing as
    long as they stay physical. Returns (tau, sharpness, measured).
    """
    n_seg = len(pairs)
    cands = []
    for e_seg, r_seg in pairs:
        if _usable(e_seg, r_seg, win8):
            cands.append(_candidate_delays(e_seg, r_seg, cfg, n_peaks=n_peaks))
        else:
            cands.append([])
    step_cap = (cfg.max_source_speed_mps * cfg.hop_s / cfg.speed_of_sound
                * cfg.record_hz)
    live = [k for k in range(n_seg) if cands[k]]
    tau = np.full(n_seg, np.nan)
    sharp = np.zeros(n_seg)
    measured = np.zeros(n_seg, dtype=bool)
    if not live:
        return tau, sharp, measured
    # forward pass; an infeasible jump starts a new chain rather than
    # poisoning the score
    scores = []
    links = []
    for i, k in enumerate(live):
        own = np.array([c[1] for c in cands[k]])
        if i == 0:
            scores.append(own)
            links.append(np.full(len(own), -1, dtype=int))
            continue
        prev_k = live[i - 1]
        taus_prev = np.array([c[0] for c in cands[prev_k]])
        taus_here = np.array([c[0] for c in cands[k]])
        feasible = (np.abs(taus_here[:, None] - taus_prev[None, :])
                    <= step_cap * (k - prev_k))
        totals = np.where(feasible, scores[i - 1][None, :], -np.inf)
        best = np.max(totals, axis=1)
        link = np.argmax(totals, axis=1)
        restart = ~np.isfinite(best)
        best[restart] = 0.0
        link[restart] = -1
        scores.append(own + best)
        links.append(link)
    end_i = int(np.argmax([np.max(s) for s in scores]))
    j = int(np.argmax(scores[end_i]))
    i = end_i
    while i >= 0 and j >= 0:
        k = live[i]
        t, _, s = cands[k][j]
        tau[k] = t
        sharp[k] = s
        measured[k] = s >= cfg.sharpness_threshold
        j = int(links[i][j])
        i -= 1
    return tau, sharp, measured


# --- static annotation ---------------------------------------------------------


def _estimate_gain(enhanced, aligned, estimator):
    """Gain of enhanced against the time-aligned unit direct path."""
    denom = float(np.dot(aligned, aligned))
    if denom < _SEG_ENERGY_FLOOR * len(aligned):
        return None
    if estimator == "projection":
        g = float(np.dot(enhanced, aligned)) / denom
    else:  # power ratio
        g = float(np.sqrt(np.dot(enhanced, enhanced) / denom))
    return g


def _segment_grid(n_samples, cfg):
    hop = int(round(cfg.hop_s * cfg.record_hz))
    starts = segment_starts(n_samples, hop)
    centers_s = (starts + hop) / cfg.record_hz
    return starts, hop, centers_s


def annotate_static(recording: MultiChannelSignal, source: MonoSignal,
                    device_ir: DeviceIR, cfg=AnnotatorConfig(), hook=None):
    """Single (A, tau) estimate and direct-path render for a static source.

    tau comes from the GCC peak between the pre-enhanced recording and the
    device-filtered source; A from the ratio of the pre-enhanced signal to
    the time-aligned reference. Raises NoSharpPeak when the correlation peak
    is too weak to trust (the utterance should then be discarded).
    """
    reference = convolve(source, device_ir.taps)
    if np.mean(reference.samples**2) < 1e-15:
        raise NoSharpPeak("source signal is silent")
    enhanced8 = pre_enhance(recording, hook, cfg)
    reference8 = resample_to(reference, cfg.gcc_hz)

    tau, sharpness = _estimate_delay(reference8, enhanced8, cfg)
    if sharpness < cfg.sharpness_threshold:
        raise NoSharpPeak(
            f"peak sharpness {sharpness:.1f} below threshold {cfg.sharpness_threshold}")

    ratio = cfg.gcc_hz / cfg.record_hz
    aligned8 = sinc_interpolate(reference8.samples,
                                np.arange(len(enhanced8)) - tau * ratio)
    gain = _estimate_gain(enhanced8.samples, aligned8, cfg.gain_estimator)
    lo, hi = cfg.gain_bounds
    if gain is None or not (lo <= gain <= hi):
        raise NoSharpPeak(f"gain estimate {gain} outside bounds [{lo}, {hi}]")

    n_out = len(recording)
    starts, hop, centers_s = _segment_grid(n_out, cfg)
    track = DelayGainTrack(
        segment_times_s=centers_s,
        tau_track=np.full(len(starts), tau),
        validity=np.ones(len(starts), dtype=bool),
        rate=cfg.record_hz,
        hop_s=cfg.hop_s,
        gain_track=np.full(n_out, gain),
    )
    direct = render_direct_path(source, device_ir, track)
    diagnostics = {
        "peak_sharpness": [sharpness],
        "cleansed_count": 0,
        "interpolated_count": 0,
    }
    return AnnotationResult(direct_path=direct, track=track,
                            diagnostics=diagnostics,
                            model=DirectPathModel(tau_samples=tau, gain=gain))


# --- moving annotation ----------------------------------------------------------


def _segment_slices(enhanced8, reference8, cfg, n_samples):
    """Per-segment (enhanced, reference) sample pairs at the correlation rate."""
    starts48, hop48, centers_s = _segment_grid(n_samples, cfg)
    ratio = cfg.gcc_hz / cfg.record_hz
    win8 = int(round(2 * hop48 * ratio))
    pairs = []
    for start in starts48:
        a = int(round(start * ratio))
        pairs.append((enhanced8.samples[a : a + win8],
                      reference8.samples[a : a + win8]))
    return centers_s, win8, pairs


def _usable(e_seg, r_seg, win8):
    return (len(e_seg) >= win8 // 2
            and np.mean(e_seg**2) >= _SEG_ENERGY_FLOOR
            and np.mean(r_seg**2) >= _SEG_ENERGY_FLOOR)


def segment_delay_track(enhanced: MonoSignal, reference: MonoSignal,
                        cfg=AnnotatorConfig(), n_samples=None):
    """Per-segment delay estimates for a moving source.

    Both inputs are at the correlation rate. Returns (segment_times_s,
    tau_samples, sharpness, validity) with delays in recording-rate sample
    units. Weak segments are flagged invalid, never fatal.
    """
    if n_samples is None:
        n_samples = int(round(len(enhanced) * cfg.record_hz / cfg.gcc_hz))
    centers_s, win8, pairs = _segment_slices(enhanced, reference, cfg, n_samples)
    n_seg = len(pairs)
    taus = np.full(n_seg, np.nan)
    sharpness = np.zeros(n_seg)
    valid = np.zeros(n_seg, dtype=bool)
    lo48 = cfg.min_tau_s * cfg.record_hz
    hi48 = cfg.max_tau_s * cfg.record_hz
    for k, (e_seg, r_seg) in enumerate(pairs):
        if not _usable(e_seg, r_seg, win8):
            continue
        tau, sharp, _ = _best_drift_delay(r_seg, e_seg, cfg)
        taus[k] = tau
        sharpness[k] = sharp
        valid[k] = (sharp >= cfg.sharpness_threshold) and (lo48 <= tau <= hi48)
    return centers_s, taus, sharpness, valid


def cleanse_track(raw_tau, validity, segment_times_s, cfg=AnnotatorConfig()):
    """Remove unreasonable per-segment delays and fill the gaps with PCHIP.

    A segment is rejected when its delay deviates from the running median of
    its neighbors (a five-segment window, excluding itself) by more than a
    cfg.max_source_speed_mps source could produce between segment centers,
    or by more than cfg.outlier_guard_samples. The second criterion catches
    pitch-period correlation aliases on voiced speech, which are smaller
    than the velocity bound but far larger than any real track curvature.
    Returns the tau-only DelayGainTrack.
    """
    tau = np.asarray(raw_tau, dtype=np.float64)
    valid = np.asarray(validity, dtype=bool) & np.isfinite(tau)
    step_limit = (cfg.max_source_speed_mps * cfg.hop_s / cfg.speed_of_sound
                  * cfg.record_hz)
    limit = min(step_limit, cfg.outlier_guard_samples)
    kept = valid.copy()
    idx = np.nonzero(valid)[0]
    for j, k in enumerate(idx):
        around = [i for i in idx[max(0, j - 2) : j + 3] if i != k]
        if len(around) >= 2:
            med = np.median(tau[around])
            if abs(tau[k] - med) > limit:
                kept[k] = False
    if np.sum(kept) < 2:
        raise TooFewValidSegments(
            f"only {int(np.sum(kept))} valid segments after cleansing")
    smooth = pchip_interpolate(segment_times_s[kept], tau[kept], segment_times_s)
    return DelayGainTrack(
        segment_times_s=np.asarray(segment_times_s, dtype=np.float64),
        tau_track=smooth,
        validity=kept,
        rate=cfg.record_hz,
        hop_s=cfg.hop_s,
    )


def annotate_moving(recording: MultiChannelSignal, source: MonoSignal,
                    device_ir: DeviceIR, cfg=AnnotatorConfig(), hook=None):
    """Time-varying (A(t), tau(t)) estimation and direct-path render for a
    moving source (segment-level delays, sample-level gains)."""
    reference = convolve(source, device_ir.taps)
    if np.mean(reference.samples**2) < 1e-15:
        raise NoSharpPeak("source signal is silent")
    enhanced8 = pre_enhance(recording, hook, cfg)
    reference8 = resample_to(reference, cfg.gcc_hz)
    n_out = len(recording)

    centers_s, raw_tau, sharpness, valid = segment_delay_track(
        enhanced8, reference8, cfg, n_samples=n_out)
    n_seg = len(centers_s)
    n_bad = int(np.sum(~valid))
    if n_bad > cfg.max_invalid_fraction * n_seg:
        raise NoSharpPeak(
            f"{n_bad}/{n_seg} segments lack a sharp correlation peak")

    _, win8, pairs = _segment_slices(enhanced8, reference8, cfg, n_out)
    lat_tau, lat_sharp, measured = _lattice_track(pairs, win8, cfg)
    track = cleanse_track(lat_tau, measured, centers_s, cfg)

    # Aligned residual passes: measure what delay remains between the
    # recording and the current aligned render, segment by segment, and fold
    # it back into the track.
    ratio = cfg.gcc_hz / cfg.record_hz
    hop48 = int(round(cfg.hop_s * cfg.record_hz))
    cleansed_count = int(np.sum(measured & ~track.validity))
    for _ in range(cfg.residual_iterations):
        unit48 = _render_aligned(reference.samples, track, n_out)
        unit8 = resample_to(MonoSignal(unit48, cfg.record_hz), cfg.gcc_hz)
        tau2 = np.array(track.tau_track)
        valid2 = np.zeros(n_seg, dtype=bool)
        for k in range(n_seg):
            a = int(round(k * hop48 * ratio))
            e_seg = enhanced8.samples[a : a + win8]
            u_seg = unit8.samples[a : a + len(e_seg)]
            if not _usable(e_seg, u_seg, win8):
                continue
            try:
                dt, sharp2 = _estimate_delay(
                    MonoSignal(u_seg, cfg.gcc_hz), MonoSignal(e_seg, cfg.gcc_hz),
                    cfg, bounds48=(-cfg.residual_halfwidth, cfg.residual_halfwidth),
                    halfwidth=int(cfg.residual_halfwidth) // 2)
            except DegenerateSignal:
                continue
            if sharp2 >= cfg.sharpness_threshold:
                tau2[k] = track.tau_track[k] + dt
                valid2[k] = True
        track = cleanse_track(tau2, valid2, centers_s, cfg)
        cleansed_count = int(np.sum(valid2 & ~track.validity))

    unit48 = _render_aligned(reference.samples, track, n_out)
    unit8 = resample_to(MonoSignal(unit48, cfg.record_hz), cfg.gcc_hz)
    gains = np.full(n_seg, np.nan)
    glo, ghi = cfg.gain_bounds
    for k in range(n_seg):
        a = int(round(k * hop48 * ratio))
        e_seg = enhanced8.samples[a : a + win8]
        u_seg = unit8.samples[a : a + len(e_seg)]
        g = _estimate_gain(e_seg, u_seg, cfg.gain_estimator)
        if g is not None and glo <= g <= ghi:
            gains[k] = g
    gain_valid = np.isfinite(gains)
    if np.sum(gain_valid) < 2:
        raise TooFewValidSegments("fewer than two usable gain segments")
    sample_times = np.arange(n_out) / cfg.record_hz
    gain_track = pchip_interpolate(centers_s[gain_valid], gains[gain_valid],
                                   sample_times)

    track = replace(track, gain_track=gain_track,
                    validity=track.validity & gain_valid)
    direct = MonoSignal(unit48 * gain_track, cfg.record_hz)
    diagnostics = {
        "peak_sharpness": sharpness.tolist(),
        "cleansed_count": cleansed_count,
        "interpolated_count": int(np.sum(~track.validity)),
    }
    return AnnotationResult(direct_path=direct, track=track,
                            diagnostics=diagnostics)


# --- rendering -------------------------------------------------------------------


def _render_aligned(reference_samples, track: DelayGainTrack, n_out):
    """Unit-gain aligned render: each segment of the device-filtered source
    is read at the locally drifting delay (a fractional resample by
    1 - dtau/hop, i.e. the Doppler stretch) and the segments are recombined
    under trapezium windows."""
    hop = int(round(track.hop_s * track.rate))
    win = 2 * hop
    taus = track.tau_track
    n_seg = track.n_segments
    needed = len(segment_starts(n_out, hop))
    if n_seg < needed:
        raise TrackCoverageGap(
            f"track has {n_seg} segments but {needed} are needed to cover "
            f"{n_out} samples")
    i = np.arange(win, dtype=np.float64)
    segments = []
    for k in range(n_seg):
        if n_seg == 1:
            drift = 0.0
        elif k < n_seg - 1:
            drift = (taus[k + 1] - taus[k]) / hop
        else:
            drift = (taus[k] - taus[k - 1]) / hop
        start = k * hop
        center = start + hop
        u0 = start - taus[k] - drift * (start - center)
        positions = u0 + (1.0 - drift) * i
        segments.append(sinc_interpolate(reference_samples, positions,
                                         smoothing=max(1.0, 1.0 - drift)))
    return overlap_add(segments, hop, n_out)


def render_direct_path(source: MonoSignal, device_ir: DeviceIR,
                       track: DelayGainTrack):
    """Deterministic direct-path render from a delay/gain track.

    The output covers len(track.gain_track) samples; the track's segments
    must cover that span and the per-sample gain must be present.
    """
    if track.gain_track is None:
        raise TrackCoverageGap("track has no per-sample gain")
    reference = convolve(source, device_ir.taps)
    n_out = len(track.gain_track)
    unit = _render_aligned(reference.samples, track, n_out)
    return MonoSignal(unit * track.gain_track, track.rate)

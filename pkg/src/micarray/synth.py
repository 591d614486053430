"""Synthetic signal builders used by the oracle tests, demos and benchmarks.

These produce controllable stand-ins for played speech, device responses and
reverberant tails so that every estimator in the toolkit can be validated
against known ground truth.
"""

import numpy as np
from scipy.signal import fftconvolve, lfilter

from .dsp import ImpulseResponse, MonoSignal


def synthetic_speech(duration_s, rate, rng, pause_floor=0.15, f0_base=None):
    """Speech-like test signal: harmonic voicing, formant coloring, frication
    bursts and syllabic amplitude modulation.

    The fricative/broadband components matter: a purely harmonic source is
    quasi-periodic and makes any correlation-based delay estimate ambiguous
    by multiples of the pitch period, which real speech is not.

    pause_floor sets the minimum of the syllabic envelope; raise it to keep
    every analysis segment fed with energy, lower it toward 0 for realistic
    pauses.
    """
    n = int(round(duration_s * rate))
    t = np.arange(n) / rate
    if f0_base is None:
        f0_base = rng.uniform(90.0, 200.0)
    # wandering pitch with per-sample jitter so periods never repeat exactly
    drift = lfilter([1.0], [1.0, -0.999], rng.standard_normal(n))
    drift /= np.max(np.abs(drift)) + 1e-30
    f0 = f0_base * (1.0 + 0.08 * np.sin(2 * np.pi * 0.7 * t) + 0.06 * drift
                    + 0.01 * rng.standard_normal(n))
    phase = 2 * np.pi * np.cumsum(f0) / rate
    voiced = np.zeros(n)
    for h in range(1, 9):
        voiced += np.sin(h * phase) / h
    # formant-ish coloring: two resonators
    for fc, bw in ((rng.uniform(400, 800), 120.0), (rng.uniform(1200, 2400), 250.0)):
        r = np.exp(-np.pi * bw / rate)
        theta = 2 * np.pi * fc / rate
        voiced = lfilter([1.0], [1.0, -2 * r * np.cos(theta), r * r], voiced)
    voiced /= np.std(voiced) + 1e-30

    # obstruents: high-passed noise, loudest around syllable onsets
    fric = lfilter([1.0, -0.9], [1.0], rng.standard_normal(n))
    syl_rate = rng.uniform(3.0, 5.0)
    syl_phase = rng.uniform(0, 2 * np.pi)
    onsets = 0.25 + np.clip(np.sin(2 * np.pi * syl_rate * t + syl_phase), 0.0, None) ** 2
    fric *= onsets / (np.std(fric) + 1e-30)

    x = voiced + 0.7 * fric + 0.05 * rng.standard_normal(n)
    env = 0.5 * (1.0 + np.sin(2 * np.pi * syl_rate * t + syl_phase - 0.5))
    env = pause_floor + (1.0 - pause_floor) * env
    x *= env
    x /= np.max(np.abs(x)) + 1e-30
    return MonoSignal(0.5 * x, rate)


def make_device_ir(rate, rng=None, length_ms=3.0):
    """Plausible loudspeaker+microphone impulse response: a damped, band-
    passed burst with a dominant leading edge."""
    n = max(8, int(round(length_ms * rate / 1000.0)))
    t = np.arange(n) / rate
    if rng is None:
        rng = np.random.default_rng(0)
    kern = np.exp(-t / 4e-4) * np.cos(2 * np.pi * 3500.0 * t)
    kern += 0.2 * np.exp(-t / 8e-4) * np.sin(2 * np.pi * 900.0 * t)
    kern /= np.max(np.abs(kern))
    return ImpulseResponse(kern, rate)


def exponential_decay_rir(t60_s, rate, rng, length_factor=2.0, direct_boost=0.0):
    """Decaying-noise impulse response with a known T60.

    Amplitude decays as exp(-t / tau) with tau = T60 / (3 ln 10), so the
    energy envelope falls exactly 60 dB over t60_s. Optionally a leading
    direct spike is added (direct_boost is its linear amplitude relative to
    the tail onset).
    """
    n = max(16, int(round(length_factor * t60_s * rate)))
    t = np.arange(n) / rate
    tau = t60_s / (3.0 * np.log(10.0))
    h = rng.standard_normal(n) * np.exp(-t / tau)
    if direct_boost > 0:
        h[0] = direct_boost
    return ImpulseResponse(h, rate)


def reverb_tail_kernel(t60_s, rate, rng, onset_s=0.004, drr_db=3.0, direct_gain=1.0):
    """Reverberant-tail filter matching the recording model x = dp + rev + n.

    Convolving the direct-path signal with this kernel yields a tail that
    starts onset_s after the direct sound, decays with the given T60 and has
    the requested direct-to-reverberant energy ratio against a direct path
    of amplitude direct_gain.
    """
    n_on = int(round(onset_s * rate))
    n = n_on + max(16, int(round(1.5 * t60_s * rate)))
    t = np.arange(n - n_on) / rate
    tau = t60_s / (3.0 * np.log(10.0))
    tail = rng.standard_normal(n - n_on) * np.exp(-t / tau)
    tail_energy = float(np.sum(tail**2))
    target = direct_gain**2 * 10.0 ** (-drr_db / 10.0)
    tail *= np.sqrt(target / max(tail_energy, 1e-30))
    kern = np.zeros(n)
    kern[n_on:] = tail
    return ImpulseResponse(kern, rate)


def white_noise(duration_s, rate, rng, rms=1.0):
    n = int(round(duration_s * rate))
    return MonoSignal(rng.standard_normal(n) * rms, rate)


def add_noise_at_snr(signal: MonoSignal, rng, snr_db):
    """Return signal + white noise scaled for the requested SNR; inf passes
    the signal through untouched."""
    if np.isinf(snr_db):
        return signal
    p_sig = np.mean(signal.samples**2)
    noise = rng.standard_normal(len(signal))
    p_noise = p_sig * 10.0 ** (-snr_db / 10.0)
    return MonoSignal(signal.samples + noise * np.sqrt(p_noise), signal.rate)

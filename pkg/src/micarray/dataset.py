"""Corpus mechanics: SNR-controlled mixing, noise-clip gating, sub-array
selection and scene/split manifests."""

import fnmatch
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dsp import MonoSignal, MultiChannelSignal, stft
from .errors import (
    NoiseTooShort,
    PolicyUnsatisfiable,
    ShapeMismatch,
    SplitViolation,
)

SPLITS = ("train", "val", "test")
SNR_RANGE_DB = (-10.0, 15.0)  # training SNR draws
TEST_ARRAY = [11, 3, 0, 7, 12]  # fixed evaluation sub-array
SUBARRAY_SIZES = (2, 8)

# Scenes without their own noise borrow it from a similar environment.
DEFAULT_NOISE_MAP = {
    "ClassRoom*": ["ClassRoom1"],
    "OfficeRoom*": ["OfficeRoom1", "OfficeRoom3"],
    "Library*": ["OfficeRoom1", "OfficeRoom3"],
    "LivingRoom*": ["LivingRoom1", "Laundry"],
}


# --- mixing -----------------------------------------------------------------


def reference_power(signal: MultiChannelSignal, channel=0):
    x = signal.channels[channel].samples
    return float(np.mean(x**2))


def crop_noise(noise: MultiChannelSignal, n_samples, rng):
    """Random full-channel crop of the noise, seeded by rng."""
    if len(noise) < n_samples:
        raise NoiseTooShort(f"noise has {len(noise)} samples, need {n_samples}")
    start = int(rng.integers(0, len(noise) - n_samples + 1)) if len(noise) > n_samples else 0
    arr = noise.to_array()[start : start + n_samples]
    return MultiChannelSignal.from_array(arr, noise.rate), start


def noise_gain_for_snr(speech: MultiChannelSignal, noise: MultiChannelSignal,
                       snr_db, channel=0):
    """Scale factor g so that 10 log10(P_speech / P_{g*noise}) = snr_db,
    measured on full-duration reference-channel power."""
    p_s = reference_power(speech, channel)
    p_n = reference_power(noise, channel)
    if p_n <= 0:
        raise ShapeMismatch("noise reference channel is silent")
    return float(np.sqrt(p_s / (p_n * 10.0 ** (snr_db / 10.0))))


def mix_at_snr(speech: MultiChannelSignal, noise: MultiChannelSignal, snr_db,
               rng=None, channel=0):
    """Speech plus noise scaled to the requested SNR.

    The noise is cropped at a seeded random offset when longer than the
    speech; the speech is untouched.
    """
    if speech.rate != noise.rate or speech.n_channels != noise.n_channels:
        raise ShapeMismatch(
            f"speech ({speech.n_channels} ch @ {speech.rate}) and noise "
            f"({noise.n_channels} ch @ {noise.rate}) disagree")
    rng = rng or np.random.default_rng(0)
    crop, _ = crop_noise(noise, len(speech), rng)
    g = noise_gain_for_snr(speech, crop, snr_db, channel)
    return MultiChannelSignal.from_array(
        speech.to_array() + g * crop.to_array(), speech.rate)


def draw_snr(rng):
    """Training-mixture SNR draw, uniform over the corpus range."""
    return float(rng.uniform(*SNR_RANGE_DB))


# --- noise gating -------------------------------------------------------------


@dataclass(frozen=True)
class NoiseClip:
    start: int
    stop: int
    power_db: float


def default_vad(clip: MonoSignal):
    """Heuristic speech detector for noise gating: syllabic energy modulation
    plus pitch-range harmonicity. Returns True when speech is likely present.

    Stationary mechanical noise has a flat energy envelope and no stable
    pitch; speech shows several dB of 3..8 Hz modulation and strong
    autocorrelation peaks in the 60..300 Hz lag band.
    """
    x = clip.samples
    rate = clip.rate
    frame = int(0.032 * rate)
    hop = frame // 2
    if len(x) < 4 * frame:
        return False
    n_frames = 1 + (len(x) - frame) // hop
    idx = np.arange(frame)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = x[idx]
    energy = np.mean(frames**2, axis=1) + 1e-30
    log_e = 10.0 * np.log10(energy)
    active = log_e > log_e.max() - 40.0
    if np.sum(active) < 8:
        return False
    modulation_db = float(np.percentile(log_e[active], 90)
                          - np.percentile(log_e[active], 20))

    lag_lo = int(rate / 300.0)
    lag_hi = int(rate / 60.0)
    strong = np.nonzero(active)[0]
    strong = strong[np.argsort(log_e[strong])[-min(40, len(strong)):]]
    harm = []
    for f in strong:
        seg = frames[f] - np.mean(frames[f])
        ac = np.correlate(seg, seg, mode="full")[len(seg) - 1 :]
        if ac[0] <= 0:
            continue
        harm.append(np.max(ac[lag_lo:lag_hi]) / ac[0])
    harmonic_frac = float(np.mean(np.asarray(harm) > 0.5)) if harm else 0.0
    return modulation_db > 8.0 and harmonic_frac > 0.2


def gate_noise_clips(recording: MultiChannelSignal, power_floor_db=-60.0,
                     vad_hook=None, clip_s=10.0, channel=0):
    """Split a noise recording into clips and keep the usable ones.

    Clips whose reference-channel power falls below power_floor_db (dBFS)
    are dropped, as are clips the VAD hook flags as speech-bearing. An empty
    result is allowed.
    """
    vad = vad_hook if vad_hook is not None else default_vad
    n_clip = int(round(clip_s * recording.rate))
    ref = recording.channels[channel].samples
    kept = []
    for start in range(0, len(ref) - n_clip + 1, n_clip):
        seg = ref[start : start + n_clip]
        power = float(np.mean(seg**2))
        power_db = 10.0 * np.log10(max(power, 1e-30))
        if power_db < power_floor_db:
            continue
        if vad(MonoSignal(seg, recording.rate)):
            continue
        kept.append(NoiseClip(start=start, stop=start + n_clip, power_db=power_db))
    return kept


# --- sub-array selection -------------------------------------------------------


def is_uniform_linear(positions, tol_m=1e-3):
    """True when the points are collinear and uniformly spaced within tol."""
    p = np.asarray(positions, dtype=np.float64)
    if len(p) < 3:
        return True
    center = p.mean(axis=0)
    q = p - center
    _, _, vt = np.linalg.svd(q, full_matrices=False)
    axis = vt[0]
    t = q @ axis
    perp = q - np.outer(t, axis)
    if np.max(np.linalg.norm(perp, axis=1)) > tol_m:
        return False
    t = np.sort(t)
    spacing = np.diff(t)
    return bool(np.max(np.abs(spacing - spacing.mean())) <= tol_m)


def select_subarray(geometry, policy="train", rng=None, max_attempts=1000):
    """Draw a sub-array of the given geometry per the selection policy.

    "train": 2..8 channels uniformly, always including channel 0, redrawn
    whenever the draw forms a 5-channel uniformly-spaced collinear set.
    "test": the fixed evaluation array [11, 3, 0, 7, 12].
    """
    geo = np.asarray(geometry, dtype=np.float64)
    if geo.ndim != 2 or geo.shape[1] != 3:
        raise PolicyUnsatisfiable("geometry must be (n_channels, 3)")
    if policy == "test":
        if geo.shape[0] <= max(TEST_ARRAY):
            raise PolicyUnsatisfiable("geometry too small for the test array")
        return list(TEST_ARRAY)
    if policy != "train":
        raise PolicyUnsatisfiable(f"unknown policy {policy!r}")
    if rng is None:
        rng = np.random.default_rng(0)
    lo, hi = SUBARRAY_SIZES
    if geo.shape[0] < hi:
        raise PolicyUnsatisfiable(f"geometry needs at least {hi} channels")
    for _ in range(max_attempts):
        size = int(rng.integers(lo, hi + 1))
        others = rng.choice(np.arange(1, geo.shape[0]), size=size - 1, replace=False)
        draw = [0] + sorted(int(i) for i in others)
        if size == 5 and is_uniform_linear(geo[draw]):
            continue
        return draw
    raise PolicyUnsatisfiable("could not draw a policy-conforming sub-array")


def load_geometry(path):
    """Array geometry config: {"positions_m": [[x,y,z], ...]} with one entry
    per channel, finite coordinates."""
    with open(path) as fh:
        cfg = json.load(fh)
    if "positions_m" not in cfg:
        raise ValueError(f"{path}: missing positions_m")
    pos = np.asarray(cfg["positions_m"], dtype=np.float64)
    if pos.ndim != 2 or pos.shape[1] != 3 or len(pos) < 2:
        raise ValueError(f"{path}: positions_m must be (n>=2, 3)")
    if not np.all(np.isfinite(pos)):
        raise ValueError(f"{path}: positions contain NaN/Inf")
    return pos


# --- manifests ------------------------------------------------------------------


@dataclass(frozen=True)
class Utterance:
    path: str
    speaker_id: str
    state: str  # static | moving


@dataclass(frozen=True)
class SceneManifest:
    scene_name: str
    scene_type: str
    split: str
    utterances: tuple
    noise_paths: tuple
    t60_s: float = None
    spl_db: float = None

    def __post_init__(self):
        if self.split not in SPLITS:
            raise SplitViolation(f"unknown split {self.split!r}", [self.scene_name])

    def to_dict(self):
        return {
            "scene_name": self.scene_name,
            "scene_type": self.scene_type,
            "split": self.split,
            "t60_s": self.t60_s,
            "spl_db": self.spl_db,
            "utterances": [vars(u) for u in self.utterances],
            "noise_paths": list(self.noise_paths),
        }


@dataclass(frozen=True)
class MixSpec:
    speech_path: str
    noise_path: str
    snr_db: float
    scene_pairing: str = "matched"  # matched | random
    split: str = "train"

    def __post_init__(self):
        if self.scene_pairing not in ("matched", "random"):
            raise ValueError(f"unknown pairing {self.scene_pairing!r}")
        if self.split in ("val", "test") and self.scene_pairing != "matched":
            raise SplitViolation(
                f"{self.split} mixtures must pair speech and noise from the "
                "same scene", [self.speech_path])


def resolve_noise_scene(scene_name, scenes_with_noise, noise_map):
    """Scene whose noise a noise-less scene may borrow, or None."""
    if scene_name in scenes_with_noise:
        return scene_name
    for pattern, targets in noise_map.items():
        if fnmatch.fnmatch(scene_name, pattern):
            for target in targets:
                if target in scenes_with_noise:
                    return target
    return None


def build_manifest(root, noise_map=None, validate=True):
    """Scan a corpus directory into per-scene manifests.

    Layout: root/<scene>/scene.json plus static/, moving/ and noise/ WAV
    subdirectories. Utterance files are named <speaker_id>_<utt>.wav.
    Validation rejects speaker overlap across splits and val/test scenes
    whose noise pairing cannot be resolved.
    """
    noise_map = DEFAULT_NOISE_MAP if noise_map is None else noise_map
    root = Path(root)
    manifests = []
    for scene_dir in sorted(p for p in root.iterdir() if p.is_dir()) if root.exists() else []:
        meta_path = scene_dir / "scene.json"
        if not meta_path.exists():
            continue
        with open(meta_path) as fh:
            meta = json.load(fh)
        utterances = []
        for state in ("static", "moving"):
            for wav in sorted((scene_dir / state).glob("*.wav")):
                utterances.append(Utterance(
                    path=str(wav),
                    speaker_id=wav.stem.split("_")[0],
                    state=state,
                ))
        noise_paths = tuple(str(p) for p in sorted((scene_dir / "noise").glob("*.wav")))
        manifests.append(SceneManifest(
            scene_name=scene_dir.name,
            scene_type=meta.get("scene_type", "indoor"),
            split=meta["split"],
            utterances=tuple(utterances),
            noise_paths=noise_paths,
            t60_s=meta.get("t60_s"),
            spl_db=meta.get("spl_db"),
        ))
    if validate:
        validate_manifests(manifests, noise_map)
    return manifests


def validate_manifests(manifests, noise_map=None):
    """Enforce the split rules; raises SplitViolation naming the offenders."""
    noise_map = DEFAULT_NOISE_MAP if noise_map is None else noise_map
    speaker_splits = {}
    offenders = []
    for m in manifests:
        for u in m.utterances:
            prev = speaker_splits.get(u.speaker_id)
            if prev is not None and prev != m.split:
                offenders.append((u.speaker_id, prev, m.split, u.path))
            speaker_splits.setdefault(u.speaker_id, m.split)
    if offenders:
        raise SplitViolation(
            f"speakers appear in several splits: "
            f"{sorted({o[0] for o in offenders})}", offenders)

    scenes_with_noise = {m.scene_name for m in manifests if m.noise_paths}
    unmatched = []
    for m in manifests:
        if m.split in ("val", "test") and m.utterances and not m.noise_paths:
            if resolve_noise_scene(m.scene_name, scenes_with_noise, noise_map) is None:
                unmatched.append(m.scene_name)
    if unmatched:
        raise SplitViolation(
            f"val/test scenes without a noise pairing: {unmatched}", unmatched)


def write_manifests(manifests, out_dir):
    """One JSON per scene plus a top-level split index."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    index = {split: [] for split in SPLITS}
    for m in manifests:
        path = out / f"{m.scene_name}.json"
        with open(path, "w") as fh:
            json.dump(m.to_dict(), fh, indent=2, sort_keys=True)
        index[m.split].append(m.scene_name)
    with open(out / "splits.json", "w") as fh:
        json.dump(index, fh, indent=2, sort_keys=True)
    return out / "splits.json"

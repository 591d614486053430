"""Command-line entry point wiring measurement, annotation, simulation,
assembly and scoring.

Exit codes: 0 success, 1 module error, 2 invalid configuration or arguments,
3 utterance discarded (no sharp correlation peak).
"""

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import annotator as ann
from . import dataset, fisheye, measurement, metrics, simulator, wavio
from .config import load_config
from .dsp import MonoSignal, MultiChannelSignal
from .errors import ConfigInvalid, NoSharpPeak, ToolkitError

log = logging.getLogger("micarray")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_DISCARDED = 3

FLOAT_FMT = "%.10g"


def _fmt(x):
    return FLOAT_FMT % x


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, float) else v for v in row])


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _plan(args, outputs):
    if args.dry_run:
        for p in outputs:
            print(f"would write {p}")
        return True
    return False


# --- subcommands ---------------------------------------------------------


def cmd_measure(args, cfg):
    out = Path(args.out_dir)
    outputs = [out / "rir.wav", out / "measurement.json"]
    if _plan(args, outputs):
        return EXIT_OK
    out.mkdir(parents=True, exist_ok=True)
    sweep = wavio.read_mono(args.sweep)
    mcfg = dict(cfg.measurement)
    f1 = args.f1 if args.f1 is not None else mcfg.get("f1", 200.0)
    f2 = args.f2 if args.f2 is not None else mcfg.get("f2", 8000.0)
    fit_range = tuple(mcfg.get("fit_range_db", (-5.0, -25.0)))
    rir_length = float(mcfg.get("rir_length_s", 1.0))
    inverse = measurement.invert_sweep(sweep, f1, f2)
    recordings = [wavio.read_mono(p) for p in args.recording]
    agg = measurement.measure_t60_trials(recordings, inverse,
                                         fit_range_db=fit_range,
                                         rir_length_s=rir_length)
    rir = measurement.estimate_rir(recordings[0], inverse, rir_length_s=rir_length)
    wavio.write_signal(out / "rir.wav", MonoSignal(rir.taps, rir.rate))
    _write_json(out / "measurement.json", {
        "t60_s": agg.t60_mean_s,
        "t60_std_s": agg.t60_std_s,
        "t20_s": agg.t20_mean_s,
        "fit_range_db": list(fit_range),
        "trials": [f.t60_s for f in agg.trials],
    })
    log.info("measured T60 %.3f s over %d trials", agg.t60_mean_s, len(agg.trials))
    return EXIT_OK


def cmd_annotate_dp(args, cfg):
    out = Path(args.out_dir)
    outputs = [out / "direct_path.wav", out / "track.csv", out / "diagnostics.json"]
    if _plan(args, outputs):
        return EXIT_OK
    out.mkdir(parents=True, exist_ok=True)
    recording = wavio.read_multichannel(args.recording)
    source = wavio.read_mono(args.source)
    dev_sig = wavio.read_mono(args.device_ir)
    device_ir = measurement.DeviceIR(
        taps=_as_ir(dev_sig), extraction_window=(0, len(dev_sig)))
    acfg = cfg.annotator_config()
    try:
        if args.mode == "static":
            result = ann.annotate_static(recording, source, device_ir, acfg)
        else:
            result = ann.annotate_moving(recording, source, device_ir, acfg)
    except NoSharpPeak as exc:
        _write_json(out / "diagnostics.json", {"discarded": True, "reason": str(exc)})
        log.warning("utterance discarded: %s", exc)
        return EXIT_DISCARDED
    wavio.write_signal(out / "direct_path.wav", result.direct_path)
    track = result.track
    hop = int(round(track.hop_s * track.rate))
    rows = []
    for k in range(track.n_segments):
        center = int(round(track.segment_times_s[k] * track.rate))
        g_idx = min(max(center, 0), len(track.gain_track) - 1)
        rows.append((float(track.segment_times_s[k]), float(track.tau_track[k]),
                     float(track.gain_track[g_idx]), int(track.validity[k])))
    _write_csv(out / "track.csv", ("segment_time_s", "tau_samples", "gain", "valid"), rows)
    _write_json(out / "diagnostics.json", {"discarded": False, **result.diagnostics})
    return EXIT_OK


def _as_ir(sig: MonoSignal):
    from .dsp import ImpulseResponse

    return ImpulseResponse(sig.samples, sig.rate)


def cmd_annotate_loc(args, cfg):
    out = Path(args.out)
    if _plan(args, [out]):
        return EXIT_OK
    cam = fisheye.CameraModel.from_json(
        cfg.resolve(cfg.camera_model) if args.camera is None else args.camera)
    detections = []
    overlay_dir = Path(args.overlay_dir) if args.overlay_dir else None
    if overlay_dir:
        overlay_dir.mkdir(parents=True, exist_ok=True)
    with open(args.frames) as fh:
        for row in csv.DictReader(fh):
            t = float(row["t_s"])
            frame = _load_frame(row["path"])
            try:
                det = fisheye.detect_led(frame, args.color, frame_time_s=t)
            except ToolkitError:
                continue
            detections.append(det)
            if overlay_dir:
                _write_overlay(overlay_dir / (Path(row["path"]).stem + "_overlay.png"),
                               frame, det)
    track = fisheye.annotate_location(
        detections, args.source_height, args.array_height, cam)
    rows = [(float(track.times_ms[i] / 1000.0), float(track.azimuth_deg[i]),
             float(track.elevation_deg[i]), float(track.distance_m[i]),
             int(track.valid[i])) for i in range(len(track))]
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_csv(out, ("t_s", "azimuth_deg", "elevation_deg", "distance_m", "valid"), rows)
    return EXIT_OK


def _load_frame(path):
    from PIL import Image

    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0


def _write_overlay(path, frame, det):
    from PIL import Image, ImageDraw

    img = Image.fromarray((np.clip(frame, 0, 1) * 255).astype(np.uint8))
    draw = ImageDraw.Draw(img)
    u, v = det.pixel
    r = 12
    draw.ellipse([u - r, v - r, u + r, v + r], outline=(255, 255, 0), width=2)
    draw.line([u - 2 * r, v, u + 2 * r, v], fill=(255, 255, 0))
    draw.line([u, v - 2 * r, u, v + 2 * r], fill=(255, 255, 0))
    img.save(path)


def _load_scene(path):
    base = Path(path).parent
    with open(path) as fh:
        scene = json.load(fh)
    scene["_base"] = base
    return scene


def _run_scene(scene, out_dir, seed, sim_cfg):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    room = simulator.ShoeboxRoom(
        tuple(scene["room"]["dimensions_m"]),
        float(scene["room"].get("t60_s", 0.0)),
        float(scene["room"].get("speed_of_sound", simulator.SPEED_OF_SOUND)),
    )
    source = wavio.read_mono(scene["_base"] / scene["source_wav"])
    mics = scene["mics_m"]
    hop_s = float(scene.get("hop_s", sim_cfg.get("hop_s", 0.1)))
    max_order = scene.get("max_order", sim_cfg.get("max_order"))
    if "trajectory" in scene:
        traj = simulator.Trajectory(
            np.asarray(scene["trajectory"]["times_s"], dtype=float),
            np.asarray(scene["trajectory"]["positions_m"], dtype=float))
        recording, truth = simulator.simulate_moving_source(
            source, traj, room, mics, hop_s=hop_s, max_order=max_order)
        direct, _ = simulator.simulate_moving_source(
            source, traj, room.anechoic(), mics, hop_s=hop_s)
    else:
        position = scene["position_m"]
        traj = simulator.Trajectory.static(position, source.duration)
        recording, truth = simulator.simulate_static_source(
            source, position, room, mics, max_order=max_order)
        direct, _ = simulator.simulate_static_source(
            source, position, room.anechoic(), mics)

    snr_db = scene.get("snr_db")
    if snr_db is not None:
        rng = np.random.default_rng(seed)
        noise = MultiChannelSignal.from_array(
            rng.standard_normal((len(recording), recording.n_channels)),
            recording.rate)
        recording = dataset.mix_at_snr(recording, noise, float(snr_db), rng)

    wavio.write_signal(out / "recording.wav", recording)
    if scene.get("emit_direct_path", True):
        wavio.write_signal(out / "direct_path.wav",
                           direct.channels[scene.get("reference_channel", 0)])
    loc = truth.location
    rows = []
    for i in range(len(loc)):
        n = int(loc.times_ms[i] * truth.rate // 1000)
        n = min(n, len(truth.tau_samples) - 1)
        rows.append((float(loc.times_ms[i] / 1000.0), float(truth.tau_samples[n]),
                     float(truth.gain[n]), float(loc.azimuth_deg[i]),
                     float(loc.elevation_deg[i]), float(loc.distance_m[i])))
    _write_csv(out / "ground_truth.csv",
               ("t_s", "tau_samples", "gain", "azimuth_deg", "elevation_deg",
                "distance_m"), rows)
    return out


def cmd_simulate(args, cfg):
    scenes = [(_load_scene(p), p) for p in args.scene]
    outputs = []
    for scene, path in scenes:
        sub = Path(args.out_dir) if len(scenes) == 1 else Path(args.out_dir) / Path(path).stem
        outputs += [sub / "recording.wav", sub / "ground_truth.csv"]
    if _plan(args, outputs):
        return EXIT_OK

    def job(item):
        idx, (scene, path) = item
        sub = Path(args.out_dir) if len(scenes) == 1 else Path(args.out_dir) / Path(path).stem
        _run_scene(scene, sub, cfg.seed + idx, cfg.simulator)
        log.info("simulated %s -> %s", path, sub)

    if args.jobs > 1 and len(scenes) > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            list(pool.map(job, enumerate(scenes)))
    else:
        for item in enumerate(scenes):
            job(item)
    return EXIT_OK


def cmd_coherence(args, cfg):
    out = Path(args.out)
    if _plan(args, [out]):
        return EXIT_OK
    noise = wavio.read_multichannel(args.wav)
    spacing = args.spacing
    if spacing is None and cfg.array_geometry is not None:
        geo = dataset.load_geometry(cfg.resolve(cfg.array_geometry))
        spacing = float(np.linalg.norm(geo[args.pair[0]] - geo[args.pair[1]]))
    prof = simulator.estimate_spatial_coherence(noise, tuple(args.pair),
                                                spacing_m=spacing,
                                                window=args.window)
    rows = []
    for i, f in enumerate(prof.frequencies_hz):
        rows.append((float(f), float(np.real(prof.measured[i])),
                     float(np.imag(prof.measured[i])),
                     float(np.abs(prof.measured[i])),
                     float(prof.model[i]) if prof.model is not None else ""))
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_csv(out, ("freq_hz", "coh_real", "coh_imag", "coh_abs", "model"), rows)
    return EXIT_OK


def cmd_mix(args, cfg):
    out = Path(args.out)
    sidecar = out.with_suffix(".json")
    if _plan(args, [out, sidecar]):
        return EXIT_OK
    speech = wavio.read_multichannel(args.speech)
    noise = wavio.read_multichannel(args.noise)
    rng = np.random.default_rng(cfg.seed)
    snr_db = args.snr if args.snr is not None else dataset.draw_snr(rng)
    crop, start = dataset.crop_noise(noise, len(speech), rng)
    gain = dataset.noise_gain_for_snr(speech, crop, snr_db)
    mixture = MultiChannelSignal.from_array(
        speech.to_array() + gain * crop.to_array(), speech.rate)
    out.parent.mkdir(parents=True, exist_ok=True)
    wavio.write_signal(out, mixture)
    _write_json(sidecar, {
        "snr_db": snr_db,
        "speech_ref": str(args.speech),
        "noise_ref": str(args.noise),
        "noise_offset": start,
        "noise_gain": gain,
        "seed": cfg.seed,
        "channels": mixture.n_channels,
    })
    return EXIT_OK


def _read_track_csv(path):
    times, az, valid = [], [], []
    with open(path) as fh:
        for row in csv.DictReader(fh):
            times.append(float(row["t_s"]))
            az.append(float(row["azimuth_deg"]))
            valid.append(bool(int(row.get("valid", 1))))
    return metrics.FramewiseAzimuth(np.asarray(times), np.asarray(az),
                                    np.asarray(valid))


def cmd_score(args, cfg):
    out = Path(args.out)
    if _plan(args, [out]):
        return EXIT_OK
    payload = {}
    if args.estimate and args.truth:
        est = wavio.read_mono(args.estimate)
        ref = wavio.read_mono(args.truth)
        n = min(len(est), len(ref))
        payload["si_sdr_db"] = metrics.si_sdr(
            MonoSignal(est.samples[:n], est.rate),
            MonoSignal(ref.samples[:n], ref.rate))
        payload["si_sdr_cap_db"] = metrics.SI_SDR_CAP_DB
    if args.estimate_track and args.truth_track:
        est_t = _read_track_csv(args.estimate_track)
        ref_t = _read_track_csv(args.truth_track)
        result = metrics.loc_metrics(est_t, ref_t, args.acc_threshold)
        payload["mae_deg"] = result["mae_deg"]
        payload[f"acc_{_fmt(args.acc_threshold)}deg_pct"] = result["acc_pct"]
        payload["n_frames"] = result["n_frames"]
    if not payload:
        raise ConfigInvalid("score needs --estimate/--truth WAVs or track CSVs")
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_json(out, payload)
    return EXIT_OK


def cmd_manifest(args, cfg):
    out = Path(args.out_dir)
    if _plan(args, [out / "splits.json"]):
        return EXIT_OK
    noise_map = None
    if args.noise_map:
        with open(args.noise_map) as fh:
            noise_map = json.load(fh)
    manifests = dataset.build_manifest(args.root, noise_map=noise_map)
    index = dataset.write_manifests(manifests, out)
    log.info("wrote %d scene manifests and %s", len(manifests), index)
    return EXIT_OK


# --- parser ---------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="micarray",
        description="Microphone-array annotation, measurement and simulation toolkit")
    parser.add_argument("--config", help="pipeline config JSON")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--jobs", type=int, default=1, help="parallel jobs")
    parser.add_argument("--dry-run", action="store_true",
                        help="list planned outputs without writing")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("measure", help="ESS deconvolution and T60 measurement")
    p.add_argument("--sweep", required=True)
    p.add_argument("--recording", required=True, nargs="+")
    p.add_argument("--f1", type=float)
    p.add_argument("--f2", type=float)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_measure)

    p = sub.add_parser("annotate-dp", help="direct-path target speech annotation")
    p.add_argument("--recording", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--device-ir", required=True)
    p.add_argument("--mode", choices=("static", "moving"), default="moving")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_annotate_dp)

    p = sub.add_parser("annotate-loc", help="fisheye source-location annotation")
    p.add_argument("--frames", required=True, help="CSV index: t_s,path")
    p.add_argument("--camera", help="camera model JSON (default from config)")
    p.add_argument("--color", choices=("red", "green"), default="red")
    p.add_argument("--source-height", type=float, required=True)
    p.add_argument("--array-height", type=float,
                   default=fisheye.DEFAULT_ARRAY_HEIGHT_M)
    p.add_argument("--overlay-dir")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_annotate_loc)

    p = sub.add_parser("simulate", help="scene simulation with ground truth")
    p.add_argument("scene", nargs="+", help="scene JSON files")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("coherence", help="pairwise spatial coherence estimate")
    p.add_argument("--wav", required=True)
    p.add_argument("--pair", type=int, nargs=2, default=(0, 1))
    p.add_argument("--spacing", type=float, help="pair spacing in meters")
    p.add_argument("--window", type=int, default=1024)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_coherence)

    p = sub.add_parser("mix", help="SNR-controlled speech/noise mixing")
    p.add_argument("--speech", required=True)
    p.add_argument("--noise", required=True)
    p.add_argument("--snr", type=float, help="target SNR dB (default: train draw)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mix)

    p = sub.add_parser("score", help="SI-SDR and localization metrics")
    p.add_argument("--estimate", help="estimated WAV")
    p.add_argument("--truth", help="reference WAV")
    p.add_argument("--estimate-track", help="estimated azimuth CSV")
    p.add_argument("--truth-track", help="reference azimuth CSV")
    p.add_argument("--acc-threshold", type=float, default=5.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("manifest", help="scan a corpus into split manifests")
    p.add_argument("--root", required=True)
    p.add_argument("--noise-map", help="JSON pattern -> noise scene mapping")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_manifest)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = load_config(args.config, seed_override=args.seed)
    except ConfigInvalid as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    try:
        return args.func(args, cfg)
    except ConfigInvalid as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        log.error("missing input: %s", exc)
        return EXIT_CONFIG
    except ToolkitError as exc:
        log.error("%s", exc)
        return EXIT_ERROR
    except Exception:
        log.exception("unhandled error")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

"""LED detection in fisheye frames and the geometric conversion from pixel
position to azimuth/elevation/distance relative to the microphone array.

Conventions
-----------
* Pixels are (u, v) = (column, row); u grows rightward, v downward.
* Azimuth is measured from the +u image axis toward +v, plus the configured
  yaw offset, wrapped to [0, 360). Rotating a scene about the vertical axis
  therefore rotates azimuth by the same amount.
* The camera looks straight down from camera_height. The polar angle theta
  is measured from the downward optical axis; the radial map links pixel
  radius to theta (equidistant model r = k * theta by default, or a
  calibration table).
* The LED sits a fixed 0.12 m above the loudspeaker center; array-relative
  elevation and distance are computed from the loudspeaker center height.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError, NoDetection, OutsideCalibratedField

LED_ABOVE_SOURCE_M = 0.12
FRAME_PERIOD_MS = 100
DEFAULT_ARRAY_HEIGHT_M = 1.40


@dataclass(frozen=True)
class CameraModel:
    """Downward-looking fisheye camera above the array center."""

    center_pixel: tuple
    camera_height_m: float
    yaw_offset_deg: float = 0.0
    pixels_per_radian: float = None  # equidistant coefficient
    radius_table_px: np.ndarray = None  # alternative: calibration table
    theta_table_rad: np.ndarray = None
    max_theta_rad: float = np.pi / 2

    def __post_init__(self):
        if self.pixels_per_radian is None and self.radius_table_px is None:
            raise GeometryError("camera model needs a radial map")
        if self.radius_table_px is not None:
            r = np.asarray(self.radius_table_px, dtype=np.float64)
            th = np.asarray(self.theta_table_rad, dtype=np.float64)
            if r.shape != th.shape or r.ndim != 1 or len(r) < 2:
                raise GeometryError("calibration table must be two equal 1-D arrays")
            if np.any(np.diff(r) <= 0) or np.any(np.diff(th) <= 0):
                raise GeometryError("radial map must be strictly increasing")
            object.__setattr__(self, "radius_table_px", r)
            object.__setattr__(self, "theta_table_rad", th)
        if self.camera_height_m <= 0:
            raise GeometryError("camera height must be positive")

    def radius_to_theta(self, radius_px):
        if self.radius_table_px is not None:
            if radius_px > self.radius_table_px[-1]:
                raise OutsideCalibratedField(
                    f"radius {radius_px:.1f} px beyond calibration table")
            return float(np.interp(radius_px, self.radius_table_px, self.theta_table_rad))
        theta = radius_px / self.pixels_per_radian
        if theta > self.max_theta_rad:
            raise OutsideCalibratedField(
                f"radius {radius_px:.1f} px maps beyond max polar angle")
        return float(theta)

    def theta_to_radius(self, theta_rad):
        if theta_rad < 0 or theta_rad > self.max_theta_rad:
            raise OutsideCalibratedField(f"polar angle {theta_rad:.3f} rad out of range")
        if self.radius_table_px is not None:
            if theta_rad > self.theta_table_rad[-1]:
                raise OutsideCalibratedField("polar angle beyond calibration table")
            return float(np.interp(theta_rad, self.theta_table_rad, self.radius_table_px))
        return float(theta_rad * self.pixels_per_radian)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            cfg = json.load(fh)
        table = cfg.get("calibration_table")
        return cls(
            center_pixel=tuple(cfg["center_px"]),
            camera_height_m=float(cfg["camera_height_m"]),
            yaw_offset_deg=float(cfg.get("yaw_offset_deg", 0.0)),
            pixels_per_radian=cfg.get("pixels_per_radian"),
            radius_table_px=None if table is None else np.asarray(table["radius_px"]),
            theta_table_rad=None if table is None else np.deg2rad(table["theta_deg"]),
            max_theta_rad=np.deg2rad(cfg.get("max_theta_deg", 90.0)),
        )


@dataclass(frozen=True)
class LedDetection:
    pixel: tuple  # (u, v)
    score: float
    frame_time_s: float


@dataclass(frozen=True)
class LocationTrack:
    """Source locations on an exact 100 ms grid.

    times_ms is integer milliseconds so the spacing is exactly 100 ms by
    construction, free of float accumulation.
    """

    times_ms: np.ndarray
    azimuth_deg: np.ndarray
    elevation_deg: np.ndarray
    distance_m: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times_ms, dtype=np.int64)
        if len(t) > 1 and np.any(np.diff(t) != FRAME_PERIOD_MS):
            raise ValueError("location track spacing must be exactly 100 ms")
        object.__setattr__(self, "times_ms", t)
        for name in ("azimuth_deg", "elevation_deg", "distance_m"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        object.__setattr__(self, "valid", np.asarray(self.valid, dtype=bool))
        if np.any(self.distance_m[self.valid] <= 0):
            raise ValueError("valid frames must have positive distance")

    @property
    def times_s(self):
        return self.times_ms / 1000.0

    def __len__(self):
        return len(self.times_ms)


@dataclass(frozen=True)
class DetectionConfig:
    """Hue/saturation windows and the score floor for LED detection."""

    hue_center_deg: dict = field(default_factory=lambda: {"red": 0.0, "green": 120.0})
    hue_halfwidth_deg: float = 15.0
    saturation_min: float = 0.5
    score_floor: float = 0.15


def rgb_to_hsv(frame):
    """Vectorized RGB [0,1] -> (hue degrees [0,360), saturation, value)."""
    r, g, b = frame[..., 0], frame[..., 1], frame[..., 2]
    v = np.max(frame, axis=-1)
    c = v - np.min(frame, axis=-1)
    s = np.where(v > 0, c / np.maximum(v, 1e-30), 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        hr = np.where(c > 0, ((g - b) / np.maximum(c, 1e-30)) % 6.0, 0.0)
        hg = np.where(c > 0, (b - r) / np.maximum(c, 1e-30) + 2.0, 0.0)
        hb = np.where(c > 0, (r - g) / np.maximum(c, 1e-30) + 4.0, 0.0)
    h = np.where(v == r, hr, np.where(v == g, hg, hb)) * 60.0
    return h % 360.0, s, v


def detect_led(frame, color, cfg=None, frame_time_s=0.0):
    """Find the LED pixel in an RGB frame.

    The frame is converted to HSV; pixels inside the hue window of the
    requested color with saturation above the configured minimum are scored
    by saturation-weighted brightness, and the arg-max pixel is returned.
    """
    cfg = cfg or DetectionConfig()
    if color not in cfg.hue_center_deg:
        raise ValueError(f"unknown LED color {color!r}")
    a = np.asarray(frame, dtype=np.float64)
    if a.ndim != 3 or a.shape[2] != 3 or a.size == 0:
        raise ValueError("frame must be a non-empty HxWx3 RGB image")
    if a.max() > 1.0:
        a = a / 255.0
    hue, sat, val = rgb_to_hsv(a)
    center = cfg.hue_center_deg[color]
    dist = np.abs((hue - center + 180.0) % 360.0 - 180.0)
    mask = (dist <= cfg.hue_halfwidth_deg) & (sat >= cfg.saturation_min)
    score = np.where(mask, sat * val, 0.0)
    best = np.unravel_index(int(np.argmax(score)), score.shape)
    best_score = float(score[best])
    if best_score < cfg.score_floor:
        raise NoDetection(f"max LED score {best_score:.3f} below floor {cfg.score_floor}")
    v_row, u_col = best
    return LedDetection(pixel=(int(u_col), int(v_row)), score=best_score,
                        frame_time_s=frame_time_s)


def pixel_to_angles(cam: CameraModel, pixel):
    """Azimuth and camera-relative elevation for a pixel position.

    Returns (azimuth_deg in [0, 360), camera_elevation_deg) where the
    elevation is the depression angle below the camera's horizontal plane
    (90 deg means straight down). The image center is a singular direction
    and raises OutsideCalibratedField.
    """
    du = pixel[0] - cam.center_pixel[0]
    dv = pixel[1] - cam.center_pixel[1]
    radius = float(np.hypot(du, dv))
    if radius < 1e-9:
        raise OutsideCalibratedField("image center has undefined azimuth")
    theta = cam.radius_to_theta(radius)
    azimuth = (np.degrees(np.arctan2(dv, du)) + cam.yaw_offset_deg) % 360.0
    return float(azimuth), float(90.0 - np.degrees(theta))


def project_to_pixel(cam: CameraModel, azimuth_deg, horizontal_m, led_height_m):
    """Forward projection: where does an LED at the given azimuth, horizontal
    distance and height land on the sensor? Inverse of pixel_to_angles plus
    the height geometry; used by the synthesis oracle and overlays."""
    drop = cam.camera_height_m - led_height_m
    if drop <= 0:
        raise GeometryError("LED must be below the camera")
    theta = np.arctan2(horizontal_m, drop)
    radius = cam.theta_to_radius(float(theta))
    ang = np.radians(azimuth_deg - cam.yaw_offset_deg)
    u = cam.center_pixel[0] + radius * np.cos(ang)
    v = cam.center_pixel[1] + radius * np.sin(ang)
    return float(u), float(v)


def locate_detection(cam: CameraModel, detection: LedDetection,
                     source_center_height_m, array_height_m=DEFAULT_ARRAY_HEIGHT_M):
    """Convert one LED detection to (azimuth, elevation, distance) relative
    to the array, via the three-step geometry:

    i)  pixel -> azimuth and camera elevation;
    ii) camera height and LED height -> horizontal distance;
    iii) source height, array height and horizontal distance -> array
         elevation and slant distance.
    """
    led_height = source_center_height_m + LED_ABOVE_SOURCE_M
    if led_height >= cam.camera_height_m:
        raise GeometryError(
            f"LED at {led_height:.2f} m not below camera at {cam.camera_height_m:.2f} m")
    azimuth, cam_elev = pixel_to_angles(cam, detection.pixel)
    theta = np.radians(90.0 - cam_elev)
    horizontal = (cam.camera_height_m - led_height) * np.tan(theta)
    dz = source_center_height_m - array_height_m
    elevation = np.degrees(np.arctan2(dz, horizontal))
    distance = float(np.hypot(horizontal, dz))
    return float(azimuth), float(elevation), distance


def annotate_location(detections, source_center_height_m,
                      array_height_m=DEFAULT_ARRAY_HEIGHT_M, cam: CameraModel = None,
                      assign_tolerance_s=0.05):
    """Build a LocationTrack on the exact 100 ms grid from LED detections.

    Each grid frame takes the nearest detection within assign_tolerance_s;
    frames with no close detection are marked invalid. Detection timestamps
    may jitter freely; the output grid does not.
    """
    if cam is None:
        raise GeometryError("camera model required")
    dets = sorted(detections, key=lambda d: d.frame_time_s)
    if not dets:
        raise GeometryError("no detections to annotate")
    t_end = dets[-1].frame_time_s
    n = int(np.floor(t_end * 1000.0 / FRAME_PERIOD_MS)) + 1
    times_ms = FRAME_PERIOD_MS * np.arange(n, dtype=np.int64)
    det_times = np.array([d.frame_time_s for d in dets])
    az = np.zeros(n)
    el = np.zeros(n)
    dist = np.ones(n)
    valid = np.zeros(n, dtype=bool)
    for i, t_ms in enumerate(times_ms):
        t = t_ms / 1000.0
        j = int(np.argmin(np.abs(det_times - t)))
        if abs(det_times[j] - t) > assign_tolerance_s:
            continue
        try:
            a, e, d = locate_detection(cam, dets[j], source_center_height_m, array_height_m)
        except OutsideCalibratedField:
            continue
        az[i], el[i], dist[i] = a, e, d
        valid[i] = True
    return LocationTrack(times_ms=times_ms, azimuth_deg=az, elevation_deg=el,
                         distance_m=dist, valid=valid)


def render_led_frame(pixel, color="red", size=(960, 960),
                     sigma_px=3.0, background=0.18):
    """Render a synthetic fisheye frame with an LED glow at the given pixel.

    The blob peaks at its center (saturated hue, brightness falling off as a
    Gaussian), on a gray background, emulating what the detector sees. Used
    by the forward-projection oracle tests and the demo scripts.
    """
    h, w = size
    vv, uu = np.mgrid[0:h, 0:w].astype(np.float64)
    r2 = (uu - pixel[0]) ** 2 + (vv - pixel[1]) ** 2
    glow = np.exp(-r2 / (2.0 * sigma_px**2))
    frame = np.full((h, w, 3), background)
    if color == "red":
        tint = np.array([1.0, 0.05, 0.05])
    elif color == "green":
        tint = np.array([0.05, 1.0, 0.05])
    else:
        raise ValueError(f"unknown LED color {color!r}")
    frame += glow[..., None] * (tint[None, None, :] - background)
    return np.clip(frame, 0.0, 1.0)

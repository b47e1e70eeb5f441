"""Sensor-array sampling and camera-to-polar resampling.

Conventions: the sensor sits at the origin with x forward, y left and z up.
Elevation is measured from the xy-plane, azimuth in the xy-plane from +x
towards +y. Row index grows with elevation and column index with azimuth.

Each camera frame uses the same axis naming (x along the optical axis), and
the pinhole maps a camera-frame ray ``(x, y, z)`` to ``u = cx + fx*y/x`` and
``v = cy + fy*z/x``. Input images are therefore indexed ``[v, u]`` with ``u``
growing to the left and ``v`` growing upwards.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .model import ArraySpec, angle_between, unit_direction


@dataclass(frozen=True, eq=False)
class SensorArray:
    elevations: np.ndarray  # [R_V] radians, ascending
    azimuths: np.ndarray    # [R_H] radians, ascending

    @property
    def shape(self):
        return (len(self.elevations), len(self.azimuths))

    def directions(self) -> np.ndarray:
        """Unit beam directions, [R_V, R_H, 3]."""
        el, az = np.meshgrid(self.elevations, self.azimuths, indexing="ij")
        return unit_direction(el, az)


def _centered_angles(lo: float, hi: float, step: float) -> np.ndarray:
    if not step > 0:
        raise ConfigError(f"angular step must be positive, got {step}")
    span = hi - lo
    if not span > 0:
        raise ConfigError(f"empty field of view [{lo}, {hi}]")
    n = int(round(span / step))
    if n < 1:
        raise ConfigError(f"field of view [{lo}, {hi}] is narrower than one step of {step}")
    mid = 0.5 * (lo + hi)
    return mid + (np.arange(n) - 0.5 * (n - 1)) * step


def build_sensor_array(fov_v, fov_h, step_v: float, step_h: float) -> SensorArray:
    """Sample beam angles at bin centres; FoV and steps in degrees."""
    el = _centered_angles(float(fov_v[0]), float(fov_v[1]), float(step_v))
    az = _centered_angles(float(fov_h[0]), float(fov_h[1]), float(step_h))
    return SensorArray(np.deg2rad(el), np.deg2rad(az))


def sensor_array_from_spec(spec: ArraySpec) -> SensorArray:
    return build_sensor_array(spec.fov_v, spec.fov_h, spec.step_v, spec.step_h)


def rotation_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class CameraModel:
    """Pinhole camera co-located with the sensor.

    ``rotation`` maps sensor-frame vectors into the camera frame.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ConfigError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ConfigError("image size must be positive")
        r = np.asarray(self.rotation, dtype=np.float64)
        if r.shape != (3, 3) or not np.allclose(r @ r.T, np.eye(3), atol=1e-9):
            raise ConfigError("rotation must be a 3x3 orthonormal matrix")
        object.__setattr__(self, "rotation", r)

    @property
    def optical_axis(self) -> np.ndarray:
        """Camera +x expressed in the sensor frame."""
        return self.rotation.T @ np.array([1.0, 0.0, 0.0])

    def project(self, dirs):
        """Pixel coordinates of sensor-frame rays; returns (uv, in_front)."""
        d = np.asarray(dirs, dtype=np.float64) @ self.rotation.T
        x = d[..., 0]
        in_front = x > 1e-12
        xs = np.where(in_front, x, 1.0)
        uv = np.stack([self.cx + self.fx * d[..., 1] / xs, self.cy + self.fy * d[..., 2] / xs], axis=-1)
        return uv, in_front

    def pixel_ray(self, uv) -> np.ndarray:
        """Unit sensor-frame ray through pixel coordinates ``uv``."""
        uv = np.asarray(uv, dtype=np.float64)
        d = np.stack(
            [np.ones(uv.shape[:-1]), (uv[..., 0] - self.cx) / self.fx, (uv[..., 1] - self.cy) / self.fy], axis=-1
        )
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        return d @ self.rotation

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        if "rotation" in d:
            rot = np.asarray(d["rotation"], dtype=np.float64)
        else:
            # yaw_deg turns the optical axis towards +azimuth
            rot = rotation_z(math.radians(float(d.get("yaw_deg", 0.0)))).T
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]), rot)

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height, "rotation": self.rotation.tolist()}


def camera_for_fov(fov_v, fov_h, width: int, height: int, yaw_deg: float = 0.0, margin: float = 1.0) -> CameraModel:
    """Smallest pinhole whose image covers a polar FoV (degrees) plus ``margin``.

    Used to build test scenes: vertical extent is widest at the FoV's
    azimuth edges, where z/x = tan(el) / cos(az).
    """
    h0, h1 = math.radians(fov_h[0] - margin), math.radians(fov_h[1] + margin)
    v0, v1 = math.radians(fov_v[0] - margin), math.radians(fov_v[1] + margin)
    amax = max(abs(h0), abs(h1))
    if amax >= math.pi / 2:
        raise ConfigError("a pinhole camera cannot cover >= 180 degrees")
    y_lo, y_hi = math.tan(h0), math.tan(h1)
    sec = 1.0 / math.cos(amax)
    z_lo = min(math.tan(v0), math.tan(v0) * sec)
    z_hi = max(math.tan(v1), math.tan(v1) * sec)
    fx = (width - 1) / (y_hi - y_lo)
    fy = (height - 1) / (z_hi - z_lo)
    return CameraModel(fx, fy, -fx * y_lo, -fy * z_lo, width, height,
                       rotation_z(math.radians(yaw_deg)).T)


def project_to_image(array: SensorArray, cam: CameraModel):
    """Positional map of the sensor array on the camera image.

    Returns ``(uv, mask)`` with ``uv`` of shape [R_V, R_H, 2]; rays behind the
    camera or outside the pixel-centre grid are masked out.
    """
    uv, in_front = cam.project(array.directions())
    inside = (
        (uv[..., 0] >= 0) & (uv[..., 0] <= cam.width - 1)
        & (uv[..., 1] >= 0) & (uv[..., 1] <= cam.height - 1)
    )
    return uv, in_front & inside


def resample_image(src, uv, mask):
    """Bilinearly sample ``src`` ([H, W] or [H, W, C]) at ``uv`` where ``mask``.

    Returns ``(out, valid)``; invalid positions are zero.
    """
    img = np.asarray(src, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[..., None]
    if img.ndim != 3:
        raise ConfigError(f"expected a 2D or 3D image, got shape {img.shape}")
    h, w, c = img.shape
    mask = np.asarray(mask, dtype=bool)
    out = np.zeros(mask.shape + (c,), dtype=np.float64)
    if np.any(mask):
        u = uv[..., 0][mask]
        v = uv[..., 1][mask]
        x0 = np.clip(np.floor(u), 0, max(w - 2, 0)).astype(np.int64)
        y0 = np.clip(np.floor(v), 0, max(h - 2, 0)).astype(np.int64)
        x1 = np.minimum(x0 + 1, w - 1)
        y1 = np.minimum(y0 + 1, h - 1)
        fx = (u - x0)[:, None]
        fy = (v - y0)[:, None]
        top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
        bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
        out[mask] = top * (1 - fy) + bot * fy
    return (out[..., 0] if squeeze else out), mask.copy()


def depth_to_range(zdepth, uv, cam: CameraModel):
    """Convert planar depth sampled at ``uv`` to distance along each ray.

    Returns ``(range, valid)``; non-positive or non-finite depth is invalid
    and yields range 0.
    """
    z = np.asarray(zdepth, dtype=np.float64)
    a = (uv[..., 0] - cam.cx) / cam.fx
    b = (uv[..., 1] - cam.cy) / cam.fy
    valid = np.isfinite(z) & (z > 0)
    rng = np.where(valid, np.where(valid, z, 0.0) * np.sqrt(1.0 + a * a + b * b), 0.0)
    return rng, valid


def assign_cameras(array: SensorArray, cameras) -> np.ndarray:
    """Per-beam index of the camera whose optical axis is closest to the ray.

    Only cameras that actually image the ray compete; -1 where none does.
    """
    dirs = array.directions()
    best = np.full(array.shape, -1, dtype=np.int64)
    best_ang = np.full(array.shape, np.inf)
    for i, cam in enumerate(cameras):
        _, mask = project_to_image(array, cam)
        ang = angle_between(dirs, np.broadcast_to(cam.optical_axis, dirs.shape))
        better = mask & (ang < best_ang)
        best[better] = i
        best_ang[better] = ang[better]
    return best

"""Domain types: echo groups, multi-echo frames, LiDAR images, boxes and
simulation configuration.

A frame is stored column-wise in numpy arrays (one slot per echo) rather than
as a grid of Python objects; :meth:`MultiEchoFrame.group` materialises the
per-beam :class:`EchoGroup` view on demand.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Iterator, NamedTuple, Optional, Sequence

import numpy as np

from .errors import ConfigError

#: Angular tolerance used when checking that echoes lie on their beam.
COLLINEAR_TOL = 1e-6

CLASS_IDS = {"Car": 0, "Person": 1, "Cyclist": 2}


def wrap_angle(a):
    """Wrap an angle (scalar or array) into [-pi, pi)."""
    w = np.mod(np.asarray(a, dtype=np.float64) + np.pi, 2.0 * np.pi) - np.pi
    # mod can round up to exactly 2*pi for tiny negative inputs
    w = np.where(w >= np.pi, w - 2.0 * np.pi, w)
    return float(w) if np.ndim(w) == 0 else w


def unit_direction(elevation, azimuth):
    """Beam direction for elevation/azimuth (x forward, y left, z up)."""
    el = np.asarray(elevation, dtype=np.float64)
    az = np.asarray(azimuth, dtype=np.float64)
    ce = np.cos(el)
    return np.stack([ce * np.cos(az), ce * np.sin(az), np.sin(el) * np.ones_like(az)], axis=-1)


def angle_between(a, b):
    """Angle in radians between vectors along the last axis (stable near 0)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    cross = np.linalg.norm(np.cross(a, b), axis=-1)
    dot = np.sum(a * b, axis=-1)
    return np.arctan2(cross, dot)


class Echo(NamedTuple):
    point: tuple
    reflectance: float


@dataclass(frozen=True)
class EchoGroup:
    """Returns of one laser beam, strongest first, plus the shared ambient."""

    echoes: tuple
    ambient: float
    pixel: tuple

    def __len__(self):
        return len(self.echoes)

    def ranges(self):
        return [math.sqrt(sum(c * c for c in e.point)) for e in self.echoes]


@dataclass(frozen=True, eq=False)
class MultiEchoFrame:
    """One sweep of K-echo measurements on an H x W sensor grid.

    ``bins`` holds the histogram bin index of every echo and ``-1`` for empty
    slots. Valid echoes always occupy the leading slots of a beam.
    """

    points: np.ndarray        # [H, W, K, 3]
    reflectance: np.ndarray   # [H, W, K]
    valid: np.ndarray         # [H, W, K] bool
    ambient: np.ndarray       # [H, W]
    bin_width: float
    bins: Optional[np.ndarray] = None        # [H, W, K] int64
    directions: Optional[np.ndarray] = None  # [H, W, 3] unit beam directions
    sensor_pose: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        if self.points.ndim != 4 or self.points.shape[-1] != 3:
            raise ConfigError(f"points must be [H, W, K, 3], got {self.points.shape}")
        h, w, k, _ = self.points.shape
        if k < 1:
            raise ConfigError("a frame needs at least one echo slot")
        for name, arr, shape in (
            ("reflectance", self.reflectance, (h, w, k)),
            ("valid", self.valid, (h, w, k)),
            ("ambient", self.ambient, (h, w)),
            ("bins", self.bins, (h, w, k)),
            ("directions", self.directions, (h, w, 3)),
        ):
            if arr is not None and arr.shape != shape:
                raise ConfigError(f"{name} has shape {arr.shape}, expected {shape}")
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, np.ndarray):
                v.setflags(write=False)

    @property
    def height(self) -> int:
        return self.points.shape[0]

    @property
    def width(self) -> int:
        return self.points.shape[1]

    @property
    def max_echoes(self) -> int:
        return self.points.shape[2]

    def group(self, row: int, col: int) -> EchoGroup:
        echoes = tuple(
            Echo(tuple(float(c) for c in self.points[row, col, k]), float(self.reflectance[row, col, k]))
            for k in range(self.max_echoes)
            if self.valid[row, col, k]
        )
        return EchoGroup(echoes, float(self.ambient[row, col]), (row, col))

    def groups(self) -> Iterator[EchoGroup]:
        for r in range(self.height):
            for c in range(self.width):
                yield self.group(r, c)

    def echo_counts(self) -> np.ndarray:
        """Number of valid points in each echo slot, shape [K]."""
        return self.valid.reshape(-1, self.max_echoes).sum(axis=0)

    def num_points(self) -> int:
        return int(self.valid.sum())

    def to_lidar_image(self) -> "LidarImage":
        refl = np.where(self.valid, self.reflectance, 0.0)
        data = np.concatenate([self.ambient[..., None], refl], axis=-1).astype(np.float32)
        return LidarImage(data)

    def to_cloud_tensor(self) -> np.ndarray:
        """[H, W, K, 5] float32 tensor of (x, y, z, reflectance, valid)."""
        out = np.zeros(self.points.shape[:3] + (5,), dtype=np.float32)
        out[..., :3] = np.where(self.valid[..., None], self.points, 0.0)
        out[..., 3] = np.where(self.valid, self.reflectance, 0.0)
        out[..., 4] = self.valid
        return out

    @classmethod
    def from_cloud_tensor(cls, cloud, ambient, bin_width: float = float("nan")) -> "MultiEchoFrame":
        cloud = np.asarray(cloud, dtype=np.float64)
        if cloud.ndim != 4 or cloud.shape[-1] != 5:
            raise ConfigError(f"cloud tensor must be [H, W, K, 5], got {cloud.shape}")
        return cls(
            points=cloud[..., :3].copy(),
            reflectance=cloud[..., 3].copy(),
            valid=cloud[..., 4] > 0.5,
            ambient=np.asarray(ambient, dtype=np.float64).copy(),
            bin_width=bin_width,
        )


@dataclass(frozen=True, eq=False)
class LidarImage:
    """Range-view image: channel 0 ambient, channels 1..K echo reflectance."""

    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[-1] < 2:
            raise ConfigError(f"LiDAR image must be [H, W, 1+K], got {self.data.shape}")

    @property
    def k(self) -> int:
        return self.data.shape[-1] - 1

    @property
    def ambient(self) -> np.ndarray:
        return self.data[..., 0]

    @property
    def reflectance(self) -> np.ndarray:
        return self.data[..., 1:]


@dataclass(frozen=True)
class OrientedBox3D:
    """3D box with yaw about the up axis.

    ``l`` runs along the heading ``(cos yaw, sin yaw, 0)``, ``w`` across it and
    ``h`` along z. The KITTI-style attributes are only needed for the KITTI
    difficulty protocol.
    """

    cx: float
    cy: float
    cz: float
    h: float
    w: float
    l: float
    yaw: float
    label: str = "Car"
    score: Optional[float] = None
    height_px: Optional[float] = None
    occlusion: Optional[int] = None
    truncation: Optional[float] = None

    def __post_init__(self):
        vals = (self.cx, self.cy, self.cz, self.h, self.w, self.l, self.yaw)
        if not all(math.isfinite(v) for v in vals):
            raise ConfigError(f"non-finite box parameters: {vals}")
        if min(self.h, self.w, self.l) <= 0:
            raise ConfigError(f"box dimensions must be positive: {(self.h, self.w, self.l)}")
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    @property
    def center(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.cz])

    @property
    def class_id(self) -> int:
        return CLASS_IDS.get(self.label, -1)

    @property
    def range(self) -> float:
        return math.sqrt(self.cx**2 + self.cy**2 + self.cz**2)

    def volume(self) -> float:
        return self.h * self.w * self.l

    def bev_corners(self) -> np.ndarray:
        """Footprint corners, counter-clockwise, shape [4, 2]."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        hl, hw = self.l / 2.0, self.w / 2.0
        local = np.array([[hl, -hw], [hl, hw], [-hl, hw], [-hl, -hw]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array([self.cx, self.cy])

    def contains(self, points, eps: float = 1e-9) -> np.ndarray:
        """Inclusive point-in-box test for an [N, 3] array."""
        p = np.atleast_2d(np.asarray(points, dtype=np.float64)) - self.center
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        along = p[:, 0] * c + p[:, 1] * s
        across = -p[:, 0] * s + p[:, 1] * c
        return (
            (np.abs(along) <= self.l / 2 + eps)
            & (np.abs(across) <= self.w / 2 + eps)
            & (np.abs(p[:, 2]) <= self.h / 2 + eps)
        )

    def with_(self, **kw) -> "OrientedBox3D":
        return replace(self, **kw)


@dataclass(frozen=True)
class ArraySpec:
    """Field of view (degrees, [lo, hi]) and angular step (degrees)."""

    fov_v: tuple = (-20.0, 25.0)
    fov_h: tuple = (-70.0, 70.0)
    step_v: float = 0.2
    step_h: float = 0.1


@dataclass(frozen=True)
class SimConfig:
    """Simulation parameters; defaults follow the frontal-view setup."""

    bins: int = 10240
    depth_range: float = 1000.0
    sbr: float = 50.0
    kernel_size: int = 5
    kernel_sigma: float = 1.0
    tau: Optional[float] = None  # None: derive from the ambient tail bound
    k: int = 3
    seed: int = 0
    nms_window: int = 3
    array: ArraySpec = ArraySpec()
    cameras: tuple = ()

    def __post_init__(self):
        if self.bins < 1:
            raise ConfigError("bins must be >= 1")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError("kernel_size must be a positive odd integer")
        if self.kernel_sigma <= 0:
            raise ConfigError("kernel_sigma must be positive")
        if self.tau is not None and self.tau < 0:
            raise ConfigError("tau must be >= 0")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.sbr <= 0:
            raise ConfigError("sbr must be positive")
        if self.depth_range <= 0:
            raise ConfigError("depth_range must be positive")
        if self.nms_window < 0:
            raise ConfigError("nms_window must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must fit in 64 unsigned bits")

    @property
    def bin_width(self) -> float:
        return self.depth_range / self.bins

    def updated(self, **kw) -> "SimConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        from .optics import CameraModel

        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "array" in d:
            a = d["array"]
            d["array"] = ArraySpec(
                fov_v=tuple(a.get("fov_v", ArraySpec.fov_v)),
                fov_h=tuple(a.get("fov_h", ArraySpec.fov_h)),
                step_v=float(a.get("step_v", ArraySpec.step_v)),
                step_h=float(a.get("step_h", ArraySpec.step_h)),
            )
        if "cameras" in d:
            d["cameras"] = tuple(CameraModel.from_dict(c) for c in d["cameras"])
        return cls(**d)

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        a = self.array
        out["array"] = {"fov_v": list(a.fov_v), "fov_h": list(a.fov_h), "step_v": a.step_v, "step_h": a.step_h}
        out["cameras"] = [c.to_dict() for c in self.cameras]
        return out


def validate_frame(frame: MultiEchoFrame, tol: float = COLLINEAR_TOL) -> list:
    """List every echo-group invariant violation in ``frame``.

    Checks strength ordering, contiguous echo slots, non-negative values and
    that every echo lies on its beam (the stored beam direction if the frame
    carries one, otherwise the ray through the first echo).
    """
    out = []
    valid = np.asarray(frame.valid)
    refl = np.asarray(frame.reflectance)
    pts = np.asarray(frame.points)
    k = frame.max_echoes

    if np.any(np.asarray(frame.ambient) < 0):
        for r, c in zip(*np.nonzero(np.asarray(frame.ambient) < 0)):
            out.append(f"({r},{c}): negative ambient")
    bad = valid & (refl < 0)
    for r, c, e in zip(*np.nonzero(bad)):
        out.append(f"({r},{c}) echo {e}: negative reflectance")

    if k > 1:
        gap = ~valid[..., :-1] & valid[..., 1:]
        for r, c, e in zip(*np.nonzero(gap)):
            out.append(f"({r},{c}) echo {e + 1}: valid echo after an empty slot")
        order = valid[..., :-1] & valid[..., 1:] & (refl[..., 1:] > refl[..., :-1])
        for r, c, e in zip(*np.nonzero(order)):
            out.append(f"({r},{c}) echo {e + 1}: stronger than echo {e}")

    if frame.directions is not None:
        ref = np.broadcast_to(np.asarray(frame.directions)[:, :, None, :], pts.shape)
        check = valid
    else:
        ref = np.broadcast_to(pts[:, :, :1, :], pts.shape)
        check = valid.copy()
        check[..., 0] = False
    if np.any(check):
        ang = angle_between(pts[check], ref[check])
        idx = np.argwhere(check)
        for (r, c, e), a in zip(idx, ang):
            if a > tol:
                out.append(f"({r},{c}) echo {e}: off-beam by {a:.3g} rad")
    return out


def frames_equal(a: MultiEchoFrame, b: MultiEchoFrame) -> bool:
    """Byte-level equality of the measured content of two frames."""
    pairs = [(a.points, b.points), (a.reflectance, b.reflectance), (a.valid, b.valid), (a.ambient, b.ambient)]
    if a.bins is not None or b.bins is not None:
        pairs.append((a.bins, b.bins))
    for x, y in pairs:
        if x is None or y is None or x.shape != y.shape or x.dtype != y.dtype:
            return False
        if x.tobytes() != y.tobytes():
            return False
    return True


def stack_boxes(boxes: Sequence[OrientedBox3D]) -> np.ndarray:
    """[N, 7] array of (cx, cy, cz, h, w, l, yaw)."""
    return np.array([[b.cx, b.cy, b.cz, b.h, b.w, b.l, b.yaw] for b in boxes], dtype=np.float64).reshape(-1, 7)

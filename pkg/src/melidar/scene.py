"""Procedural box-and-ground scenes with analytic depth and normals.

Rays are cast from the camera through every pixel against a ground plane and
a set of oriented boxes; the first hit gives planar depth, the surface normal
(camera frame) and a red-channel albedo.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import ArraySpec, OrientedBox3D, SimConfig
from .optics import CameraModel, camera_for_fov

SENSOR_HEIGHT = 1.8
SKY_RED = 0.85

_SIZES = {"Car": (1.6, 1.8, 4.4), "Person": (1.75, 0.6, 0.6), "Cyclist": (1.7, 0.7, 1.8)}


@dataclass(frozen=True, eq=False)
class Scene:
    rgb: np.ndarray      # [H, W, 3]
    depth: np.ndarray    # [H, W] planar depth, inf where nothing is hit
    normals: np.ndarray  # [H, W, 3] camera frame, zero where nothing is hit
    config: SimConfig
    boxes: tuple         # labelled objects
    obstacles: tuple = ()  # unlabelled background boxes


def _box_hits(origins_dirs, box: OrientedBox3D):
    """Slab test; returns (t, normal) with t = inf on miss."""
    d = origins_dirs
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rot = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])  # world -> box
    o = rot @ (-box.center)
    dl = d @ rot.T
    half = np.array([box.l / 2, box.w / 2, box.h / 2])
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dl
        t1 = (-half - o) * inv
        t2 = (half - o) * inv
    tmin = np.minimum(t1, t2)
    tmax = np.maximum(t1, t2)
    tmin = np.where(np.isnan(tmin), -np.inf, tmin)
    tmax = np.where(np.isnan(tmax), np.inf, tmax)
    t_near = tmin.max(axis=-1)
    t_far = tmax.min(axis=-1)
    hit = (t_near <= t_far) & (t_near > 1e-6)
    axis = tmin.argmax(axis=-1)
    sign = -np.sign(np.take_along_axis(dl, axis[..., None], axis=-1)[..., 0])
    n_local = np.zeros(d.shape)
    np.put_along_axis(n_local, axis[..., None], sign[..., None], axis=-1)
    normal = n_local @ rot  # box -> world
    return np.where(hit, t_near, np.inf), normal


def render(cam: CameraModel, boxes, albedo, ground_albedo=0.35, sensor_height=SENSOR_HEIGHT):
    """Ray-cast a camera image; returns (rgb, depth, normals)."""
    vv, uu = np.meshgrid(np.arange(cam.height, dtype=np.float64), np.arange(cam.width, dtype=np.float64), indexing="ij")
    dirs = cam.pixel_ray(np.stack([uu, vv], axis=-1))

    t_best = np.full(dirs.shape[:2], np.inf)
    normal = np.zeros(dirs.shape)
    red = np.full(dirs.shape[:2], SKY_RED)

    down = dirs[..., 2] < -1e-9
    t_g = np.where(down, -sensor_height / np.where(down, dirs[..., 2], -1.0), np.inf)
    t_fin = np.where(down, t_g, 0.0)
    gx = t_fin * dirs[..., 0]
    gy = t_fin * dirs[..., 1]
    checker = ((np.floor(gx / 4.0) + np.floor(gy / 4.0)) % 2 == 0)
    better = t_g < t_best
    t_best[better] = t_g[better]
    normal[better] = (0.0, 0.0, 1.0)
    red[better] = np.where(checker, ground_albedo, ground_albedo * 0.7)[better]

    for box, alb in zip(boxes, albedo):
        t, n = _box_hits(dirs, box)
        better = t < t_best
        t_best[better] = t[better]
        normal[better] = n[better]
        # darker sides than top, like a high sun
        red[better] = (alb * (0.55 + 0.45 * np.clip(n[..., 2], 0, 1)))[better]

    cam_dirs = dirs @ cam.rotation.T
    depth = t_best * cam_dirs[..., 0]
    depth[~np.isfinite(t_best)] = np.inf
    n_cam = normal @ cam.rotation.T
    rgb = np.stack([red, 0.8 * red, 0.6 * red], axis=-1)
    return rgb.astype(np.float32), depth, n_cam


def random_objects(rng: np.random.Generator, n_cars=4, n_people=3, x_range=(6.0, 45.0), y_half=12.0, max_azimuth=None):
    boxes = []
    attempts = 0
    want = ["Car"] * n_cars + ["Person"] * n_people
    while want and attempts < 500:
        attempts += 1
        label = want[-1]
        h, w, l = _SIZES[label]
        x = rng.uniform(*x_range)
        y = rng.uniform(-y_half, y_half)
        if max_azimuth is not None and abs(math.atan2(y, x)) > max_azimuth:
            continue
        yaw = rng.uniform(-math.pi, math.pi)
        cand = OrientedBox3D(x, y, -SENSOR_HEIGHT + h / 2, h, w, l, yaw, label)
        if any(math.hypot(cand.cx - b.cx, cand.cy - b.cy) < 0.5 * (cand.l + b.l) + 0.5 for b in boxes):
            continue
        boxes.append(cand)
        want.pop()
    return boxes


def make_scene(scene_seed: int = 0, array: ArraySpec = ArraySpec(), width: int = 64, height: int = 32,
               n_cars: int = 4, n_people: int = 3, x_range=(6.0, 45.0), **config_kw) -> Scene:
    """Random scene viewed by one camera covering ``array``'s field of view."""
    rng = np.random.default_rng(scene_seed)
    cam = camera_for_fov(array.fov_v, array.fov_h, width, height)
    half_az = math.radians(max(abs(array.fov_h[0]), abs(array.fov_h[1])))
    objs = random_objects(rng, n_cars, n_people, x_range, y_half=x_range[1] * math.tan(min(half_az, 1.2)),
                          max_azimuth=half_az)
    # background blocks make far returns and occlusion edges
    walls = []
    for _ in range(3):
        x = rng.uniform(x_range[1] + 5, x_range[1] + 25)
        y = rng.uniform(-1, 1) * x * math.tan(min(half_az, 1.2))
        walls.append(OrientedBox3D(x, y, -SENSOR_HEIGHT + 4.0, 8.0, rng.uniform(4, 10), rng.uniform(8, 20),
                                   rng.uniform(-0.3, 0.3), "Building"))
    albedo = [rng.uniform(0.3, 1.0) for _ in objs] + [rng.uniform(0.2, 0.6) for _ in walls]
    rgb, depth, normals = render(cam, objs + walls, albedo)
    config = SimConfig(array=array, cameras=(cam,), **config_kw)
    return Scene(rgb, depth, normals, config, tuple(objs), tuple(walls))


#: Sensor grid of the bundled toy scene: 32 x 64 beams.
TOY_ARRAY = ArraySpec(fov_v=(-16.0, 8.0), fov_h=(-40.0, 40.0), step_v=0.75, step_h=1.25)


def toy_scene(scene_seed: int = 0, **config_kw) -> Scene:
    """The 32x64 toy world used in tests and docs."""
    return make_scene(scene_seed, TOY_ARRAY, width=64, height=32, **config_kw)

"""Deterministic preprocessing for the detection pipeline.

Point sets are plain numpy structures: a :class:`PointSet` keeps coordinates
together with the beam (row, col) and echo slot each point came from.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInputError, MappingError
from .model import LidarImage, MultiEchoFrame, OrientedBox3D


@dataclass(frozen=True, eq=False)
class PointSet:
    xyz: np.ndarray          # [M, 3]
    reflectance: np.ndarray  # [M]
    pixel: np.ndarray        # [M, 2] (row, col)
    echo: np.ndarray         # [M] echo slot, 0 = strongest

    def __len__(self):
        return len(self.xyz)

    def take(self, idx) -> "PointSet":
        return PointSet(self.xyz[idx], self.reflectance[idx], self.pixel[idx], self.echo[idx])

    def to_tensor(self) -> np.ndarray:
        """[M, 7] float32: x, y, z, reflectance, row, col, echo."""
        out = np.zeros((len(self), 7), dtype=np.float32)
        out[:, :3] = self.xyz
        out[:, 3] = self.reflectance
        out[:, 4:6] = self.pixel
        out[:, 6] = self.echo
        return out

    @classmethod
    def from_frame(cls, frame: MultiEchoFrame) -> "PointSet":
        r, c, e = np.nonzero(np.asarray(frame.valid))
        return cls(
            np.asarray(frame.points)[r, c, e],
            np.asarray(frame.reflectance)[r, c, e],
            np.stack([r, c], axis=1),
            e,
        )


def reassign(frame: MultiEchoFrame):
    """Split a frame into (penetrable, impenetrable) point sets.

    The echo farthest from the sensor in each beam is impenetrable, all
    others penetrable. On equal range the stronger echo (lower slot) wins.
    """
    valid = np.asarray(frame.valid)
    pts = np.asarray(frame.points, dtype=np.float64)
    origin = np.asarray(frame.sensor_pose)[:3, 3]
    rng = np.where(valid, np.linalg.norm(pts - origin, axis=-1), -np.inf)
    # argmax returns the first maximum, i.e. the strongest among ties
    far = np.argmax(rng, axis=-1)
    is_far = np.zeros(valid.shape, dtype=bool)
    np.put_along_axis(is_far, far[..., None], True, axis=-1)
    is_far &= valid
    allpts = PointSet.from_frame(frame)
    flag = is_far[allpts.pixel[:, 0], allpts.pixel[:, 1], allpts.echo]
    return allpts.take(~flag), allpts.take(flag)


def paint_class(pixels, boxes2d, num_classes: int) -> np.ndarray:
    """Multi-hot class vector per point from 2D boxes on the LiDAR image.

    ``pixels`` is [M, 2] of (row, col); each box is
    ``(col_min, row_min, col_max, row_max, class_id)`` with inclusive edges.
    """
    px = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
    out = np.zeros((px.shape[0], num_classes), dtype=np.float32)
    for box in boxes2d:
        x0, y0, x1, y1, cid = box
        cid = int(cid)
        if not 0 <= cid < num_classes:
            raise MappingError(f"class id {cid} outside [0, {num_classes})")
        inside = (px[:, 1] >= x0) & (px[:, 1] <= x1) & (px[:, 0] >= y0) & (px[:, 0] <= y1)
        out[inside, cid] = 1.0
    return out


def paint_pixel(pixels, echo, image: LidarImage) -> np.ndarray:
    """(ambient, own reflectance) for each point, shape [M, 2]."""
    px = np.atleast_2d(np.asarray(pixels, dtype=np.int64))
    echo = np.atleast_1d(np.asarray(echo, dtype=np.int64))
    data = np.asarray(image.data)
    h, w, ch = data.shape
    if np.any((px[:, 0] < 0) | (px[:, 0] >= h) | (px[:, 1] < 0) | (px[:, 1] >= w)):
        raise MappingError("point maps outside the LiDAR image")
    if np.any((echo < 0) | (echo >= ch - 1)):
        raise MappingError(f"echo index outside the image's {ch - 1} reflectance channels")
    amb = data[px[:, 0], px[:, 1], 0]
    refl = data[px[:, 0], px[:, 1], 1 + echo]
    return np.stack([amb, refl], axis=1)


def _rot_up(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def canonical_transform(points, proposal: OrientedBox3D) -> np.ndarray:
    """Express points in the proposal's centred, heading-aligned frame."""
    p = np.asarray(points, dtype=np.float64) - proposal.center
    return p @ _rot_up(-proposal.yaw).T


def inverse_canonical_transform(points, proposal: OrientedBox3D) -> np.ndarray:
    return np.asarray(points, dtype=np.float64) @ _rot_up(proposal.yaw).T + proposal.center


def subsample_indices(n_points: int, n: int, seed: int) -> np.ndarray:
    """Indices of ``n`` points drawn from ``n_points``.

    Without replacement when enough points exist, otherwise with
    replacement. Deterministic per seed.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if n_points < 1:
        raise EmptyInputError("cannot subsample an empty point set")
    gen = np.random.default_rng(seed)
    if n_points >= n:
        return gen.choice(n_points, size=n, replace=False)
    return gen.integers(0, n_points, size=n)


def subsample(points, n: int, seed: int):
    """``n`` points of an array or :class:`PointSet`, see :func:`subsample_indices`."""
    idx = subsample_indices(len(points), n, seed)
    return points.take(idx) if isinstance(points, PointSet) else np.asarray(points)[idx]


def foreground_labels(points, gt_boxes) -> np.ndarray:
    """1 for points inside (inclusive) any ground-truth box, else 0."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    lab = np.zeros(len(pts), dtype=np.int64)
    for box in gt_boxes:
        lab |= box.contains(pts).astype(np.int64)
    return lab

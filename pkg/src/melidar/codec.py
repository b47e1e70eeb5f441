"""Bin-based box regression targets and proposal label assignment.

The two ground-plane axes (x, y in the sensor frame) and the yaw are coded
as a bin index plus a residual normalized by the bin width; the vertical
offset is a raw residual in metres and sizes are log-ratios to a per-class
mean size.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DecodeError, OutOfRangeError
from .model import OrientedBox3D, wrap_angle

DEFAULT_MEAN_SIZES = {
    "Car": (1.52, 1.63, 3.88),
    "Person": (1.76, 0.66, 0.84),
    "Cyclist": (1.74, 0.60, 1.76),
}

#: (positive if max IoU >=, negative if max IoU <) per class.
PROPOSAL_IOU_THRESHOLDS = {"Car": (0.6, 0.45), "Person": (0.5, 0.4)}


@dataclass(frozen=True)
class BinCodecConfig:
    search_range: float = 3.0
    bin_size: float = 0.5
    yaw_bins: int = 12
    mean_sizes: dict = field(default_factory=lambda: dict(DEFAULT_MEAN_SIZES))

    def __post_init__(self):
        if self.search_range <= 0 or self.bin_size <= 0:
            raise ConfigError("search range and bin size must be positive")
        ratio = 2 * self.search_range / self.bin_size
        if abs(ratio - round(ratio)) > 1e-9:
            raise ConfigError("2 * search_range must be a multiple of bin_size")
        if self.yaw_bins < 2:
            raise ConfigError("need at least 2 orientation bins")

    @property
    def loc_bins(self) -> int:
        return int(round(2 * self.search_range / self.bin_size))

    @property
    def yaw_bin_width(self) -> float:
        return 2 * math.pi / self.yaw_bins

    def mean_size(self, label: str):
        try:
            return self.mean_sizes[label]
        except KeyError:
            raise ConfigError(f"no mean size configured for class {label!r}") from None

    @classmethod
    def from_dict(cls, d: dict) -> "BinCodecConfig":
        d = dict(d)
        if "mean_sizes" in d:
            d["mean_sizes"] = {k: tuple(v) for k, v in d["mean_sizes"].items()}
        return cls(**d)


@dataclass(frozen=True)
class BoxTargets:
    bin_x: int
    bin_y: int
    bin_yaw: int
    res_x: float
    res_y: float
    res_yaw: float
    res_z: float
    res_h: float
    res_w: float
    res_l: float

    @property
    def bins(self):
        return (self.bin_x, self.bin_y, self.bin_yaw)

    @property
    def residuals(self):
        """(res_x, res_y, res_yaw, res_z, res_h, res_w, res_l)."""
        return (self.res_x, self.res_y, self.res_yaw, self.res_z, self.res_h, self.res_w, self.res_l)


def _bin_axis(d: float, cfg: BinCodecConfig):
    s, delta = cfg.search_range, cfg.bin_size
    b = math.floor((d + s) / delta)
    b = min(max(b, 0), cfg.loc_bins - 1)
    return b, (d + s - b * delta - delta / 2) / delta


def encode(box: OrientedBox3D, anchor, cfg: BinCodecConfig = BinCodecConfig(), mean_size=None) -> BoxTargets:
    ax, ay, az = (float(v) for v in anchor)
    dx, dy, dz = box.cx - ax, box.cy - ay, box.cz - az
    if abs(dx) >= cfg.search_range or abs(dy) >= cfg.search_range:
        raise OutOfRangeError(f"box centre offset ({dx:.3f}, {dy:.3f}) outside search range {cfg.search_range}")
    mh, mw, ml = mean_size if mean_size is not None else cfg.mean_size(box.label)
    bx, rx = _bin_axis(dx, cfg)
    by, ry = _bin_axis(dy, cfg)
    wy = cfg.yaw_bin_width
    shifted = box.yaw + math.pi
    byaw = min(int(math.floor(shifted / wy)), cfg.yaw_bins - 1)
    ryaw = (shifted - byaw * wy - wy / 2) / wy
    return BoxTargets(bx, by, byaw, rx, ry, ryaw, dz,
                      math.log(box.h / mh), math.log(box.w / mw), math.log(box.l / ml))


def decode(t: BoxTargets, anchor, cfg: BinCodecConfig = BinCodecConfig(), label: str = "Car", mean_size=None) -> OrientedBox3D:
    for name, b, n in (("x", t.bin_x, cfg.loc_bins), ("y", t.bin_y, cfg.loc_bins), ("yaw", t.bin_yaw, cfg.yaw_bins)):
        if not 0 <= b < n:
            raise DecodeError(f"{name} bin {b} outside [0, {n})")
    ax, ay, az = (float(v) for v in anchor)
    s, delta = cfg.search_range, cfg.bin_size
    dx = t.bin_x * delta + delta / 2 + t.res_x * delta - s
    dy = t.bin_y * delta + delta / 2 + t.res_y * delta - s
    wy = cfg.yaw_bin_width
    yaw = wrap_angle(t.bin_yaw * wy + wy / 2 + t.res_yaw * wy - math.pi)
    mh, mw, ml = mean_size if mean_size is not None else cfg.mean_size(label)
    return OrientedBox3D(ax + dx, ay + dy, az + t.res_z,
                         mh * math.exp(t.res_h), mw * math.exp(t.res_w), ml * math.exp(t.res_l), yaw, label)


def assign_proposal_labels(proposals, gt_boxes, label: str, thresholds=None):
    """Label proposals 1 (positive), 0 (negative) or -1 (ignored).

    Returns ``(labels, matched_gt_index, max_iou)``; ``matched_gt_index`` is
    -1 when there is no ground truth.
    """
    from .metrics import iou3d

    table = thresholds or PROPOSAL_IOU_THRESHOLDS
    try:
        hi, lo = table[label]
    except KeyError:
        raise ConfigError(f"no proposal IoU thresholds for class {label!r}") from None
    n = len(proposals)
    labels = np.zeros(n, dtype=np.int64)
    matched = np.full(n, -1, dtype=np.int64)
    best = np.zeros(n)
    for i, p in enumerate(proposals):
        if gt_boxes:
            ious = [iou3d(p, g) for g in gt_boxes]
            j = int(np.argmax(ious))
            best[i], matched[i] = ious[j], j
        if best[i] >= hi:
            labels[i] = 1
        elif best[i] < lo:
            labels[i] = 0
        else:
            labels[i] = -1
    return labels, matched, best


def label_for_iou(max_iou: float, label: str, thresholds=None) -> int:
    hi, lo = (thresholds or PROPOSAL_IOU_THRESHOLDS)[label]
    return 1 if max_iou >= hi else (0 if max_iou < lo else -1)

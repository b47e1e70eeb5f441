"""Oriented 3D IoU, difficulty stratification and average precision."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .model import OrientedBox3D

DIFFICULTIES = ("easy", "moderate", "hard")

#: Range bounds of the depth-based protocol; beyond the last edge a box is excluded.
DEPTH_EDGES = (40.0, 80.0, 200.0)

#: KITTI-style limits per level: (min 2D height px, max occlusion, max truncation).
KITTI_LIMITS = {"easy": (40.0, 0, 0.15), "moderate": (25.0, 1, 0.30), "hard": (25.0, 2, 0.50)}

#: IoU thresholds evaluated per class.
IOU_THRESHOLDS = {"Car": (0.5, 0.7), "Person": (0.25, 0.5), "Cyclist": (0.5,)}

RECALL_POINTS = 40


def _polygon_area(poly) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def clip_polygon(subject, clip) -> np.ndarray:
    """Sutherland-Hodgman clipping of ``subject`` by the convex CCW ``clip``."""
    out = [tuple(p) for p in subject]
    n = len(clip)
    for i in range(n):
        if not out:
            break
        a, b = clip[i], clip[(i + 1) % n]
        ex, ey = b[0] - a[0], b[1] - a[1]

        def side(p):
            return ex * (p[1] - a[1]) - ey * (p[0] - a[0])

        src, out = out, []
        for j in range(len(src)):
            p, q = src[j], src[(j + 1) % len(src)]
            sp, sq = side(p), side(q)
            if sp >= 0:
                out.append(p)
            if (sp >= 0) != (sq >= 0):
                t = sp / (sp - sq)
                out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
    return np.array(out, dtype=np.float64).reshape(-1, 2)


def bev_intersection(a: OrientedBox3D, b: OrientedBox3D) -> float:
    return _polygon_area(clip_polygon(a.bev_corners(), b.bev_corners()))


def iou3d(a: OrientedBox3D, b: OrientedBox3D) -> float:
    """Volume IoU of two boxes yawed about the up axis."""
    zlo = max(a.cz - a.h / 2, b.cz - b.h / 2)
    zhi = min(a.cz + a.h / 2, b.cz + b.h / 2)
    if zhi <= zlo:
        return 0.0
    # cheap reject on circumscribed circles
    ra = 0.5 * math.hypot(a.l, a.w)
    rb = 0.5 * math.hypot(b.l, b.w)
    if math.hypot(a.cx - b.cx, a.cy - b.cy) >= ra + rb:
        return 0.0
    inter = bev_intersection(a, b) * (zhi - zlo)
    union = a.volume() + b.volume() - inter
    return float(min(max(inter / union, 0.0), 1.0))


def iou_matrix(dets, gts) -> np.ndarray:
    out = np.zeros((len(dets), len(gts)))
    for i, d in enumerate(dets):
        for j, g in enumerate(gts):
            out[i, j] = iou3d(d, g)
    return out


def difficulty(box: OrientedBox3D, mode: str = "depth"):
    """Difficulty level of a box, or None when it falls outside all levels.

    ``depth`` uses the distance of the box centre from the sensor. ``kitti``
    returns the easiest level whose height/occlusion/truncation limits the
    box satisfies; boxes without those annotations are treated as easy.
    """
    if mode == "depth":
        r = box.range
        for name, edge in zip(DIFFICULTIES, DEPTH_EDGES):
            if r < edge or (name == "hard" and r <= edge):
                return name
        return None
    if mode == "kitti":
        hpx = math.inf if box.height_px is None else box.height_px
        occ = 0 if box.occlusion is None else box.occlusion
        trunc = 0.0 if box.truncation is None else box.truncation
        for name in DIFFICULTIES:
            min_h, max_occ, max_trunc = KITTI_LIMITS[name]
            if hpx >= min_h and occ <= max_occ and trunc <= max_trunc:
                return name
        return None
    raise ConfigError(f"unknown difficulty mode {mode!r}")


def in_difficulty(box: OrientedBox3D, level, mode: str = "depth") -> bool:
    """Whether ``box`` counts for ``level`` (``None`` or "all" accepts any).

    Depth levels are disjoint range bands; KITTI levels are cumulative, so
    an easy box also counts for moderate and hard.
    """
    if level in (None, "all"):
        return mode != "depth" or difficulty(box, mode) is not None
    if level not in DIFFICULTIES:
        raise ConfigError(f"unknown difficulty {level!r}")
    got = difficulty(box, mode)
    if got is None:
        return False
    if mode == "kitti":
        return DIFFICULTIES.index(got) <= DIFFICULTIES.index(level)
    return got == level


@dataclass
class APResult:
    ap: float
    num_gt: int
    num_det: int
    tp: int
    fp: int
    precision: np.ndarray = field(repr=False)
    recall: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        ap = None if math.isnan(self.ap) else self.ap
        return {"ap": ap, "num_gt": self.num_gt, "num_det": self.num_det, "tp": self.tp, "fp": self.fp}


def _group(boxes, frames):
    if frames is None:
        frames = [0] * len(boxes)
    if len(frames) != len(boxes):
        raise ValueError("frames must align with boxes")
    out = {}
    for b, f in zip(boxes, frames):
        out.setdefault(f, []).append(b)
    return out


def match_frame(dets, gts, label, iou_threshold, level=None, mode="depth"):
    """Greedy matching in one frame.

    Returns ``(scores, is_tp, counted, n_care)``: per detection its score,
    whether it matched a counted ground truth and whether it counts at all
    (detections matching an ignored ground truth, or lying outside the
    difficulty band, are dropped rather than penalized).
    """
    dets = [d for d in dets if d.label == label]
    gts = [g for g in gts if g.label == label]
    care = np.array([in_difficulty(g, level, mode) for g in gts], dtype=bool)
    order = sorted(range(len(dets)), key=lambda i: (-(dets[i].score if dets[i].score is not None else 0.0), i))
    ious = iou_matrix([dets[i] for i in order], gts)
    used = np.zeros(len(gts), dtype=bool)
    scores, tp, counted = [], [], []
    for row, i in enumerate(order):
        d = dets[i]
        best, best_j = -1.0, -1
        # prefer a free counted ground truth, then a free ignored one
        for want_care in (True, False):
            for j in range(len(gts)):
                if used[j] or care[j] != want_care or ious[row, j] < iou_threshold:
                    continue
                if ious[row, j] > best:
                    best, best_j = ious[row, j], j
            if best_j >= 0:
                break
        s = d.score if d.score is not None else 0.0
        if best_j >= 0:
            used[best_j] = True
            scores.append(s)
            tp.append(bool(care[best_j]))
            counted.append(bool(care[best_j]))
        else:
            scores.append(s)
            tp.append(False)
            counted.append(mode != "depth" or in_difficulty(d, level, mode))
    return np.array(scores, dtype=np.float64), np.array(tp, dtype=bool), np.array(counted, dtype=bool), int(care.sum())


def interpolated_ap(tp_sorted, n_gt: int, points: int = RECALL_POINTS):
    """AP from a score-sorted TP flag array; returns (ap, precision, recall)."""
    tp_sorted = np.asarray(tp_sorted, dtype=bool)
    if n_gt == 0:
        return float("nan"), np.zeros(0), np.zeros(0)
    ctp = np.cumsum(tp_sorted)
    cfp = np.cumsum(~tp_sorted)
    recall = ctp / n_gt
    precision = ctp / np.maximum(ctp + cfp, 1)
    if len(precision) == 0:
        return 0.0, precision, recall
    # running max from the right gives max precision at recall >= r
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    levels = np.arange(1, points + 1) / points
    idx = np.searchsorted(recall, levels - 1e-12, side="left")
    vals = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    return float(vals.mean()), precision, recall


def average_precision(detections, ground_truth, label: str, iou_threshold: float, level=None, mode: str = "depth",
                      det_frames=None, gt_frames=None, points: int = RECALL_POINTS) -> APResult:
    """Interpolated AP over one or more frames.

    Boxes are matched only within the same frame id; without frame ids
    everything is one frame. AP is NaN when no ground truth counts.
    """
    dg = _group(detections, det_frames)
    gg = _group(ground_truth, gt_frames)
    all_s, all_tp = [], []
    n_gt = 0
    for f in sorted(set(dg) | set(gg), key=str):
        s, tp, counted, ncare = match_frame(dg.get(f, []), gg.get(f, []), label, iou_threshold, level, mode)
        all_s.append(s[counted])
        all_tp.append(tp[counted])
        n_gt += ncare
    scores = np.concatenate(all_s) if all_s else np.zeros(0)
    tps = np.concatenate(all_tp) if all_tp else np.zeros(0, dtype=bool)
    order = np.argsort(-scores, kind="stable")
    tps = tps[order]
    ap, prec, rec = interpolated_ap(tps, n_gt, points)
    return APResult(ap, n_gt, int(len(tps)), int(tps.sum()), int((~tps).sum()), prec, rec)

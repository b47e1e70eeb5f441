"""Neighborhood aggregation, top-K echo selection and frame assembly.

The functions here are reference implementations that work on explicit
histograms; the simulator uses the sparse kernels from :mod:`melidar.kernels`
and :func:`dense_echoes` replays the same draws on a materialized histogram
as an independent check.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _core_py
from .errors import ConfigError
from .model import LidarImage, MultiEchoFrame


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    """Normalized ``size x size`` Gaussian weights (size odd)."""
    if size < 1 or size % 2 == 0:
        raise ConfigError(f"kernel size must be a positive odd integer, got {size}")
    if sigma <= 0:
        raise ConfigError("kernel sigma must be positive")
    r = size // 2
    ax = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2.0 * sigma * sigma))
    return g / g.sum()


def aggregate_neighborhood(hist, kernel) -> np.ndarray:
    """Spatially weighted sum of a dense ``[H, W, N]`` histogram.

    Zero padding at the borders; bins never mix. Offsets are accumulated in
    kernel row-major order, matching the sparse kernels bit for bit.
    """
    hist = np.asarray(hist)
    kernel = np.asarray(kernel, dtype=np.float64)
    h, w = hist.shape[:2]
    r = kernel.shape[0] // 2
    out = np.zeros(hist.shape, dtype=np.float64)
    for i, dy in enumerate(range(-r, r + 1)):
        for j, dx in enumerate(range(-r, r + 1)):
            # out[y, x] += G * hist[y + dy, x + dx]
            y0, y1 = max(0, -dy), min(h, h - dy)
            x0, x1 = max(0, -dx), min(w, w - dx)
            if y0 >= y1 or x0 >= x1:
                continue
            out[y0:y1, x0:x1] += kernel[i, j] * hist[y0 + dy : y1 + dy, x0 + dx : x1 + dx].astype(np.float64)
    return out


def aggregate_sparse(hists: dict, kernel, shape) -> dict:
    """Aggregate ``{(row, col): {bin: count}}`` histograms the same way."""
    kernel = np.asarray(kernel, dtype=np.float64)
    h, w = shape
    r = kernel.shape[0] // 2
    out = {}
    for (row, col), bins in hists.items():
        for i, dy in enumerate(range(-r, r + 1)):
            for j, dx in enumerate(range(-r, r + 1)):
                q = (row - dy, col - dx)
                if not (0 <= q[0] < h and 0 <= q[1] < w):
                    continue
                tgt = out.setdefault(q, {})
                for n, c in bins.items():
                    tgt[n] = tgt.get(n, 0.0) + kernel[i, j] * c
    return out


@dataclass(frozen=True)
class EchoCandidate:
    bin: int
    strength: float
    pixel: tuple = (0, 0)


def select_topk(hist, k: int, tau: float, nms_window: int = 0, pixel=(0, 0)):
    """Strongest ``k`` bins with count >= ``tau`` after greedy NMS.

    Candidates are visited by strength (descending) with ties going to the
    smaller bin; a bin within ``nms_window`` of an accepted one is skipped.
    """
    if k < 1:
        raise ConfigError("k must be >= 1")
    if tau < 0:
        raise ConfigError("tau must be >= 0")
    hist = np.asarray(hist, dtype=np.float64)
    idx = np.nonzero(hist >= tau)[0]
    order = sorted(idx.tolist(), key=lambda n: (-hist[n], n))
    chosen = []
    for n in order:
        if len(chosen) == k:
            break
        if all(abs(n - c.bin) > nms_window for c in chosen):
            chosen.append(EchoCandidate(int(n), float(hist[n]), tuple(pixel)))
    return chosen


def backproject(bin_index, direction, bin_width: float):
    """Point at the centre of bin ``bin_index`` along unit ``direction``."""
    r = (np.asarray(bin_index, dtype=np.float64) + 0.5) * bin_width
    return r[..., None] * np.asarray(direction, dtype=np.float64)


def assemble_frame(bins, strengths, ambient, directions, bin_width: float):
    """Turn selected bins into a frame, a LiDAR image and a cloud tensor.

    Reflectance is each selected strength divided by the mean strength of
    all selected bins in the image.
    """
    bins = np.asarray(bins, dtype=np.int64)
    strengths = np.asarray(strengths, dtype=np.float64)
    valid = bins >= 0
    refl = np.zeros_like(strengths)
    if np.any(valid):
        mean = float(np.mean(strengths[valid]))
        if mean > 0:
            refl[valid] = strengths[valid] / mean
    pts = backproject(np.where(valid, bins, 0), np.asarray(directions)[:, :, None, :], bin_width)
    pts = np.where(valid[..., None], pts, 0.0)
    frame = MultiEchoFrame(
        points=pts,
        reflectance=refl,
        valid=valid,
        ambient=np.asarray(ambient, dtype=np.float64).copy(),
        bin_width=bin_width,
        bins=bins.copy(),
        directions=np.asarray(directions, dtype=np.float64).copy(),
    )
    image = frame.to_lidar_image()
    return frame, image, frame.to_cloud_tensor()


def dense_histogram(nstar, keys, sig, amb, bins: int) -> np.ndarray:
    """Materialize every per-bin Poisson draw, ``[H, W, N]`` int32.

    Only for small ``N``: this is the oracle the sparse path is checked
    against.
    """
    nstar = np.asarray(nstar, dtype=np.int64)
    h, w = nstar.shape
    out = np.zeros((h, w, bins), dtype=np.int32)
    flat_keys = np.asarray(keys, dtype=np.uint64).ravel()
    ns = nstar.ravel()
    for n in range(bins):
        is_sig = ns == n
        sub = np.where(is_sig, sig[0].ravel(), amb[0].ravel())
        e = np.where(is_sig, sig[1].ravel(), amb[1].ravel())
        parts = np.where(is_sig, sig[2].ravel(), amb[2].ravel())
        out[:, :, n] = _core_py.draw(flat_keys, np.full(flat_keys.shape, n), sub, e, parts).reshape(h, w)
    return out


def dense_echoes(nstar, keys, sig, amb, kernel, k, tau, nms_window, bins: int):
    """Reference top-K extraction on the materialized histogram."""
    hist = dense_histogram(nstar, keys, sig, amb, bins)
    agg = aggregate_neighborhood(hist, kernel)
    h, w = hist.shape[:2]
    out_b = np.full((h, w, k), -1, dtype=np.int64)
    out_s = np.zeros((h, w, k), dtype=np.float64)
    for r in range(h):
        for c in range(w):
            for i, cand in enumerate(select_topk(agg[r, c], k, tau, nms_window, (r, c))):
                out_b[r, c, i] = cand.bin
                out_s[r, c, i] = cand.strength
    return out_b, out_s

"""Signal and ambient photon rates and per-bin Poisson sampling."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import ConfigError, EmptySceneError


def normalize_field(f, valid=None) -> np.ndarray:
    """Divide by the mean over ``valid`` entries; zero outside ``valid``.

    A field whose mean is zero normalizes to the zero field.
    """
    f = np.asarray(f, dtype=np.float64)
    valid = np.ones(f.shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    out = np.zeros_like(f)
    if not np.any(valid):
        return out
    mean = float(np.mean(f[valid]))
    if mean == 0.0:
        return out
    out[valid] = f[valid] / mean
    return out


def incidence_cos(normals, directions) -> np.ndarray:
    """Lambertian factor ``max(0, -n . d)``; degenerate normals give 0."""
    n = np.asarray(normals, dtype=np.float64)
    norm = np.linalg.norm(n, axis=-1)
    ok = norm > 0
    dot = -np.sum(n * np.asarray(directions, dtype=np.float64), axis=-1)
    return np.where(ok, np.clip(dot / np.where(ok, norm, 1.0), 0.0, 1.0), 0.0)


@dataclass(frozen=True, eq=False)
class RateField:
    """Per-beam photon rates: one signal bin plus a flat ambient floor."""

    signal_rate: np.ndarray   # [H, W]
    signal_bin: np.ndarray    # [H, W] int64, -1 where no surface
    ambient_rate: np.ndarray  # [H, W], per time bin
    bins: int

    def rate(self, row: int, col: int, n: int) -> float:
        lam = float(self.ambient_rate[row, col])
        if n == self.signal_bin[row, col]:
            lam += float(self.signal_rate[row, col])
        return lam

    def draw_params(self):
        """Split rates into inversion-sized parts for the kernels.

        Returns two ``(sub_rate, exp(-sub_rate), parts)`` triples of arrays,
        for the signal bin and for every other bin.
        """
        sig_total = self.ambient_rate + self.signal_rate
        return _split(sig_total), _split(self.ambient_rate)


def _split(rate):
    rate = np.asarray(rate, dtype=np.float64)
    if not np.all(np.isfinite(rate)) or np.any(rate < 0):
        raise ConfigError("Poisson rates must be finite and non-negative")
    top = float(rate.max(initial=0.0))
    if top > rng.RATE_MAX:
        raise ConfigError(f"Poisson rate {top:.4g} exceeds the supported maximum {rng.RATE_MAX:g}")
    parts = np.maximum(1, np.ceil(rate / rng.SUB_RATE_MAX)).astype(np.int64)
    sub = rate / parts
    # math.exp keeps both kernels on the same libm result
    e = np.array([math.exp(-x) for x in sub.ravel()], dtype=np.float64).reshape(sub.shape)
    return sub, e, parts


def signal_rate(reflect, cos_inc, ranges, valid, sbr: float, bin_width: float, bins: int):
    """Signal rate and bin per beam.

    The Lambertian return ``reflect * cos / range**2`` is normalized by its
    mean over valid beams and then scaled by ``sbr``. Returns
    ``(rate, bin)`` with bin ``-1`` on invalid beams.
    """
    valid = np.asarray(valid, dtype=bool) & (np.asarray(ranges) > 0)
    if not np.any(valid):
        raise EmptySceneError("no beam hits valid geometry")
    r = np.where(valid, ranges, 1.0)
    f = np.where(valid, np.asarray(reflect, dtype=np.float64) * np.asarray(cos_inc, dtype=np.float64) / (r * r), 0.0)
    lam = sbr * normalize_field(f, valid)
    nstar = np.clip(np.floor(r / bin_width), 0, bins - 1).astype(np.int64)
    nstar = np.where(valid, nstar, -1)
    return lam, nstar


def ambient_rate(r_channel, valid=None) -> np.ndarray:
    """Per-bin ambient rate: the red channel normalized to unit mean."""
    return normalize_field(r_channel, valid)


def sample_bin(key: int, n: int, rates: RateField, row: int, col: int) -> int:
    """Photon count of bin ``n`` for the beam at ``(row, col)`` with stream ``key``."""
    if not 0 <= n < rates.bins:
        raise ConfigError(f"bin {n} outside [0, {rates.bins})")
    sub, e, parts = rng.split_rate(rates.rate(row, col, n))
    return rng.poisson_draw(key, n, sub, e, parts)


def ambient_tau_bound(lam_max: float, kernel, bins: int, p_fail: float = 1e-9) -> float:
    """Threshold an aggregated ambient-only bin exceeds with prob. < ``p_fail``.

    The aggregated ambient count at one bin is ``sum_k G_k X_k`` with
    independent ``X_k ~ Poisson(lam_k)``, ``lam_k <= lam_max``. The Chernoff
    bound ``exp(-s t + lam_max * sum_k (exp(s G_k) - 1))`` is minimized over
    ``s`` and a union bound covers all ``bins`` bins of a beam.
    """
    g = np.asarray(kernel, dtype=np.float64).ravel()
    g = g[g > 0]
    if lam_max <= 0 or g.size == 0:
        return 1e-9
    s = np.logspace(-4, 5, 6000)
    # exp(s*G) overflows for the largest s; those terms are never the minimum
    with np.errstate(over="ignore"):
        mgf = lam_max * np.sum(np.expm1(np.outer(s, g)), axis=1)
    target = math.log(p_fail) - math.log(bins)

    def log_bound(t):
        return float(np.min(-s * t + mgf))

    lo, hi = 0.0, max(1.0, lam_max)
    while log_bound(hi) > target:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if log_bound(mid) > target:
            lo = mid
        else:
            hi = mid
    return hi

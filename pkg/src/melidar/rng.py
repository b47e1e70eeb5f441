"""Counter-based keyed random streams and exact Poisson inversion.

Every pixel owns a 64-bit key derived from ``(seed, view, row, col)``. The
uniform for histogram bin ``n`` and sub-draw ``j`` is a SplitMix64 output at
stream position ``(n << 16 | j) + 1``, so any draw can be reproduced in
isolation, in any order, on any thread.

This module is the scalar reference; the compiled and numpy kernels
reimplement the same arithmetic and are tested against it.
"""
from __future__ import annotations

import math

from .errors import ConfigError

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB

#: Largest rate drawn by a single inversion search; bigger rates are split
#: into equal parts and summed (Poisson additivity).
SUB_RATE_MAX = 30.0
#: Rates above this are rejected: the summed search would be too slow.
RATE_MAX = 1.0e4
SUB_BITS = 16
_TWO_M52 = 2.0**-52


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


def pixel_key(seed: int, view: int, row: int, col: int) -> int:
    if not (0 <= view < 1 << 16 and 0 <= row < 1 << 24 and 0 <= col < 1 << 24):
        raise ConfigError("pixel index out of the keyable range")
    idx = (view << 48) | (row << 24) | col
    return mix64(mix64(seed + GOLDEN) + idx * GOLDEN)


def uniform(key: int, n: int, j: int = 0) -> float:
    """Uniform in the open interval (0, 1) for stream position (n, j)."""
    ctr = ((n << SUB_BITS) | j) + 1
    x = mix64(key + ctr * GOLDEN)
    return ((x >> 12) + 0.5) * _TWO_M52


def split_rate(rate: float):
    """``(sub_rate, exp(-sub_rate), parts)`` for a Poisson rate."""
    if not (rate >= 0.0 and math.isfinite(rate)):
        raise ConfigError(f"Poisson rate must be finite and non-negative, got {rate}")
    if rate > RATE_MAX:
        raise ConfigError(f"Poisson rate {rate:.4g} exceeds the supported maximum {RATE_MAX:g}")
    parts = max(1, math.ceil(rate / SUB_RATE_MAX))
    sub = rate / parts
    return sub, math.exp(-sub), parts


def poisson_inverse(u: float, lam: float, e: float) -> int:
    """Smallest k with CDF(k) >= u, by sequential search from 0.

    ``e`` must equal ``exp(-lam)``. Stops early once the CDF stops changing
    in floating point, which bounds the largest attainable count.
    """
    k = 0
    p = e
    cdf = p
    while u > cdf:
        k += 1
        p = p * lam / k
        nxt = cdf + p
        if nxt == cdf:
            break
        cdf = nxt
    return k


def poisson_draw(key: int, n: int, lam: float, e: float, parts: int) -> int:
    total = 0
    for j in range(parts):
        total += poisson_inverse(uniform(key, n, j), lam, e)
    return total


def max_attainable(lam: float) -> int:
    """Largest count ``poisson_inverse`` can return for rate ``lam``."""
    return poisson_inverse(1.0 - _TWO_M52 / 2, lam, math.exp(-lam))

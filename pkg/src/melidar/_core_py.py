"""Pure numpy implementation of the simulator hot loops.

Mirrors ``_core.pyx`` operation for operation (same summation order, same
Poisson search) so that both backends produce byte-identical output.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .rng import GOLDEN, MIX1, MIX2, SUB_BITS

_G = np.uint64(GOLDEN)
_M1 = np.uint64(MIX1)
_M2 = np.uint64(MIX2)
_TWO_M52 = 2.0**-52
_FAR = np.int64(-(1 << 60))


def mix64(z):
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def pixel_keys(seed: int, views, rows, cols):
    views = np.asarray(views, dtype=np.uint64)
    rows = np.asarray(rows, dtype=np.uint64)
    cols = np.asarray(cols, dtype=np.uint64)
    idx = (views << np.uint64(48)) | (rows << np.uint64(24)) | cols
    with np.errstate(over="ignore"):
        base = mix64(np.uint64((seed + GOLDEN) % (1 << 64)))
        return mix64(base + idx * _G)


def uniforms(keys, n, j):
    ctr = ((np.asarray(n, dtype=np.uint64) << np.uint64(SUB_BITS)) | np.asarray(j, dtype=np.uint64)) + np.uint64(1)
    with np.errstate(over="ignore"):
        x = mix64(np.asarray(keys, dtype=np.uint64) + ctr * _G)
    return ((x >> np.uint64(12)).astype(np.float64) + 0.5) * _TWO_M52


def poisson_inverse(u, lam, e):
    """Vectorized ``rng.poisson_inverse``."""
    u = np.asarray(u, dtype=np.float64)
    shape = u.shape
    u = u.ravel()
    lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), shape).ravel()
    p = np.array(np.broadcast_to(np.asarray(e, dtype=np.float64), shape)).ravel()
    k = np.zeros(u.shape, dtype=np.int64)
    active = np.nonzero(u > p)[0]
    ua, la, pa, ca = u[active], lam[active], p[active], p[active].copy()
    step = 0.0
    while active.size:
        step += 1.0
        pa = pa * la / step
        nxt = ca + pa
        stop = nxt == ca
        ca = np.where(stop, ca, nxt)
        k[active] += 1
        keep = ~stop & (ua > ca)
        active, ua, la, pa, ca = active[keep], ua[keep], la[keep], pa[keep], ca[keep]
    return k.reshape(shape)


def draw(keys, n, sub, e, parts):
    """Poisson counts for stream keys at bins ``n`` (1-D arrays)."""
    keys = np.asarray(keys, dtype=np.uint64)
    n = np.asarray(n, dtype=np.int64)
    parts = np.asarray(parts, dtype=np.int64)
    total = np.zeros(keys.shape, dtype=np.int64)
    if keys.size == 0:
        return total
    for j in range(int(parts.max())):
        sel = np.nonzero(parts > j)[0]
        u = uniforms(keys[sel], n[sel], j)
        total[sel] += poisson_inverse(u, sub[sel], e[sel])
    return total


def _offsets(size):
    r = size // 2
    return [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1)]


def _rows_block(r0, r1, nstar, keys, sig, amb, kernel, k, tau, nms_window):
    h, w = nstar.shape
    s = kernel.shape[0]
    offs = _offsets(s)
    weights = kernel.ravel()
    rows = np.arange(r0, r1)
    qr = np.repeat(rows, w)
    qc = np.tile(np.arange(w), r1 - r0)
    npix = qr.size
    nc = len(offs)

    # candidate bins: signal bins of the neighborhood, first occurrence wins
    cand = np.full((npix, nc), -1, dtype=np.int64)
    for c, (dy, dx) in enumerate(offs):
        pr, pc = qr + dy, qc + dx
        inb = (pr >= 0) & (pr < h) & (pc >= 0) & (pc < w)
        cand[inb, c] = nstar[pr[inb], pc[inb]]
    for c in range(1, nc):
        dup = np.any(cand[:, :c] == cand[:, c : c + 1], axis=1)
        cand[dup, c] = -1

    strength = np.zeros((npix, nc), dtype=np.float64)
    has = cand >= 0
    for kk, (dy, dx) in enumerate(offs):
        pr, pc = qr + dy, qc + dx
        inb = (pr >= 0) & (pr < h) & (pc >= 0) & (pc < w)
        sel_q, sel_c = np.nonzero(has & inb[:, None])
        if sel_q.size == 0:
            continue
        ppr, ppc = pr[sel_q], pc[sel_q]
        b = cand[sel_q, sel_c]
        is_sig = nstar[ppr, ppc] == b
        sub = np.where(is_sig, sig[0][ppr, ppc], amb[0][ppr, ppc])
        e = np.where(is_sig, sig[1][ppr, ppc], amb[1][ppr, ppc])
        parts = np.where(is_sig, sig[2][ppr, ppc], amb[2][ppr, ppc])
        cnt = draw(keys[ppr, ppc], b, sub, e, parts)
        strength[sel_q, sel_c] += weights[kk] * cnt.astype(np.float64)

    ok = has & (strength >= tau)
    skey = np.where(ok, -strength, np.inf)
    bkey = np.where(ok, cand, np.iinfo(np.int64).max)
    order = np.lexsort((bkey, skey), axis=-1)
    cs = np.take_along_axis(strength, order, axis=1)
    cb = np.take_along_axis(cand, order, axis=1)
    cv = np.take_along_axis(ok, order, axis=1)

    sel_b = np.full((npix, k), _FAR, dtype=np.int64)
    sel_s = np.zeros((npix, k), dtype=np.float64)
    count = np.zeros(npix, dtype=np.int64)
    idx = np.arange(npix)
    for i in range(nc):
        b = cb[:, i]
        clear = np.all(np.abs(sel_b - b[:, None]) > nms_window, axis=1)
        acc = cv[:, i] & (count < k) & clear
        sel_b[idx[acc], count[acc]] = b[acc]
        sel_s[idx[acc], count[acc]] = cs[acc, i]
        count += acc
    sel_b[sel_b == _FAR] = -1
    return sel_b.reshape(r1 - r0, w, k), sel_s.reshape(r1 - r0, w, k)


def sparse_echoes(nstar, keys, sig, amb, kernel, k, tau, nms_window, threads=1, block_rows=None):
    """Top-K echoes per beam without materializing the photon histogram.

    ``sig``/``amb`` are ``(sub_rate, exp(-sub_rate), parts)`` array triples.
    Returns ``(bins [H, W, K] int64 with -1 for empty, strengths [H, W, K])``.
    """
    nstar = np.ascontiguousarray(nstar, dtype=np.int64)
    h, w = nstar.shape
    kernel = np.asarray(kernel, dtype=np.float64)
    if block_rows is None:
        block_rows = max(1, 4096 // max(w, 1))
    blocks = [(r, min(h, r + block_rows)) for r in range(0, h, block_rows)]

    def run(b):
        return _rows_block(b[0], b[1], nstar, keys, sig, amb, kernel, k, float(tau), int(nms_window))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, blocks))
    else:
        parts = [run(b) for b in blocks]
    bins = np.concatenate([p[0] for p in parts], axis=0) if parts else np.full((0, w, k), -1, np.int64)
    strengths = np.concatenate([p[1] for p in parts], axis=0) if parts else np.zeros((0, w, k))
    return bins, strengths

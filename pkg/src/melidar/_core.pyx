# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled simulator hot loops.

Must stay arithmetically identical to ``_core_py.py``: same SplitMix64
stream, same Poisson search, same kernel summation order. Build with
``-ffp-contract=off`` so the compiler cannot fuse multiply-adds.
"""
import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.stdint cimport uint64_t, int64_t
from libc.stdlib cimport malloc, free

cnp.import_array()

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef uint64_t MIX1 = 0xBF58476D1CE4E5B9ULL
cdef uint64_t MIX2 = 0x94D049BB133111EBULL
cdef int SUB_BITS = 16
cdef double TWO_M52 = 2.220446049250313e-16


cdef inline uint64_t mix64(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * MIX1
    z = (z ^ (z >> 27)) * MIX2
    return z ^ (z >> 31)


cdef inline double uniform(uint64_t key, int64_t n, int64_t j) noexcept nogil:
    cdef uint64_t ctr = ((<uint64_t>n << SUB_BITS) | <uint64_t>j) + 1
    cdef uint64_t x = mix64(key + ctr * GOLDEN)
    return (<double>(x >> 12) + 0.5) * TWO_M52


cdef inline int64_t poisson_inverse(double u, double lam, double e) noexcept nogil:
    cdef int64_t k = 0
    cdef double p = e
    cdef double cdf = p
    cdef double nxt
    while u > cdf:
        k += 1
        p = p * lam / <double>k
        nxt = cdf + p
        if nxt == cdf:
            break
        cdf = nxt
    return k


cdef inline int64_t draw(uint64_t key, int64_t n, double lam, double e, int64_t parts) noexcept nogil:
    cdef int64_t total = 0
    cdef int64_t j
    for j in range(parts):
        total += poisson_inverse(uniform(key, n, j), lam, e)
    return total


def draw_one(uint64_t key, int64_t n, double lam, double e, int64_t parts):
    """Single Poisson draw; exposed for cross-backend tests."""
    return draw(key, n, lam, e, parts)


def uniform_one(uint64_t key, int64_t n, int64_t j):
    return uniform(key, n, j)


cdef void process_row(
    Py_ssize_t row,
    const int64_t[:, ::1] nstar,
    const uint64_t[:, ::1] keys,
    const double[:, ::1] sig_lam, const double[:, ::1] sig_e, const int64_t[:, ::1] sig_parts,
    const double[:, ::1] amb_lam, const double[:, ::1] amb_e, const int64_t[:, ::1] amb_parts,
    const double[::1] weights, int size,
    int kmax, double tau, int64_t nms_window,
    int64_t[:, :, ::1] out_bins, double[:, :, ::1] out_str,
) noexcept nogil:
    cdef Py_ssize_t h = nstar.shape[0]
    cdef Py_ssize_t w = nstar.shape[1]
    cdef int rad = size // 2
    cdef int nc = size * size
    cdef int64_t *cand = <int64_t *> malloc(nc * sizeof(int64_t))
    cdef double *acc = <double *> malloc(nc * sizeof(double))
    cdef Py_ssize_t col, pr, pc
    cdef int dy, dx, c, i, t, ncand, nsel, kk
    cdef int64_t b, ns, sb, diff
    cdef double s, sv
    cdef bint dup, clear
    cdef int64_t cnt

    for col in range(w):
        # candidate bins, in kernel row-major order, first occurrence wins
        ncand = 0
        for dy in range(-rad, rad + 1):
            pr = row + dy
            if pr < 0 or pr >= h:
                continue
            for dx in range(-rad, rad + 1):
                pc = col + dx
                if pc < 0 or pc >= w:
                    continue
                b = nstar[pr, pc]
                if b < 0:
                    continue
                dup = False
                for i in range(ncand):
                    if cand[i] == b:
                        dup = True
                        break
                if not dup:
                    cand[ncand] = b
                    ncand += 1

        for i in range(ncand):
            acc[i] = 0.0
        kk = 0
        for dy in range(-rad, rad + 1):
            pr = row + dy
            for dx in range(-rad, rad + 1):
                pc = col + dx
                if pr >= 0 and pr < h and pc >= 0 and pc < w:
                    ns = nstar[pr, pc]
                    for i in range(ncand):
                        if cand[i] == ns:
                            cnt = draw(keys[pr, pc], cand[i], sig_lam[pr, pc], sig_e[pr, pc], sig_parts[pr, pc])
                        else:
                            cnt = draw(keys[pr, pc], cand[i], amb_lam[pr, pc], amb_e[pr, pc], amb_parts[pr, pc])
                        acc[i] = acc[i] + weights[kk] * <double>cnt
                kk += 1

        # drop sub-threshold bins, then insertion-sort by (strength desc, bin asc)
        t = 0
        for i in range(ncand):
            if acc[i] >= tau:
                acc[t] = acc[i]
                cand[t] = cand[i]
                t += 1
        ncand = t
        for i in range(1, ncand):
            sv = acc[i]
            b = cand[i]
            t = i - 1
            while t >= 0 and (acc[t] < sv or (acc[t] == sv and cand[t] > b)):
                acc[t + 1] = acc[t]
                cand[t + 1] = cand[t]
                t -= 1
            acc[t + 1] = sv
            cand[t + 1] = b

        nsel = 0
        for i in range(ncand):
            if nsel >= kmax:
                break
            clear = True
            for t in range(nsel):
                diff = cand[i] - out_bins[row, col, t]
                if diff < 0:
                    diff = -diff
                if diff <= nms_window:
                    clear = False
                    break
            if clear:
                out_bins[row, col, nsel] = cand[i]
                out_str[row, col, nsel] = acc[i]
                nsel += 1
        for t in range(nsel, kmax):
            out_bins[row, col, t] = -1
            out_str[row, col, t] = 0.0

    free(cand)
    free(acc)


def sparse_echoes(nstar, keys, sig, amb, kernel, int k, double tau, nms_window, int threads=1, block_rows=None):
    """Top-K echoes per beam without materializing the photon histogram.

    Same contract as ``_core_py.sparse_echoes``.
    """
    cdef const int64_t[:, ::1] ns = np.ascontiguousarray(nstar, dtype=np.int64)
    cdef const uint64_t[:, ::1] ky = np.ascontiguousarray(keys, dtype=np.uint64)
    cdef const double[:, ::1] sl = np.ascontiguousarray(sig[0], dtype=np.float64)
    cdef const double[:, ::1] se = np.ascontiguousarray(sig[1], dtype=np.float64)
    cdef const int64_t[:, ::1] sp = np.ascontiguousarray(sig[2], dtype=np.int64)
    cdef const double[:, ::1] al = np.ascontiguousarray(amb[0], dtype=np.float64)
    cdef const double[:, ::1] ae = np.ascontiguousarray(amb[1], dtype=np.float64)
    cdef const int64_t[:, ::1] ap = np.ascontiguousarray(amb[2], dtype=np.int64)
    kern = np.ascontiguousarray(kernel, dtype=np.float64)
    cdef int size = kern.shape[0]
    cdef const double[::1] wts = kern.ravel()
    cdef Py_ssize_t h = ns.shape[0]
    cdef Py_ssize_t w = ns.shape[1]
    bins = np.full((h, w, k), -1, dtype=np.int64)
    strengths = np.zeros((h, w, k), dtype=np.float64)
    cdef int64_t[:, :, ::1] ob = bins
    cdef double[:, :, ::1] os_ = strengths
    cdef int64_t win = nms_window
    cdef Py_ssize_t r
    cdef int nthreads = max(1, threads)
    for r in prange(h, nogil=True, num_threads=nthreads, schedule="dynamic"):
        process_row(r, ns, ky, sl, se, sp, al, ae, ap, wts, size, k, tau, win, ob, os_)
    return bins, strengths

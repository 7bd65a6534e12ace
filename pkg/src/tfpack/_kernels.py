"""Compiled inner loops (numba).

Every distance is accumulated in float64 regardless of storage dtype. The
inner reductions allow reassociation so LLVM can vectorize them; each
distance is still produced by one fixed instruction sequence, so results do
not depend on the number of worker threads.
"""

from __future__ import annotations

import os

import numba as nb
import numpy as np

if "NUMBA_THREADING_LAYER" not in os.environ:
    # tbb is tried first by default and warns on older system builds
    nb.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

# Start the worker pool now. tfp_path calls a parallel kernel, and when it is
# loaded from the on-disk cache before any parallel function has run in this
# process, the pool is not initialized and the call crashes.
nb.get_num_threads()

_FM = {"reassoc", "contract"}


@nb.njit(cache=True, fastmath=_FM)
def _sqdist(A, i, B, j):
    s = 0.0
    for q in range(A.shape[1]):
        x = np.float64(A[i, q]) - np.float64(B[j, q])
        s += x * x
    return s


@nb.njit(cache=True, fastmath=_FM)
def _sqdist_vec(C, i, c):
    s = 0.0
    for q in range(C.shape[1]):
        x = np.float64(C[i, q]) - np.float64(c[q])
        s += x * x
    return s


@nb.njit(cache=True, parallel=True)
def _fill_row(C, c, m, out):
    for i in nb.prange(m):
        out[i] = np.sqrt(_sqdist_vec(C, i, c))


@nb.njit(cache=True)
def _passes(E, j, dj_row, path, pos, nrec, r, ring, use_ring, t):
    # True when candidate j is farther than t from each of the last nrec
    # path entries (path[pos-1], path[pos-2], ...).
    for k in range(nrec):
        p = pos - 1 - k
        if use_ring:
            d = ring[p % r, j]
        elif k == 0:
            d = dj_row
        else:
            d = np.sqrt(_sqdist(E, path[p], E, j))
        if d <= t:
            return False
    return True


@nb.njit(cache=True)
def tfp_path(E, start, t, r, use_ring):
    """Greedy nearest-neighbour path with the recent-window threshold filter.

    ``r == 0`` or ``t <= 0`` disables the filter. ``use_ring`` caches the
    distance rows of the last ``r`` path entries (memory ``r * n`` float64).
    Returns ``(path, fallback)`` where ``fallback[p]`` marks positions at
    which no candidate satisfied the filter.
    """
    n, d = E.shape
    path = np.empty(n, np.int64)
    fallback = np.zeros(n, np.bool_)
    C = E.copy()
    ids = np.arange(n)
    cur = np.empty(d, E.dtype)
    buf = np.empty(n, np.float64)
    filt = r > 0 and t > 0.0
    ring = np.empty((r if (filt and use_ring) else 0, n), np.float64)

    m = n
    cur[:] = C[start]
    C[start] = C[m - 1]
    ids[start] = ids[m - 1]
    m -= 1
    path[0] = start

    for pos in range(1, n):
        _fill_row(C, cur, m, buf)
        best = -1
        best_d = np.inf
        best_slot = -1
        fb = -1
        fb_d = np.inf
        fb_slot = -1
        if filt:
            nrec = min(r, pos)
            if use_ring:
                row = ring[(pos - 1) % r]
                for i in range(m):
                    row[ids[i]] = buf[i]
            for i in range(m):
                j = ids[i]
                dj = buf[i]
                if dj < fb_d or (dj == fb_d and j < fb):
                    fb = j
                    fb_d = dj
                    fb_slot = i
                if dj < best_d or (dj == best_d and j < best):
                    if _passes(E, j, dj, path, pos, nrec, r, ring, use_ring, t):
                        best = j
                        best_d = dj
                        best_slot = i
            if best < 0:
                best = fb
                best_slot = fb_slot
                fallback[pos] = True
        else:
            for i in range(m):
                j = ids[i]
                dj = buf[i]
                if dj < best_d or (dj == best_d and j < best):
                    best = j
                    best_d = dj
                    best_slot = i
        path[pos] = best
        cur[:] = C[best_slot]
        C[best_slot] = C[m - 1]
        ids[best_slot] = ids[m - 1]
        m -= 1
    return path, fallback


@nb.njit(cache=True, parallel=True)
def condensed_distances(E, tile):
    """All ``n(n-1)/2`` distances in condensed (row-major upper-triangle) order."""
    n = E.shape[0]
    out = np.empty(n * (n - 1) // 2, np.float64)
    nt = (n + tile - 1) // tile
    for bi in nb.prange(nt):
        i0 = bi * tile
        i1 = min(i0 + tile, n)
        for j0 in range(i0, n, tile):
            j1 = min(j0 + tile, n)
            for i in range(i0, i1):
                base = i * n - (i * (i + 1)) // 2 - i - 1
                for j in range(max(j0, i + 1), j1):
                    out[base + j] = np.sqrt(_sqdist(E, i, E, j))
    return out


@nb.njit(cache=True, parallel=True)
def pair_distances(E, I, J):
    out = np.empty(I.shape[0], np.float64)
    for k in nb.prange(I.shape[0]):
        out[k] = np.sqrt(_sqdist(E, I[k], E, J[k]))
    return out

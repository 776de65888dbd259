"""Hot inner loops over (paths x intervals) arrays.

Each kernel exists twice: ``_*_numba`` (jitted, parallel) and ``_*_numpy``
(vectorised, chunked over paths to bound temporaries). The public
dispatchers pick the backend chosen in :mod:`rnlevy._backend`.

Conventions: ``p`` is the (M, N) density matrix, ``idx`` the grid indices
of one partition level (length k+1). For interval j and path i,
``y = sqrt(p[i, idx[j+1]] / p[i, idx[j]]) - 1`` and the tilt weight is
``w = p[i, idx[j]]``; every statistic below averages ``w * f(y)`` over
paths, which is the sampling form of the left-endpoint tilted expectation.
"""

from __future__ import annotations

import numpy as np

from ._backend import HAS_NUMBA, njit, prange

__all__ = ["interval_stats", "path_rows"]


@njit(cache=True, parallel=True)
def _interval_stats_numba(p, idx, taus, eps, edges):  # pragma: no cover - jitted
    M = p.shape[0]
    k = idx.size - 1
    ntau = taus.size
    neps = eps.size
    nb = edges.size - 1
    m1 = np.zeros(k)
    m2 = np.zeros(k)
    m2_sq = np.zeros(k)
    trunc = np.zeros((ntau, k))
    tails = np.zeros((neps, k))
    hist_mass = np.zeros((k, nb))
    hist_ynum = np.zeros((k, nb))
    for j in prange(k):
        a = idx[j]
        b = idx[j + 1]
        s1 = 0.0
        s2 = 0.0
        s2q = 0.0
        tr = np.zeros(ntau)
        tl = np.zeros(neps)
        for i in range(M):
            w = p[i, a]
            y = np.sqrt(p[i, b] / w) - 1.0
            wy = w * y
            wy2 = wy * y
            s1 += wy
            s2 += wy2
            s2q += wy2 * wy2
            ay = abs(y)
            for t in range(ntau):
                if ay <= taus[t]:
                    tr[t] += wy2
            for e in range(neps):
                if ay > eps[e]:
                    tl[e] += wy2
            pos = np.searchsorted(edges, y, side="right") - 1
            if pos < 0:
                pos = 0
            elif pos >= nb:
                pos = nb - 1
            hist_mass[j, pos] += wy2
            hist_ynum[j, pos] += wy2 * y
        m1[j] = s1 / M
        m2[j] = s2 / M
        m2_sq[j] = s2q / M
        for t in range(ntau):
            trunc[t, j] = tr[t] / M
        for e in range(neps):
            tails[e, j] = tl[e] / M
    return m1, m2, m2_sq, trunc, tails, hist_mass, hist_ynum


@njit(cache=True, parallel=True)
def _path_rows_numba(p, idx, split):  # pragma: no cover - jitted
    M = p.shape[0]
    k = idx.size - 1
    row1 = np.zeros(M)
    row2 = np.zeros(M)
    row2_core = np.zeros(M)
    row_tail = np.zeros(M)
    row_y4 = np.zeros(M)
    for i in prange(M):
        r1 = 0.0
        r2 = 0.0
        rc = 0.0
        rt = 0.0
        r4 = 0.0
        for j in range(k):
            w = p[i, idx[j]]
            y = np.sqrt(p[i, idx[j + 1]] / w) - 1.0
            wy = w * y
            wy2 = wy * y
            r1 += wy
            r2 += wy2
            if abs(y) <= split:
                rc += wy2
            else:
                rt += wy2
                r4 += wy2 * y * y
        row1[i] = r1
        row2[i] = r2
        row2_core[i] = rc
        row_tail[i] = rt
        row_y4[i] = r4
    return row1, row2, row2_core, row_tail, row_y4


def _interval_stats_numpy(p, idx, taus, eps, edges):
    M = p.shape[0]
    k = idx.size - 1
    ntau = taus.size
    neps = eps.size
    nb = edges.size - 1
    m1 = np.zeros(k)
    m2 = np.zeros(k)
    m2_sq = np.zeros(k)
    trunc = np.zeros((ntau, k))
    tails = np.zeros((neps, k))
    hist_mass = np.zeros(nb)
    hist_ynum = np.zeros(nb)
    block = max(1, int(4_000_000 // max(k, 1)))
    for lo in range(0, M, block):
        hi = min(M, lo + block)
        pl = p[lo:hi, idx[:-1]]
        pr = p[lo:hi, idx[1:]]
        y = np.sqrt(pr / pl) - 1.0
        wy = pl * y
        wy2 = wy * y
        ay = np.abs(y)
        m1 += wy.sum(axis=0)
        m2 += wy2.sum(axis=0)
        m2_sq += (wy2 * wy2).sum(axis=0)
        for t in range(ntau):
            trunc[t] += np.where(ay <= taus[t], wy2, 0.0).sum(axis=0)
        for e in range(neps):
            tails[e] += np.where(ay > eps[e], wy2, 0.0).sum(axis=0)
        pos = np.clip(np.searchsorted(edges, y.ravel(), side="right") - 1, 0, nb - 1)
        hist_mass += np.bincount(pos, weights=wy2.ravel(), minlength=nb)
        hist_ynum += np.bincount(pos, weights=(wy2 * y).ravel(), minlength=nb)
    return m1 / M, m2 / M, m2_sq / M, trunc / M, tails / M, hist_mass / M, hist_ynum / M


def _path_rows_numpy(p, idx, split):
    M = p.shape[0]
    k = idx.size - 1
    row1 = np.empty(M)
    row2 = np.empty(M)
    row2_core = np.empty(M)
    row_tail = np.empty(M)
    row_y4 = np.empty(M)
    block = max(1, int(4_000_000 // max(k, 1)))
    for lo in range(0, M, block):
        hi = min(M, lo + block)
        pl = p[lo:hi, idx[:-1]]
        pr = p[lo:hi, idx[1:]]
        y = np.sqrt(pr / pl) - 1.0
        wy = pl * y
        wy2 = wy * y
        core = np.abs(y) <= split
        row1[lo:hi] = wy.sum(axis=1)
        row2[lo:hi] = wy2.sum(axis=1)
        row2_core[lo:hi] = np.where(core, wy2, 0.0).sum(axis=1)
        tail_terms = np.where(core, 0.0, wy2)
        row_tail[lo:hi] = tail_terms.sum(axis=1)
        row_y4[lo:hi] = (tail_terms * y * y).sum(axis=1)
    return row1, row2, row2_core, row_tail, row_y4


def interval_stats(p, idx, taus, eps, edges):
    """Per-interval tilted statistics plus the signed y**2-weighted histogram.

    Returns ``(m1, m2, m2_sq, trunc, tails, hist_mass, hist_ynum)`` where
    ``trunc``/``tails`` are (len(taus), k) / (len(eps), k) and the histogram
    arrays are flattened over intervals (length ``len(edges) - 1``).
    """
    p = np.ascontiguousarray(p, dtype=np.float64)
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    taus = np.ascontiguousarray(taus, dtype=np.float64)
    eps = np.ascontiguousarray(eps, dtype=np.float64)
    edges = np.ascontiguousarray(edges, dtype=np.float64)
    if HAS_NUMBA:
        m1, m2, m2_sq, trunc, tails, hm, hn = _interval_stats_numba(p, idx, taus, eps, edges)
        return m1, m2, m2_sq, trunc, tails, hm.sum(axis=0), hn.sum(axis=0)
    return _interval_stats_numpy(p, idx, taus, eps, edges)


def path_rows(p, idx, split):
    """Per-path sums of w*y, w*y^2 (total / core / tail) and tail w*y^4.

    ``core`` means ``|y| <= split``; the rows feed the path bootstrap.
    """
    p = np.ascontiguousarray(p, dtype=np.float64)
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    if HAS_NUMBA:
        return _path_rows_numba(p, idx, float(split))
    return _path_rows_numpy(p, idx, float(split))

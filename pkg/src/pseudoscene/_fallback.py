"""Pure numpy implementations of the hot kernels.

Every function here has a twin in ``_kernels.pyx`` with the same signature and
bitwise-identical results: distances are always accumulated as
``(dx*dx + dy*dy) + dz*dz`` and reductions run in ascending row order.
"""

import numpy as np

_KNN_CHUNK = 256


def _sqdist_to(pos, p):
    dx = pos[:, 0] - p[0]
    dy = pos[:, 1] - p[1]
    dz = pos[:, 2] - p[2]
    return dx * dx + dy * dy + dz * dz


def fps(pos, m, start):
    """Greedy farthest-point order of ``m`` indices beginning at ``start``.

    Ties go to the lowest index, so callers pre-sort ``pos`` to get a
    position-based tie rule.
    """
    n = pos.shape[0]
    out = np.empty(m, dtype=np.int64)
    if m == 0:
        return out
    mind = np.full(n, np.inf)
    last = int(start)
    out[0] = last
    mind[last] = -1.0
    for i in range(1, m):
        # selected entries hold -1 and stay below any squared distance
        np.minimum(mind, _sqdist_to(pos, pos[last]), out=mind)
        last = int(np.argmax(mind))
        out[i] = last
    return out


def knn(query, pts, k):
    """Indices of the ``k`` nearest ``pts`` per query row, ordered by (distance, index)."""
    m = query.shape[0]
    out = np.empty((m, k), dtype=np.int64)
    for lo in range(0, m, _KNN_CHUNK):
        q = query[lo:lo + _KNN_CHUNK]
        dx = q[:, None, 0] - pts[None, :, 0]
        dy = q[:, None, 1] - pts[None, :, 1]
        dz = q[:, None, 2] - pts[None, :, 2]
        d = dx * dx + dy * dy + dz * dz
        out[lo:lo + len(q)] = _k_smallest(d, k)
    return out


def _k_smallest(d, k):
    rows = d.shape[0]
    if k == d.shape[1]:
        return np.argsort(d, axis=1, kind="stable")
    kth = np.partition(d, k - 1, axis=1)[:, k - 1]
    mask = d <= kth[:, None]
    counts = mask.sum(axis=1)
    res = np.empty((rows, k), dtype=np.int64)
    clean = counts == k
    if clean.any():
        r, c = np.nonzero(mask[clean])
        cols = c.reshape(-1, k)
        vals = np.take_along_axis(d[clean], cols, axis=1)
        order = np.argsort(vals, axis=1, kind="stable")
        res[clean] = np.take_along_axis(cols, order, axis=1)
    for r in np.flatnonzero(~clean):
        res[r] = np.argsort(d[r], kind="stable")[:k]
    return res


def segment_max(x, seg, nseg):
    """Per-segment column max and the lowest row index attaining it."""
    order = np.argsort(seg, kind="stable")
    sseg = seg[order]
    xs = x[order]
    starts = np.flatnonzero(np.r_[True, sseg[1:] != sseg[:-1]])
    vals = np.maximum.reduceat(xs, starts, axis=0)
    big = np.iinfo(np.int64).max
    group = np.cumsum(np.r_[True, sseg[1:] != sseg[:-1]]) - 1
    cand = np.where(xs == vals[group], order[:, None], big)
    arg = np.minimum.reduceat(cand, starts, axis=0)
    out_v = np.zeros((nseg, x.shape[1]))
    out_a = np.full((nseg, x.shape[1]), -1, dtype=np.int64)
    out_v[sseg[starts]] = vals
    out_a[sseg[starts]] = arg
    return out_v, out_a


def segment_sum(x, seg, nseg):
    out = np.zeros((nseg, x.shape[1]))
    np.add.at(out, seg, x)
    return out

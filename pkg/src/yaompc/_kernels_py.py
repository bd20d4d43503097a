"""Pure numpy implementations of the hot kernels.

These are the fallback twins of the Cython kernels in ``_kernels.pyx``.  Both
implementations evaluate the same float comparisons in the same order so their
outputs are bit-identical; tests assert that on random instances.

All kernels work on row positions, not ids; ids enter only as tie-breakers.
"""

from __future__ import annotations

import numpy as np


def yao_cone_neighbors_l1(u, scores, ids):
    """Per point and cone, the position of the l1-nearest in-cone point.

    ``u`` is the (n, k) matrix of cone-boundary forms, ``scores`` the (n, k)
    matrix of rotated-frame ``x'+y'`` values.  Point ``p`` lies in cone ``c``
    of apex ``q`` iff ``u[p,c] >= u[q,c]`` and ``u[p,(c+1)%k] < u[q,(c+1)%k]``;
    among in-cone points the winner minimises ``(scores[p,c], ids[p])``.
    Returns an (n, k) int64 array of positions, -1 where the cone is empty.
    """
    u = np.asarray(u, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    ids = np.asarray(ids, dtype=np.int64)
    n, k = u.shape
    u_next = u[:, (np.arange(k) + 1) % k]
    out = np.full((n, k), -1, dtype=np.int64)
    for q in range(n):
        mask = (u >= u[q]) & (u_next < u_next[q])
        for c in range(k):
            cand = np.flatnonzero(mask[:, c])
            if len(cand) == 0:
                continue
            s = scores[cand, c]
            best = s.min()
            tied = cand[s == best]
            out[q, c] = tied[np.argmin(ids[tied])]
    return out


def yao_cone_neighbors_l2(u, xs, ys, ids):
    """Like :func:`yao_cone_neighbors_l1` but minimising squared Euclidean
    distance to the apex (the classical Yao-graph selection rule)."""
    u = np.asarray(u, dtype=np.float64)
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    ids = np.asarray(ids, dtype=np.int64)
    n, k = u.shape
    u_next = u[:, (np.arange(k) + 1) % k]
    out = np.full((n, k), -1, dtype=np.int64)
    for q in range(n):
        mask = (u >= u[q]) & (u_next < u_next[q])
        dx = xs - xs[q]
        dy = ys - ys[q]
        d2 = dx * dx + dy * dy
        for c in range(k):
            cand = np.flatnonzero(mask[:, c])
            if len(cand) == 0:
                continue
            s = d2[cand]
            best = s.min()
            tied = cand[s == best]
            out[q, c] = tied[np.argmin(ids[tied])]
    return out

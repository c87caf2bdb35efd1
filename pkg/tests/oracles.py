"""Reference implementations used only by the tests.

Each one is written from the definition, without touching the package code
path it checks: brute-force neighbors, an exhaustive core-group scan, a
normal-equation least-squares solve and a stepping box-growth simulator.
"""

from __future__ import annotations

import math

import numpy as np


def brute_knn(X, q, k):
    """Rows of the k nearest points, ordered by (distance, row)."""
    X = np.asarray(X, dtype=float)
    d2 = ((X - np.asarray(q, dtype=float)) ** 2).sum(axis=1)
    order = np.lexsort((np.arange(len(d2)), d2))[:k]
    return order.tolist(), np.sqrt(d2[order]).tolist()


def normal_equation_ols(X, Y):
    X = np.asarray(X, dtype=float)
    return np.linalg.solve(X.T @ X, X.T @ np.asarray(Y, dtype=float))


def exhaustive_core(X, Y, k):
    """(best mse, anchor) over every anchor's brute-force k-neighborhood; first anchor wins ties."""
    best = (math.inf, -1)
    for i in range(X.shape[0]):
        rows, _ = brute_knn(X, X[i], k)
        Xn, Yn = X[rows], Y[rows]
        if np.linalg.matrix_rank(Xn) < X.shape[1]:
            continue
        beta = np.linalg.lstsq(Xn, Yn, rcond=None)[0]
        m = float(np.mean((Yn - Xn @ beta) ** 2))
        if m < best[0]:
            best = (m, i)
    return best


def stepping_growbox(center, rejected, lo_bound, hi_bound, eps=1e-6):
    """Grow every free face of an axis box by ``eps`` per step from ``center``.

    A face freezes at the step where moving it once more would sweep over a
    surviving rejected point; points beyond a frozen face are discarded. Steps
    that cannot touch any point are skipped in one jump, so the result equals
    literal stepping on the eps grid. Returns (lo, hi).
    """
    c = np.asarray(center, dtype=float)
    d = c.shape[0]
    P = [np.asarray(p, dtype=float) - c for p in rejected]
    free = [j for j in range(d) if hi_bound[j] > lo_bound[j]]
    # face key: (axis, +1 or -1); position = extent reached from the center.
    faces = {(j, s): None for j in free for s in (1, -1)}
    t = 0  # step counter: every free face sits at t * eps
    alive = list(range(len(P)))

    def extent(face, step):
        frozen = faces[face]
        return frozen if frozen is not None else step * eps

    while alive and any(v is None for v in faces.values()):
        # Earliest step at which some point is swept: the box at step k covers p iff
        # every face extent >= the point's coordinate along it.
        best = None
        for i in alive:
            p = P[i]
            need = 0
            ok = True
            for (j, s), frozen in faces.items():
                coord = s * p[j]
                if frozen is not None:
                    if coord > frozen:
                        ok = False
                        break
                elif coord > 0:
                    need = max(need, math.ceil(coord / eps - 1e-12))
            if not ok:
                continue
            if best is None or need < best[0]:
                best = (need, i)
        if best is None:
            break
        t = max(t, best[0])
        p = P[best[1]]
        # The face that reaches the point last is the one that would pass it.
        hit = max((face for face in faces if faces[face] is None),
                  key=lambda face: face[1] * p[face[0]])
        faces[hit] = (t - 1) * eps
        j, s = hit
        alive = [i for i in alive if s * P[i][j] <= faces[hit] and i != best[1]]
    lo = np.array(lo_bound, dtype=float)
    hi = np.array(hi_bound, dtype=float)
    for (j, s), v in faces.items():
        if v is None:
            continue
        if s > 0:
            hi[j] = min(hi[j], c[j] + v)
        else:
            lo[j] = max(lo[j], c[j] - v)
    return lo, hi

"""Core-group search: the k-neighborhood whose local linear fit has the lowest training MSE."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .neighbors import KnnIndex
from .numerics import LinearFit, RankDeficientError, ols, ols_batch

# Anchors per batched QR call; bounds peak memory at roughly chunk * k * d floats.
_CHUNK = 256


@dataclass(frozen=True)
class CoreGroup:
    members: np.ndarray
    anchor: int
    fit: LinearFit
    center: np.ndarray

    @property
    def k(self) -> int:
        return int(self.members.shape[0])


def core_size(n: int, d: int, p: float) -> int:
    """k = max(d + 1, round(p * n)), rounding halves up."""
    if not 0.0 < p <= 1.0:
        raise ValueError(f"core fraction must be in (0, 1], got {p}")
    return min(n, max(d + 1, int(math.floor(p * n + 0.5))))


def core_from_members(train: Dataset, members, anchor: int = -1) -> CoreGroup:
    members = np.asarray(members, dtype=np.intp)
    if members.size <= train.d:
        raise ValueError(f"core group needs more than d={train.d} points, got {members.size}")
    X, Y = train.features[members], train.targets[members]
    return CoreGroup(members, anchor, ols(X, Y), X.mean(axis=0))


def neighborhood_mses(train: Dataset, k: int, index: KnnIndex | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Training MSE of the local OLS fit on every anchor's k-neighborhood.

    Returns ``(mse (n,), rows (n, k))``; rank-deficient neighborhoods get ``inf``.
    """
    if index is None:
        index = KnnIndex(train.features)
    X, Y = train.features, train.targets
    n = train.n
    rows, _ = index.query_many(X, k)
    mses = np.empty(n)
    for lo in range(0, n, _CHUNK):
        r = rows[lo:lo + _CHUNK]
        _, mses[lo:lo + _CHUNK], _ = ols_batch(X[r], Y[r])
    return mses, rows


def find_core_group(train: Dataset, k: int, index: KnnIndex | None = None) -> CoreGroup:
    if not train.d < k <= train.n:
        raise ValueError(f"core size k={k} must satisfy d={train.d} < k <= n={train.n}")
    mses, rows = neighborhood_mses(train, k, index)
    if not np.any(np.isfinite(mses)):
        raise RankDeficientError("every k-neighborhood is rank deficient")
    # argmin returns the first minimizer, i.e. the smallest anchor index on ties.
    anchor = int(np.argmin(mses))
    return core_from_members(train, rows[anchor], anchor)

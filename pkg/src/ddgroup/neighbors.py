"""Exact Euclidean k-nearest-neighbor search with a K-D tree.

The tree is built by recursive median splits on the widest dimension. Each leaf
keeps the tight bounding box of its points, and a query proceeds in two passes:

1. visit leaves in order of their box distance until at least ``k`` points are
   seen; the k-th smallest distance among them bounds the answer radius;
2. gather every leaf whose box lies within that radius and select the ``k``
   smallest ``(distance, row)`` pairs.

Leaf box distances are evaluated for all leaves at once with numpy, and nearby
queries are answered together, which in Python is much cheaper than walking
internal nodes one query at a time.
"""

from __future__ import annotations

import numpy as np

DEFAULT_LEAF_SIZE = 32


class KnnIndex:
    def __init__(self, X, leaf_size: int = DEFAULT_LEAF_SIZE):
        X = np.array(X, dtype=float, copy=True)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[0] == 0:
            raise ValueError("cannot index an empty point set")
        if not np.all(np.isfinite(X)):
            raise ValueError("non-finite coordinates")
        if leaf_size < 1:
            raise ValueError("leaf_size must be positive")
        X.setflags(write=False)
        self.data = X
        self.leaf_size = leaf_size
        self._order = np.arange(X.shape[0])
        # Internal nodes: (split_dim, split_value, left, right); leaves are ("leaf", id).
        self._leaf_ranges: list[tuple[int, int]] = []
        self.root = self._build(0, X.shape[0])
        self.leaf_lo = np.array([X[self._order[a:b]].min(axis=0) for a, b in self._leaf_ranges])
        self.leaf_hi = np.array([X[self._order[a:b]].max(axis=0) for a, b in self._leaf_ranges])
        self.leaf_start = np.array([a for a, _ in self._leaf_ranges])
        self.leaf_stop = np.array([b for _, b in self._leaf_ranges])
        self._leaf_of_pos = np.repeat(np.arange(self.n_leaves), self.leaf_stop - self.leaf_start)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def n_leaves(self) -> int:
        return len(self._leaf_ranges)

    def _build(self, start: int, stop: int):
        idx = self._order[start:stop]
        pts = self.data[idx]
        spread = pts.max(axis=0) - pts.min(axis=0)
        if stop - start <= self.leaf_size:
            self._leaf_ranges.append((start, stop))
            return ("leaf", len(self._leaf_ranges) - 1)
        dim = int(np.argmax(spread))
        mid = (stop - start) // 2
        part = np.argpartition(pts[:, dim], mid)
        self._order[start:stop] = idx[part]
        split = float(self.data[self._order[start + mid], dim])
        left = self._build(start, start + mid)
        right = self._build(start + mid, stop)
        return (dim, split, left, right)

    def leaf_rows(self, leaf: int) -> np.ndarray:
        a, b = self._leaf_ranges[leaf]
        return self._order[a:b]

    def _box_dist2(self, Q: np.ndarray) -> np.ndarray:
        """Squared distance from each query (rows of Q) to each leaf box."""
        gap = (np.maximum(self.leaf_lo[None] - Q[:, None], 0.0)
               + np.maximum(Q[:, None] - self.leaf_hi[None], 0.0))
        return np.einsum("qld,qld->ql", gap, gap)

    def _rows_of(self, leaf_mask: np.ndarray) -> np.ndarray:
        return self._order[leaf_mask[self._leaf_of_pos]]

    def _dist2(self, Q: np.ndarray, rows: np.ndarray) -> np.ndarray:
        diff = self.data[rows][None] - Q[:, None]
        return np.einsum("qnd,qnd->qn", diff, diff)

    def _query_group(self, Q: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        box2 = self._box_dist2(Q)
        # Leaves ordered by their distance to the farthest query of the group: once
        # they hold k points, every query has k candidates and hence a radius bound.
        visit = np.argsort(box2.max(axis=0), kind="stable")
        counts = (self.leaf_stop - self.leaf_start)[visit]
        m = int(np.searchsorted(np.cumsum(counts), k)) + 1
        first = np.zeros(self.n_leaves, dtype=bool)
        first[visit[:m]] = True
        r2 = np.partition(self._dist2(Q, self._rows_of(first)), k - 1, axis=1)[:, k - 1]
        near = np.any(box2 <= r2[:, None], axis=0)
        rows = np.sort(self._rows_of(near))
        d2 = self._dist2(Q, rows)
        # Candidate columns follow ascending row order, so ordering by (d2, column)
        # breaks distance ties by row index.
        take = np.argpartition(d2, k - 1, axis=1)[:, :k] if d2.shape[1] > k \
            else np.tile(np.arange(k), (Q.shape[0], 1))
        kth = np.take_along_axis(d2, take, axis=1).max(axis=1)
        for i in np.flatnonzero(np.count_nonzero(d2 <= kth[:, None], axis=1) > k):
            take[i] = np.argsort(d2[i], kind="stable")[:k]
        dk = np.take_along_axis(d2, take, axis=1)
        take = np.take_along_axis(take, np.lexsort((take, dk), axis=1), axis=1)
        return rows[take], np.sqrt(np.take_along_axis(d2, take, axis=1))

    def query(self, q, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Rows and distances of the ``k`` nearest points to ``q``, nearest first.

        Ties in distance are broken by the smaller row index. A query equal to an
        indexed point returns that point at distance 0.
        """
        rows, dist = self.query_many(np.asarray(q, dtype=float).reshape(1, -1), k)
        return rows[0], dist[0]

    def query_many(self, Q, k: int, group_size: int = 32) -> tuple[np.ndarray, np.ndarray]:
        Q = np.asarray(Q, dtype=float)
        if Q.ndim == 1:
            Q = Q[:, None] if self.data.shape[1] == 1 else Q[None]
        if Q.shape[1] != self.data.shape[1]:
            raise ValueError(f"queries have dimension {Q.shape[1]}, index has {self.data.shape[1]}")
        if not 1 <= k <= self.n:
            raise ValueError(f"k={k} outside [1, {self.n}]")
        rows = np.empty((Q.shape[0], k), dtype=np.intp)
        dist = np.empty((Q.shape[0], k))
        # Batch spatially coherent queries: group by the nearest leaf box.
        home = np.concatenate([np.argmin(self._box_dist2(Q[i:i + 512]), axis=1)
                               for i in range(0, Q.shape[0], 512)]) if Q.shape[0] > 1 else np.zeros(1, int)
        order = np.argsort(home, kind="stable")
        for i in range(0, order.size, group_size):
            sel = order[i:i + group_size]
            rows[sel], dist[sel] = self._query_group(Q[sel], k)
        return rows, dist


def build(X, leaf_size: int = DEFAULT_LEAF_SIZE) -> KnnIndex:
    return KnnIndex(X, leaf_size)


def knn(index: KnnIndex, query, k: int) -> list[tuple[int, float]]:
    rows, dist = index.query(query, k)
    return [(int(r), float(s)) for r, s in zip(rows, dist)]


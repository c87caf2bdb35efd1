"""k-means clustering baseline: the cluster with the lowest OLS MSE, reported as its bounding box."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .numerics import LinearFit, RankDeficientError, abs_residual_quantile, mse, ols
from .pipeline import (GroupReport, SelectionError, _closest_to_quantile_rule, _inside_mse,
                       quantile_select, select_valmse)
from .region import Box, Region, volume


@dataclass(frozen=True)
class KMeansResult:
    assignments: np.ndarray
    centroids: np.ndarray
    wcss_history: tuple[float, ...]
    iterations: int

    @property
    def wcss(self) -> float:
        return self.wcss_history[-1]


def _sq_dist(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    return np.einsum("nd,nd->n", X, X)[:, None] - 2 * X @ C.T + np.einsum("kd,kd->k", C, C)[None]


def _plusplus(X: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    d2 = np.einsum("nd,nd->n", X - centers[0], X - centers[0])
    for _ in range(1, K):
        total = d2.sum()
        # All remaining points coincide with a center: pick any unused point.
        i = int(rng.choice(n, p=d2 / total)) if total > 0 else int(rng.integers(n))
        centers.append(X[i])
        diff = X - X[i]
        d2 = np.minimum(d2, np.einsum("nd,nd->n", diff, diff))
    return np.array(centers)


def kmeans(X, K: int, seed: int = 0, max_iter: int = 300) -> KMeansResult:
    """Lloyd iterations from a k-means++ start until assignments stop changing."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("k-means needs a nonempty 2-D point set")
    n = X.shape[0]
    if not 1 <= K <= n:
        raise ValueError(f"K={K} outside [1, {n}]")
    rng = np.random.default_rng(seed)
    C = _plusplus(X, K, rng)
    assign = np.argmin(np.maximum(_sq_dist(X, C), 0.0), axis=1)
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        for j in range(K):
            members = assign == j
            if members.any():
                C[j] = X[members].mean(axis=0)
            else:
                # Re-seed an empty cluster at the point farthest from its centroid.
                far = int(np.argmax(np.einsum("nd,nd->n", X - C[assign], X - C[assign])))
                C[j] = X[far]
                assign[far] = j
        D = np.maximum(_sq_dist(X, C), 0.0)
        new = np.argmin(D, axis=1)
        # Exact squared differences: the expanded form above loses digits near zero.
        diff = X - C[new]
        history.append(float(np.einsum("nd,nd->", diff, diff)))
        if np.array_equal(new, assign):
            break
        assign = new
    return KMeansResult(assign, C, tuple(history), it)


@dataclass(frozen=True)
class ClusterSubgroup:
    assignments: np.ndarray
    selected: int
    box: Box
    fit: LinearFit
    cluster_mses: tuple[float, ...]


def best_cluster(train: Dataset, K: int, seed: int = 0) -> ClusterSubgroup:
    """Cluster the non-constant features and keep the cluster with the smallest OLS training MSE."""
    bbox = Box.bounding(train.features)
    axes = list(bbox.nondegenerate_axes()) or list(range(train.d))
    km = kmeans(train.features[:, axes], K, seed)
    mses = []
    fits = {}
    for j in range(K):
        rows = np.flatnonzero(km.assignments == j)
        if rows.size <= train.d:
            mses.append(np.inf)
            continue
        try:
            fits[j] = ols(train.features[rows], train.targets[rows])
            mses.append(fits[j].train_mse)
        except RankDeficientError:
            mses.append(np.inf)
    if not fits:
        raise SelectionError(f"K={K}: every cluster is too small or rank deficient for OLS")
    j = int(np.argmin(mses))
    members = train.features[km.assignments == j]
    return ClusterSubgroup(km.assignments, j, Box.bounding(members), fits[j], tuple(mses))


def cluster_subgroup(train: Dataset, val: Dataset, K_grid=None, p_min: float = 0.05,
                     seed: int = 0, refit: bool = True, selection: str = "valmse",
                     quantile_q: float = 0.9, quantile_factor: float = 3.0
                     ) -> tuple[GroupReport, list[GroupReport]]:
    """Scan K (default 2..2d) and select across K with the same rule the sweep would use.

    For ``selection="quantile"`` the cluster's own OLS fit plays the role of the
    core model: its sigma estimate and the val residual quantile inside the box.
    """
    if K_grid is None:
        K_grid = range(2, 2 * train.d + 1)
    K_grid = [K for K in K_grid if K <= train.n]
    if not K_grid:
        raise ValueError("empty cluster-count grid")
    bbox = Box.bounding(train.features)
    log = []
    for K in K_grid:
        try:
            cs = best_cluster(train, K, seed)
        except SelectionError:
            continue
        box = cs.box
        in_train = np.atleast_1d(box.contains(train.features))
        in_val = np.atleast_1d(box.contains(val.features))
        beta = cs.fit.beta
        if refit:
            try:
                beta = ols(train.features[in_train], train.targets[in_train]).beta
            except RankDeficientError:
                pass
        val_mse = _inside_mse(beta, val.features, val.targets, in_val)
        q_hat = (abs_residual_quantile(cs.fit.beta, val.features[in_val], val.targets[in_val], quantile_q)
                 if in_val.any() else np.inf)
        center = (box.lo + box.hi) / 2
        log.append(GroupReport(
            region=Region(center, (), box), box=box, beta=beta, core_beta=cs.fit.beta,
            sigma_hat=cs.fit.sigma_hat, q_hat=q_hat, rejected_count=0, core_anchor=-1,
            core_size=int(np.sum(cs.assignments == cs.selected)),
            volume=volume(box, bbox.nondegenerate_axes()),
            train_frac=float(in_train.mean()), val_frac=float(in_val.mean()),
            train_mse=mse(beta, train.features[in_train], train.targets[in_train]),
            val_mse=val_mse, hyperparameters={"method": "kmeans", "K": K, "cluster": cs.selected},
            seed=seed, flags=[] if val_mse is not None else ["degenerate"],
            feature_names=train.feature_names))
    if not log:
        raise SelectionError("every cluster count produced only rank-deficient clusters")
    if selection == "quantile":
        try:
            i, fallback = quantile_select(log, quantile_factor), False
        except SelectionError:
            i, fallback = _closest_to_quantile_rule(log), True
    elif selection == "valmse":
        i, fallback = select_valmse(log, p_min)
    else:
        raise ValueError(f"unknown selection rule {selection!r}")
    best = log[i]
    if fallback:
        best.flags.append("fallback")
    return best, log

"""Least squares and residual statistics.

All solves go through a QR factorization; the normal equations are never
formed. ``ols_batch`` fits many small problems of identical shape at once
and is what the core-group scan uses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Relative threshold on |diag(R)| below which a design is treated as rank deficient.
RANK_RTOL = 1e-10


class RankDeficientError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class LinearFit:
    beta: np.ndarray
    train_mse: float
    sigma_hat: float | None
    dof: int

    def predict(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.beta


def _check(X, Y):
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float).reshape(-1)
    if X.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise ValueError(f"shape mismatch: X {X.shape}, Y {Y.shape}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise ValueError("non-finite values in least-squares input")
    return X, Y


def _full_rank(R: np.ndarray) -> np.ndarray:
    diag = np.abs(np.diagonal(R, axis1=-2, axis2=-1))
    scale = np.max(diag, axis=-1, keepdims=True)
    return np.all(diag > RANK_RTOL * np.maximum(scale, np.finfo(float).tiny), axis=-1)


def ols(X, Y, min_norm: bool = False) -> LinearFit:
    """Least-squares fit of ``Y ~ X`` (no implicit intercept).

    In the default strict mode a rank-deficient or underdetermined design raises
    ``RankDeficientError``. With ``min_norm=True`` the minimum-norm minimizer is
    returned instead.
    """
    X, Y = _check(X, Y)
    k, d = X.shape
    if k == 0:
        raise ValueError("empty design matrix")
    if min_norm:
        beta = np.linalg.lstsq(X, Y, rcond=None)[0]
    else:
        if k < d:
            raise RankDeficientError(f"{k} rows for {d} coefficients")
        Q, R = np.linalg.qr(X)
        if not _full_rank(R):
            raise RankDeficientError("design matrix is rank deficient")
        beta = np.linalg.solve(R, Q.T @ Y)
    resid = Y - X @ beta
    rss = float(resid @ resid)
    dof = k - d
    return LinearFit(beta, rss / k, math.sqrt(rss / dof) if dof >= 1 else None, dof)


def ols_batch(X: np.ndarray, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Fit ``m`` independent problems ``X[i] (k x d), Y[i] (k,)``.

    Returns ``(beta (m, d), mse (m,), ok (m,))``; rows with ``ok == False`` are
    rank deficient and carry ``nan`` coefficients and ``inf`` MSE.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    m, k, d = X.shape
    if k < d:
        return np.full((m, d), np.nan), np.full(m, np.inf), np.zeros(m, dtype=bool)
    Q, R = np.linalg.qr(X)
    ok = _full_rank(R)
    qty = np.einsum("mkd,mk->md", Q, Y)
    beta = np.full((m, d), np.nan)
    if ok.any():
        beta[ok] = np.linalg.solve(R[ok], qty[ok][..., None])[..., 0]
    resid = Y - np.einsum("mkd,md->mk", X, np.where(ok[:, None], beta, 0.0))
    mse = np.where(ok, np.einsum("mk,mk->m", resid, resid) / k, np.inf)
    return beta, mse, ok


def residuals(beta, X, Y) -> np.ndarray:
    X, Y = _check(X, Y)
    return Y - X @ np.asarray(beta, dtype=float)


def mse(beta, X, Y) -> float:
    if isinstance(beta, LinearFit):
        beta = beta.beta
    r = residuals(beta, X, Y)
    if r.size == 0:
        raise ValueError("mse of empty data")
    return float(r @ r) / r.size


def sigma_hat(beta, X, Y) -> float:
    """Square root of the unbiased residual variance, RSS / (k - d)."""
    if isinstance(beta, LinearFit):
        beta = beta.beta
    r = residuals(beta, X, Y)
    k, d = np.shape(X)
    if k <= d:
        raise ValueError(f"sigma estimate needs k > d (k={k}, d={d})")
    return math.sqrt(float(r @ r) / (k - d))


def quantile_lower(values, q: float) -> float:
    """Smallest v in ``values`` with empirical CDF(v) >= q (no interpolation)."""
    v = np.sort(np.asarray(values, dtype=float).reshape(-1))
    if v.size == 0:
        raise ValueError("quantile of empty data")
    if not 0.0 < q <= 1.0:
        raise ValueError(f"q must be in (0, 1], got {q}")
    # Index of the first order statistic whose rank/k reaches q; the small slack absorbs
    # rounding in q*k (e.g. 0.9*10).
    i = math.ceil(q * v.size - 1e-9) - 1
    return float(v[max(i, 0)])


def abs_residual_quantile(beta, X, Y, q: float = 0.9) -> float:
    if isinstance(beta, LinearFit):
        beta = beta.beta
    return quantile_lower(np.abs(residuals(beta, X, Y)), q)

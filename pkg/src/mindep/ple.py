"""Pseudo-likelihood estimation over all pairwise transpositions.

The pseudo-likelihood is the likelihood of a logistic regression without
intercept whose responses are all one and whose covariates are the pair
statistics ``u = h_*(pi) - h_*(pi o tau)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np
from scipy import optimize
from scipy.special import expit

from .core import CanonicalStatistic, Dataset
from .exceptions import NonExistenceError

MEMORY_BUDGET = 20_000_000  # floats held at once for materialized pair statistics
SEPARATION_THRESHOLD = 1e3


def _data_matrix(data) -> np.ndarray:
    if isinstance(data, Dataset):
        return data.values
    return np.atleast_2d(np.asarray(data, dtype=float))


class PairStatistics:
    """Pair statistics ``u_st^i`` for every variable ``i`` and rows ``s < t``.

    Materialized when ``K * d * n(n-1)/2`` fits the memory budget, otherwise
    regenerated block by block in a fixed order (so sums are reproducible).
    """

    def __init__(self, data, h: CanonicalStatistic, budget: int = MEMORY_BUDGET,
                 block_rows: int = 4096):
        self.X = _data_matrix(data)
        self.h = h
        self.n, self.d = self.X.shape
        self.K = h.dim
        self.s, self.t = np.triu_indices(self.n, 1)
        self.block_rows = block_rows
        self.hX = h.evaluate(self.X)
        self.size = self.d * self.s.size
        self._U = None
        if self.size * self.K <= budget:
            self._U = np.concatenate([u for _, _, _, u in self._generate()]) if self.size else \
                np.zeros((0, self.K))

    def _generate(self):
        X, hX = self.X, self.hX
        for i in range(self.d):
            for lo in range(0, self.s.size, self.block_rows):
                s = self.s[lo:lo + self.block_rows]
                t = self.t[lo:lo + self.block_rows]
                xs = X[s].copy()
                xt = X[t].copy()
                xs[:, i] = X[t, i]
                xt[:, i] = X[s, i]
                u = hX[s] + hX[t] - self.h.evaluate(xs) - self.h.evaluate(xt)
                yield i, s, t, u

    def blocks(self) -> Iterator[tuple]:
        """Yield ``(i, s, t, u)`` blocks covering every pair once."""
        if self._U is None:
            yield from self._generate()
            return
        lo = 0
        for i in range(self.d):
            for b in range(0, self.s.size, self.block_rows):
                s = self.s[b:b + self.block_rows]
                t = self.t[b:b + self.block_rows]
                yield i, s, t, self._U[lo:lo + s.size]
                lo += s.size

    @property
    def materialized(self) -> bool:
        return self._U is not None

    def matrix(self) -> np.ndarray:
        if self._U is not None:
            return self._U
        return np.concatenate([u for *_, u in self.blocks()])


def pair_statistic(X, h: CanonicalStatistic, i: int, s: int, t: int) -> np.ndarray:
    """``u_st^i`` recomputed from the two raw rows."""
    X = _data_matrix(X)
    xs, xt = X[s].copy(), X[t].copy()
    xs[i], xt[i] = X[t, i], X[s, i]
    return h(X[s]) + h(X[t]) - h(xs) - h(xt)


def _objective(theta, pairs: PairStatistics, want_hessian=True):
    K = pairs.K
    value = 0.0
    grad = np.zeros(K)
    hess = np.zeros((K, K))
    for *_, u in pairs.blocks():
        z = u @ theta
        value -= np.logaddexp(0.0, -z).sum()
        w = expit(-z)
        grad += u.T @ w
        if want_hessian:
            hess -= (u * (w * expit(z))[:, None]).T @ u
    return value, grad, hess


def pseudo_loglik(theta, data, h: CanonicalStatistic, pairs: Optional[PairStatistics] = None):
    """Log pseudo-likelihood with its gradient and Hessian.

    Returns
    -------
    value : float
    gradient : ndarray (K,)
    hessian : ndarray (K, K), negative semi-definite
    """
    pairs = pairs or PairStatistics(data, h)
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    return _objective(theta, pairs)


def separation_certificate(U: np.ndarray) -> Optional[np.ndarray]:
    """Direction ``v`` with ``U v >= 0`` and ``sum(U v) = 1`` if one exists.

    Such a direction means 0 is not interior to the convex hull of the rows of
    ``U`` (complete or quasi-complete separation). Rank-deficient ``U`` yields
    a null-space direction instead.
    """
    U = np.atleast_2d(U)
    K = U.shape[1]
    if U.shape[0] == 0:
        return np.eye(K)[0]
    if np.linalg.matrix_rank(U) < K:
        _, _, vt = np.linalg.svd(U)
        return vt[-1]
    res = optimize.linprog(np.zeros(K), A_ub=-U, b_ub=np.zeros(U.shape[0]),
                           A_eq=U.sum(axis=0)[None, :], b_eq=[1.0],
                           bounds=[(None, None)] * K, method="highs")
    if res.status == 0:
        return res.x
    return None


@dataclass
class PLEResult:
    """Outcome of :func:`fit_ple`."""

    theta: np.ndarray
    exists: bool
    iterations: int
    gradient_norm: float
    certificate: Optional[np.ndarray] = None
    covariance: Optional[np.ndarray] = None

    @property
    def std_errors(self):
        if self.covariance is None:
            return None
        return np.sqrt(np.diag(self.covariance))


def fit_ple(data, h: CanonicalStatistic, tol: float = 1e-8, max_iter: int = 100,
            pairs: Optional[PairStatistics] = None, sandwich: bool = True) -> PLEResult:
    """Newton ascent with step halving on the concave pseudo-likelihood.

    Iteration stops once the Newton decrement ``g' (-H)^-1 g / 2`` is at most
    ``tol``.

    Non-existence (separation) is decided by a linear-programming certificate
    on the pair statistics and, independently, by divergence of the iterates.
    """
    pairs = pairs or PairStatistics(data, h)
    K = pairs.K
    cert = separation_certificate(pairs.matrix())
    theta = np.zeros(K)
    value, grad, hess = _objective(theta, pairs)
    it = 0
    diverged = False
    converged = False
    for it in range(1, max_iter + 1):
        try:
            step = np.linalg.solve(-hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(-hess, grad, rcond=None)[0]
        # Newton decrement: predicted gain of the full step
        slope = grad @ step
        if slope / 2 <= tol or np.max(np.abs(grad)) == 0:
            # one last full step costs little and squares the error
            theta = theta + step
            value, grad, hess = _objective(theta, pairs)
            converged = True
            break
        lam = 1.0
        while True:
            cand = theta + lam * step
            v_new, g_new, h_new = _objective(cand, pairs)
            if v_new >= value + 1e-4 * lam * slope or lam < 1e-12:
                break
            lam *= 0.5
        theta, value, grad, hess = cand, v_new, g_new, h_new
        if np.max(np.abs(theta)) > SEPARATION_THRESHOLD:
            diverged = True
            break
    gnorm = float(np.max(np.abs(grad)))
    exists = cert is None and not diverged and converged
    cov = None
    if exists and sandwich and pairs.n >= 2:
        cov = sandwich_variance(theta, data, h, pairs=pairs)
    return PLEResult(theta=theta, exists=exists, iterations=it, gradient_norm=gnorm,
                     certificate=cert, covariance=cov)


def sandwich_variance(theta_hat, data, h: CanonicalStatistic,
                      pairs: Optional[PairStatistics] = None) -> np.ndarray:
    """``(4/n) J^-1 I J^-1`` with ``I`` from per-row averaged scores and
    ``J`` from the pairwise weights ``1 / (1 + exp(theta.u))^2``."""
    pairs = pairs or PairStatistics(data, h)
    theta = np.atleast_1d(np.asarray(theta_hat, dtype=float))
    n, K = pairs.n, pairs.K
    row_score = np.zeros((n, K))
    J = np.zeros((K, K))
    for _, s, t, u in pairs.blocks():
        w = expit(-(u @ theta))  # 1 / (1 + e^{theta.u})
        su = u * w[:, None]
        np.add.at(row_score, s, su)
        np.add.at(row_score, t, su)
        J += (u * (w * w)[:, None]).T @ u
    J *= 2.0 / (n * (n - 1))
    row_score /= n
    I = row_score.T @ row_score / n
    try:
        Jinv = np.linalg.inv(J)
    except np.linalg.LinAlgError:
        raise NonExistenceError("pseudo-likelihood curvature matrix is singular") from None
    V = 4.0 / n * Jinv @ I @ Jinv
    return (V + V.T) / 2

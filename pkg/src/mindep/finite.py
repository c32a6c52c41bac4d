"""Model construction on finite product spaces.

The adjusting functions and potential are found by iterative proportional
fitting carried out in log space: each sweep shifts ``a_i`` by the log ratio
of the current marginal to its target. For two coordinates this is the
Sinkhorn-Knopp algorithm for entropic optimal transport.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .core import Poisson
from .exceptions import ConvergenceError, ModelSpecError

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
DEFAULT_SWEEPS = 100_000


@dataclass
class FiniteModel:
    """Tabulated model ``p = exp(H - sum a_i - psi) prod r_i`` on a grid.

    ``a`` is reported in the gauge ``E_{r_i}[a_i] = 0`` for every ``i``, which
    also satisfies the zero-mean constraint once the marginals match.
    """

    supports: list
    H: np.ndarray
    marginals: list
    a: list
    psi: float
    p: np.ndarray
    residual: float
    sweeps: int
    tol: float
    dropped: list = field(default_factory=list)

    @property
    def d(self) -> int:
        return self.H.ndim

    @property
    def shape(self) -> tuple:
        return self.H.shape

    def additive(self) -> np.ndarray:
        """``sum_i a_i(x_i)`` as a full table."""
        return _additive(self.a, self.shape)

    def log_density_ratio(self) -> np.ndarray:
        """``log p - sum log r_i = H - sum a_i - psi``."""
        return self.H - self.additive() - self.psi

    def marginal(self, i: int) -> np.ndarray:
        axes = tuple(j for j in range(self.d) if j != i)
        return self.p.sum(axis=axes)

    def marginal_errors(self) -> np.ndarray:
        return np.array([np.abs(self.marginal(i) - self.marginals[i]).sum() for i in range(self.d)])

    def zero_mean_residual(self) -> float:
        return float(np.sum(self.p * self.additive()))

    def expectation(self, table) -> float:
        return float(np.sum(self.p * table))

    def to_text(self) -> str:
        """Plain tab-separated table: header lines, then one row per cell."""
        out = io.StringIO()
        out.write(f"# psi\t{self.psi!r}\n")
        out.write(f"# tol\t{self.tol!r}\n# residual\t{self.residual!r}\n# sweeps\t{self.sweeps}\n")
        for i, s in enumerate(self.supports):
            out.write(f"# support{i + 1}\t" + "\t".join(repr(float(v)) for v in s) + "\n")
            out.write(f"# r{i + 1}\t" + "\t".join(repr(float(v)) for v in self.marginals[i]) + "\n")
        cols = [f"i{j + 1}" for j in range(self.d)] + ["H", "p"] + [f"a{j + 1}" for j in range(self.d)]
        out.write("\t".join(cols) + "\n")
        for idx in np.ndindex(*self.shape):
            vals = [str(k) for k in idx] + [repr(float(self.H[idx])), repr(float(self.p[idx]))]
            vals += [repr(float(self.a[j][k])) for j, k in enumerate(idx)]
            out.write("\t".join(vals) + "\n")
        return out.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "FiniteModel":
        header, rows = {}, []
        for line in text.splitlines():
            if line.startswith("# "):
                key, *vals = line[2:].split("\t")
                header[key] = vals
            elif line and not line.startswith("i1"):
                rows.append(line.split("\t"))
        d = sum(1 for k in header if k.startswith("support"))
        supports = [np.array([float(v) for v in header[f"support{i + 1}"]]) for i in range(d)]
        marginals = [np.array([float(v) for v in header[f"r{i + 1}"]]) for i in range(d)]
        shape = tuple(len(s) for s in supports)
        H = np.empty(shape)
        p = np.empty(shape)
        a = [np.empty(m) for m in shape]
        for r in rows:
            idx = tuple(int(v) for v in r[:d])
            H[idx] = float(r[d])
            p[idx] = float(r[d + 1])
            for j in range(d):
                a[j][idx[j]] = float(r[d + 2 + j])
        return cls(supports, H, marginals, a, float(header["psi"][0]), p,
                   float(header["residual"][0]), int(header["sweeps"][0]), float(header["tol"][0]))


def _additive(a: Sequence[np.ndarray], shape) -> np.ndarray:
    d = len(shape)
    out = np.zeros(shape)
    for i, ai in enumerate(a):
        view = [1] * d
        view[i] = shape[i]
        out = out + np.asarray(ai).reshape(view)
    return out


def _check_marginals(marginals, shape):
    out = []
    for i, r in enumerate(marginals):
        r = np.asarray(r, dtype=float)
        if r.ndim != 1 or r.size != shape[i]:
            raise ModelSpecError(f"marginal {i} has {r.size} cells, table axis has {shape[i]}")
        if np.any(r < 0) or not np.all(np.isfinite(r)):
            raise ModelSpecError(f"marginal {i} has negative or non-finite entries")
        if abs(r.sum() - 1.0) > 1e-9:
            raise ModelSpecError(f"marginal {i} sums to {r.sum():.12g}, not 1")
        out.append(r)
    return out


def solve_adjusting(H, marginals, tol: float = DEFAULT_TOL, max_sweeps: int = DEFAULT_SWEEPS,
                    init: Optional[Sequence[np.ndarray]] = None, supports=None) -> FiniteModel:
    """Adjusting functions and potential for the table ``H`` by IPF.

    Parameters
    ----------
    H : ndarray, shape (m_1, ..., m_d)
        Tabulated ``theta . h(x)``.
    marginals : sequence of 1-d arrays
        Target marginal probabilities; zero cells are dropped from the grid.
    tol : float
        Stop once the largest l1 marginal error is at most ``tol``.
    init : sequence of arrays, optional
        Starting adjusting functions (default zero).

    Raises
    ------
    ConvergenceError
        ``max_sweeps`` exhausted; carries the last residual.
    """
    H = np.asarray(H, dtype=float)
    if not np.all(np.isfinite(H)):
        raise ModelSpecError("H must be finite")
    d = H.ndim
    r = _check_marginals(marginals, H.shape)
    supports = [np.arange(m, dtype=float) for m in H.shape] if supports is None else \
        [np.asarray(s, dtype=float) for s in supports]
    dropped = []
    keep = []
    for i in range(d):
        k = np.flatnonzero(r[i] > 0)
        if k.size < r[i].size:
            dropped.append((i, np.flatnonzero(r[i] == 0).tolist()))
        keep.append(k)
    if dropped:
        H = H[np.ix_(*keep)]
        r = [r[i][keep[i]] for i in range(d)]
        supports = [supports[i][keep[i]] for i in range(d)]
        if init is not None:
            init = [np.asarray(init[i])[keep[i]] for i in range(d)]
    shape = H.shape
    log_r = [np.log(ri) for ri in r]
    base = H + _additive(log_r, shape)
    a = [np.zeros(m) for m in shape] if init is None else [np.array(v, dtype=float) for v in init]
    other = [tuple(j for j in range(d) if j != i) for i in range(d)]
    residual = np.inf
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        for i in range(d):
            lm = logsumexp(base - _additive(a, shape), axis=other[i]) if d > 1 else \
                base - a[0]
            a[i] = a[i] + (lm - log_r[i])
        logp = base - _additive(a, shape)
        residual = max(np.abs(np.exp(logsumexp(logp, axis=other[i]) if d > 1 else logp) - r[i]).sum()
                       for i in range(d))
        if residual <= tol:
            break
    else:
        raise ConvergenceError(f"IPF did not reach tol={tol} in {max_sweeps} sweeps "
                               f"(l1 marginal error {residual:.3e})", residual)
    # gauge: centre each a_i under r_i and move the constants into psi
    centre = [float(ri @ ai) for ri, ai in zip(r, a)]
    a = [ai - c for ai, c in zip(a, centre)]
    logp = base - _additive(a, shape)
    psi = float(logsumexp(logp))
    p = np.exp(logp - psi)
    return FiniteModel(supports=supports, H=H, marginals=r, a=a, psi=psi, p=p,
                       residual=float(residual), sweeps=sweeps, tol=tol, dropped=dropped)


def backfit_projection(f, p, tol: float = 1e-12, max_iter: int = 100_000) -> np.ndarray:
    """L2(p) projection of ``f`` onto additive functions by back-fitting.

    Each pass replaces ``b_i`` by ``E_p[f - sum_{j != i} b_j | x_i]``. The
    returned table is ``sum_i b_i(x_i)``.
    """
    f = np.asarray(f, dtype=float)
    p = np.asarray(p, dtype=float)
    if f.shape != p.shape:
        raise ModelSpecError("f and p tables differ in shape")
    if np.any(p <= 0):
        raise ModelSpecError("p must be strictly positive on its grid")
    d = f.ndim
    shape = f.shape
    other = [tuple(j for j in range(d) if j != i) for i in range(d)]
    pm = [p.sum(axis=other[i]) for i in range(d)]
    b = [np.zeros(m) for m in shape]
    scale = max(float(np.sqrt(np.sum(p * f * f))), 1.0)
    for _ in range(max_iter):
        for i in range(d):
            rest = f - _additive(b, shape) + _additive([b[i] if j == i else np.zeros(shape[j])
                                                         for j in range(d)], shape)
            b[i] = (p * rest).sum(axis=other[i]) / pm[i]
        R = p * (f - _additive(b, shape))
        stationarity = max(np.max(np.abs(R.sum(axis=other[i]))) for i in range(d))
        if stationarity <= tol * scale:
            return _additive(b, shape)
    raise ConvergenceError("back-fitting did not converge", float(stationarity))


def _table_H(theta, h_tables):
    h_tables = np.asarray(h_tables, dtype=float)
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    return np.tensordot(theta, h_tables, axes=1), h_tables


def potential_derivatives(theta, h_tables, marginals, tol: float = 1e-12,
                          max_sweeps: int = DEFAULT_SWEEPS):
    """``psi``, its gradient ``E[h]`` and the Fisher matrix
    ``Cov[(I - P)h]`` with ``P`` the back-fitting projection.

    ``h_tables`` has shape ``(K, m_1, ..., m_d)``.
    """
    H, h_tables = _table_H(theta, h_tables)
    model = solve_adjusting(H, marginals, tol=tol, max_sweeps=max_sweeps)
    if model.dropped:
        keep = [np.setdiff1d(np.arange(s), dict(model.dropped).get(i, []))
                for i, s in enumerate(h_tables.shape[1:])]
        h_tables = np.stack([t[np.ix_(*keep)] for t in h_tables])
    p = model.p
    grad = np.array([np.sum(p * t) for t in h_tables])
    resid = [t - backfit_projection(t, p) for t in h_tables]
    resid = [e - np.sum(p * e) for e in resid]
    K = len(resid)
    fisher = np.empty((K, K))
    for j in range(K):
        for k in range(j, K):
            fisher[j, k] = fisher[k, j] = np.sum(p * resid[j] * resid[k])
    return model.psi, grad, fisher


def kl_divergence(p, q) -> float:
    """``sum p log(p / q)`` with ``0 log 0 = 0``."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ModelSpecError("tables differ in shape")
    pos = p > 0
    if np.any(q[pos] <= 0):
        raise ModelSpecError("support mismatch: q vanishes where p is positive")
    return float(np.sum(p[pos] * (np.log(p[pos]) - np.log(q[pos]))))


def pythagorean_residual(p, q, s) -> float:
    """``D(p, s) - D(p, q) - D(q, s)``; zero when ``q`` is the projection
    of ``s`` onto the tables sharing the marginals of ``p``."""
    return kl_divergence(p, s) - kl_divergence(p, q) - kl_divergence(q, s)


def correlation(model: FiniteModel) -> float:
    """Pearson correlation of the first two coordinates under ``model.p``."""
    if model.d != 2:
        raise ModelSpecError("correlation needs a two-dimensional table")
    x1, x2 = model.supports
    r1, r2 = model.marginals
    m1, m2 = r1 @ x1, r2 @ x2
    v1, v2 = r1 @ (x1 - m1) ** 2, r2 @ (x2 - m2) ** 2
    cov = (x1 - m1) @ model.p @ (x2 - m2)
    return float(cov / np.sqrt(v1 * v2))


def expectation_range(h_table, marginals, theta_probe: float = 10.0, supports=None,
                      tol: float = DEFAULT_TOL, max_sweeps: int = DEFAULT_SWEEPS):
    """Approximate range of the correlation reachable by ``h``.

    The model with ``H = -|t| h`` and ``H = +|t| h`` is solved and the
    Pearson correlation of the two coordinates is returned for each, as
    ``(lower, upper)``. Large ``|t|`` approaches the optimal-transport
    couplings.
    """
    t = abs(float(theta_probe))
    h_table = np.asarray(h_table, dtype=float)
    lo = solve_adjusting(-t * h_table, marginals, tol, max_sweeps, supports=supports)
    hi = solve_adjusting(t * h_table, marginals, tol, max_sweeps, supports=supports)
    return correlation(lo), correlation(hi)


def truncated_poisson(rate: float, size: Optional[int] = None):
    """Poisson grid ``{0..size-1}`` with renormalized probabilities."""
    return Poisson(rate).grid(size)


def poisson_correlation_bounds(nu1: float, nu2: float, truncation: int = 21,
                               theta_probe: float = 10.0, tol: float = DEFAULT_TOL,
                               max_sweeps: int = DEFAULT_SWEEPS):
    """Correlation range of the Poisson marginal model with ``h = x1 x2``."""
    x1, r1 = truncated_poisson(nu1, truncation)
    x2, r2 = truncated_poisson(nu2, truncation)
    return expectation_range(np.outer(x1, x2), [r1, r2], theta_probe, [x1, x2], tol, max_sweeps)

"""Conditional maximum likelihood for the dependence parameter.

Given the marginal order statistics, the rank permutations follow an
exponential family with sufficient statistic ``h_*``. Two backends are
provided: exact enumeration of relative arrangements for tiny ``n`` and
Monte Carlo Fisher scoring on exchange-algorithm samples, reweighted by
importance sampling between refreshes.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize, stats
from scipy.special import logsumexp

from .core import CanonicalStatistic, Dataset
from .exceptions import (ConvergenceError, DegenerateChainError, EnumerationBudgetError,
                         NonExistenceError)
from .exchange import ChainConfig, batch_means_cov, effective_sample_size, run_chain
from .ple import PairStatistics, fit_ple, separation_certificate
from .rank import OBSERVATIONAL, RankDecomposition, decompose, h_star

log = logging.getLogger(__name__)

EXACT = "exact"
MONTE_CARLO = "mc"
MAP = "map"
ENUMERATION_BUDGET = 5040
EIGEN_FLOOR = 1e-10


@dataclass
class FitReport:
    """Estimate, covariance and diagnostics of a conditional-likelihood fit."""

    theta_hat: np.ndarray
    covariance: np.ndarray
    loglik_conditional: Optional[float]
    iterations: int
    converged: bool
    method: str
    n: int
    names: tuple = ()
    loglik_se: Optional[float] = None
    seed: Optional[int] = None
    chain_config: Optional[ChainConfig] = None
    tol: Optional[float] = None
    mc_se: Optional[np.ndarray] = None
    ess: Optional[float] = None
    h_obs: Optional[np.ndarray] = None
    restarts: int = 0
    init: Optional[np.ndarray] = None
    extra: dict = field(default_factory=dict)

    @property
    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    @property
    def K(self) -> int:
        return self.theta_hat.size

    def to_dict(self) -> dict:
        def arr(a):
            return None if a is None else np.asarray(a, dtype=float).tolist()

        return {
            "method": self.method,
            "names": list(self.names),
            "theta_hat": arr(self.theta_hat),
            "std_errors": arr(self.std_errors),
            "covariance": arr(self.covariance),
            "loglik_conditional": self.loglik_conditional,
            "loglik_se": self.loglik_se,
            "iterations": self.iterations,
            "converged": self.converged,
            "n": self.n,
            "tol": self.tol,
            "seed": self.seed,
            "chain_config": None if self.chain_config is None else self.chain_config.to_dict(),
            "mc_se": arr(self.mc_se),
            "ess": self.ess,
            "restarts": self.restarts,
            "h_obs": arr(self.h_obs),
        }


# --------------------------------------------------------------------------
# exact enumeration
# --------------------------------------------------------------------------

def _flatten(S: np.ndarray) -> np.ndarray:
    """Make components of ``h_*`` samples constant when their spread is rounding.

    Summation order (or incremental updates in the sampler) perturbs a
    statistic that is additive on the rows in its last bits; left alone
    that noise looks like a tiny but invertible Fisher matrix.
    """
    flat = np.ptp(S, axis=0) <= 1e-9 * (1.0 + np.max(np.abs(S), axis=0))
    if np.any(flat):
        S = S.copy()
        S[:, flat] = S[0, flat]
    return S


def _moments(S, w):
    """Weighted mean and covariance; constant components get exact zeros."""
    mu = w @ S
    const = np.ptp(S, axis=0) == 0
    mu[const] = S[0, const]
    D = S - mu
    G = (D * w[:, None]).T @ D
    return mu, (G + G.T) / 2


class Enumeration:
    """All relative arrangements of a decomposition and their ``h_*``.

    The first coordinate is held fixed, so there are ``(n!)^(d-1)``
    arrangements.
    """

    def __init__(self, dec: RankDecomposition, h: CanonicalStatistic,
                 budget: int = ENUMERATION_BUDGET):
        n, d = dec.n, dec.d
        count = math.factorial(n) ** (d - 1)
        if count > budget:
            raise EnumerationBudgetError(
                f"{count} arrangements for n={n}, d={d} exceed the budget {budget}")
        perms = np.array(list(itertools.permutations(range(n))), dtype=np.int64)
        M = np.asarray(dec.M)
        cols = [np.broadcast_to(M[0], (1, n))]
        for i in range(1, d):
            cols.append(M[i][perms])
        # cartesian product over the free coordinates
        grids = np.meshgrid(*[np.arange(len(c)) for c in cols[1:]], indexing="ij") if d > 1 else []
        idx = [g.ravel() for g in grids]
        m = idx[0].size if idx else 1
        values = np.empty((m, n, d))
        values[:, :, 0] = M[0][None, :]
        for i in range(1, d):
            values[:, :, i] = cols[i][idx[i - 1]]
        self.arrangements = [tuple(int(j) for j in row) for row in np.stack(idx, 1)] if idx else [()]
        self.perms = perms
        self.H = _flatten(h.evaluate(values.reshape(-1, d)).reshape(m, n, h.dim).sum(axis=1))
        self.h_obs = h_star(dec, h)
        self.count = m

    def log_normalizer(self, theta) -> float:
        return float(logsumexp(self.H @ np.asarray(theta, dtype=float)))

    def probabilities(self, theta) -> np.ndarray:
        z = self.H @ np.asarray(theta, dtype=float)
        return np.exp(z - logsumexp(z))

    def moments(self, theta):
        return _moments(self.H, self.probabilities(theta))

    def loglik(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        return float(theta @ self.h_obs) - self.log_normalizer(theta)

    def separation(self, target=None) -> Optional[np.ndarray]:
        """Certificate that ``target`` (default ``h_obs``) is not interior to
        the convex hull of all ``h_*`` values."""
        target = self.h_obs if target is None else target
        return separation_certificate(target[None, :] - self.H)


def conditional_loglik_exact(theta, dec: RankDecomposition, h: CanonicalStatistic,
                             budget: int = ENUMERATION_BUDGET) -> float:
    """Exact ``log f(pi | M; theta)`` over relative arrangements."""
    return Enumeration(dec, h, budget).loglik(np.atleast_1d(theta))


# --------------------------------------------------------------------------
# Monte Carlo moments
# --------------------------------------------------------------------------

@dataclass
class MomentEstimate:
    mu: np.ndarray
    G: np.ndarray
    mc_se: np.ndarray
    ess: np.ndarray
    samples: np.ndarray = field(repr=False, default=None)

    @property
    def degenerate(self) -> bool:
        return not np.any(np.diag(self.G) > 0)


def conditional_moments_mc(theta, dec: RankDecomposition, h: CanonicalStatistic,
                           cfg: ChainConfig) -> MomentEstimate:
    """Sample mean, covariance and batch-means standard error of ``h_*``
    under ``f(pi | M; theta)``.

    A chain with no variation gives a zero covariance and ``degenerate``
    set; callers must not invert it.
    """
    samples = _flatten(run_chain(dec, theta, h, cfg).samples)
    mu = samples.mean(axis=0)
    const = np.ptp(samples, axis=0) == 0
    mu[const] = samples[0, const]
    D = samples - mu
    G = D.T @ D / samples.shape[0]
    mc_se = np.sqrt(np.clip(np.diag(batch_means_cov(samples)), 0, None))
    return MomentEstimate(mu, (G + G.T) / 2, mc_se, effective_sample_size(samples), samples)


def _inverse(G: np.ndarray) -> np.ndarray:
    """Symmetric inverse with eigenvalues floored at ``1e-10 * trace / K``."""
    G = (G + G.T) / 2
    K = G.shape[0]
    tr = np.trace(G)
    if not tr > 0:
        raise DegenerateChainError("sufficient statistic has no variation; Fisher matrix is zero")
    vals, vecs = np.linalg.eigh(G)
    vals = np.maximum(vals, EIGEN_FLOOR * tr / K)
    return (vecs / vals) @ vecs.T


def _in_hull(points: np.ndarray, p: np.ndarray) -> bool:
    """Whether ``p`` is a convex combination of the rows of ``points``."""
    m = points.shape[0]
    A = np.vstack([points.T, np.ones((1, m))])
    b = np.append(p, 1.0)
    res = optimize.linprog(np.zeros(m), A_eq=A, b_eq=b, bounds=[(0, None)] * m, method="highs")
    return res.status == 0


def _stepping_fraction(S: np.ndarray, mu: np.ndarray, target: np.ndarray, grid: int = 10) -> float:
    """Largest ``g`` in ``(0, 1]`` with ``mu + 1.05 g (target - mu)`` inside the
    convex hull of the sampled statistics (the MCMC-MLE stepping rule)."""
    pts = np.unique(S, axis=0)
    if _in_hull(pts, mu + 1.05 * (target - mu)):
        return 1.0
    lo, hi = 0.0, 1.0
    for _ in range(grid):
        g = (lo + hi) / 2
        if _in_hull(pts, mu + 1.05 * g * (target - mu)):
            lo = g
        else:
            hi = g
    return lo


def _weighted_moments(S, logw):
    w = np.exp(logw - logsumexp(logw))
    mu, G = _moments(S, w)
    return mu, G, 1.0 / np.sum(w * w)


# --------------------------------------------------------------------------
# fitting
# --------------------------------------------------------------------------

def _as_dataset(data) -> Dataset:
    return data if isinstance(data, Dataset) else Dataset.from_array(data)


def _restart_bound(theta_ple):
    return 50.0 * (1.0 + np.abs(theta_ple))


def _newton_exact(enum: Enumeration, target, theta0, tol, max_iter, weight=1.0):
    """Maximize ``weight * (theta.target - Psi(theta))`` exactly."""
    theta = np.array(theta0, dtype=float)

    def obj(th):
        return float(th @ target) - enum.log_normalizer(th)

    value = obj(theta)
    # moment residuals this small are rounding noise in the enumeration sums
    floor = 256 * np.finfo(float).eps * max(1.0, float(np.max(np.abs(enum.H))))

    def done(mu, step):
        return np.max(np.abs(step)) <= tol or np.max(np.abs(target - mu)) <= floor

    for it in range(1, max_iter + 1):
        mu, G = enum.moments(theta)
        step = _inverse(G) @ (target - mu)
        if done(mu, step):
            return theta, it, True
        lam = 1.0
        slope = (target - mu) @ step
        while lam > 1e-12:
            cand = theta + lam * step
            v = obj(cand)
            # allow for rounding once gains fall below double precision
            if v >= value + 1e-4 * lam * slope - 1e-13 * (1.0 + abs(value)):
                break
            lam *= 0.5
        theta, value = cand, v
    mu, G = enum.moments(theta)
    step = _inverse(G) @ (target - mu)
    return theta, max_iter, bool(done(mu, step))


class _Scorer:
    """Monte Carlo Fisher scoring with importance-sampling reuse.

    Fresh chains are drawn at the current estimate when the importance
    weights degenerate (ESS below a tenth of the sample); the chain length is
    doubled when the chain's own effective sample size is below target.
    """

    def __init__(self, dec, h, cfg: ChainConfig, target, tol, max_iter, ess_target,
                 max_doublings, restart_at, restart_from, seed):
        self.dec, self.h, self.cfg = dec, h, cfg
        self.target = target
        self.tol, self.max_iter = tol, max_iter
        self.ess_target = ess_target
        self.max_doublings = max_doublings
        self.restart_at = restart_at
        self.restart_from = restart_from
        self.seeds = np.random.default_rng(seed)
        self.chains = 0

    def _draw(self, theta, cfg):
        self.chains += 1
        run_cfg = ChainConfig(cfg.L, cfg.burn_in, cfg.thin, cfg.resync_period,
                              int(self.seeds.integers(2 ** 63)))
        return _flatten(run_chain(self.dec, theta, self.h, run_cfg).samples)

    def _surrogate(self, S, ref, theta, target):
        """Importance-sampling estimate of ``l(theta) - l(ref)``."""
        z = S @ (theta - ref)
        return float((theta - ref) @ target - (logsumexp(z) - math.log(z.size)))

    def run(self, theta0):
        theta = np.array(theta0, dtype=float)
        cfg = self.cfg
        doublings = 0
        restarts = 0
        S = self._draw(theta, cfg)
        ref = theta.copy()
        it = 0
        converged = False
        while it < self.max_iter:
            it += 1
            m = S.shape[0]
            mu, G, ess_w = _weighted_moments(S, S @ (theta - ref))
            if ess_w < m / 10:
                S, ref = self._draw(theta, cfg), theta.copy()
                mu, G, ess_w = _weighted_moments(S, np.zeros(S.shape[0]))
                m = S.shape[0]
            if not np.trace(G) > 0 and np.any(theta != 0):
                # the chain froze at a low-entropy theta; theta = 0 always mixes
                restarts += 1
                if restarts > 3:
                    raise ConvergenceError(f"chain froze after {restarts - 1} restarts", math.inf)
                log.info("chain frozen at %s; restarting from zero", theta)
                theta = np.zeros_like(theta)
                S, ref = self._draw(theta, cfg), theta.copy()
                continue
            step = _inverse(G) @ (self.target - mu)
            gamma = 1.0
            if np.max(np.abs(step)) > self.tol:
                gamma = _stepping_fraction(S, mu, self.target)
            target = mu + gamma * (self.target - mu)
            if gamma < 1.0:
                step = _inverse(G) @ (target - mu)
            log.debug("scoring it=%d theta=%s step=%s gamma=%.3g weight_ess=%.1f/%d",
                      it, theta, step, gamma, ess_w, m)
            if gamma == 0.0:
                # the sample cannot see past its own mean: lengthen the chain
                if doublings < self.max_doublings:
                    cfg = cfg.with_length(2 * cfg.L)
                    doublings += 1
                S, ref = self._draw(theta, cfg), theta.copy()
                continue
            if gamma == 1.0 and np.max(np.abs(step)) <= self.tol:
                theta = theta + step
                # converged on the current sample; check the sample itself
                chain_ess = float(np.min(effective_sample_size(S)))
                _, _, ess_w = _weighted_moments(S, S @ (theta - ref))
                if chain_ess < self.ess_target and doublings < self.max_doublings:
                    cfg = cfg.with_length(2 * cfg.L)
                    doublings += 1
                elif ess_w >= m / 2:
                    converged = True
                    break
                S, ref = self._draw(theta, cfg), theta.copy()
                continue
            # trust region: halve until the sample supports the move
            f0 = self._surrogate(S, ref, theta, target)
            lam = 1.0
            while lam >= 2.0 ** -20:
                cand = theta + lam * step
                _, _, ess_c = _weighted_moments(S, S @ (cand - ref))
                if ess_c >= m / 10 and self._surrogate(S, ref, cand, target) >= f0:
                    break
                lam *= 0.5
            else:
                # no move is supported: the sample is too poor, lengthen the chain
                if doublings < self.max_doublings:
                    cfg = cfg.with_length(2 * cfg.L)
                    doublings += 1
                S, ref = self._draw(theta, cfg), theta.copy()
                continue
            if np.any(np.abs(cand) > self.restart_at):
                restarts += 1
                if restarts > 3:
                    raise ConvergenceError(
                        f"scoring diverged after {restarts - 1} restarts", float(np.max(np.abs(step))))
                log.info("restarting scoring from %s with L=%d", self.restart_from, 2 * cfg.L)
                cfg = cfg.with_length(2 * cfg.L)
                theta = np.array(self.restart_from, dtype=float)
                S, ref = self._draw(theta, cfg), theta.copy()
                continue
            theta = cand
        mu, G, _ = _weighted_moments(S, S @ (theta - ref))
        Ginv = _inverse(G)
        final_step = Ginv @ (self.target - mu)
        if not converged and np.max(np.abs(final_step)) <= self.tol and \
                float(np.min(effective_sample_size(S))) >= self.ess_target:
            converged = True
        # self-normalized importance sampling: the error of the weighted mean is
        # the mean of m w_i (S_i - mu), whose covariance comes from batch means
        lw = S @ (theta - ref)
        w = np.exp(lw - logsumexp(lw))
        Z = S.shape[0] * w[:, None] * (S - mu)
        mean_cov = batch_means_cov(Z)
        mc_cov = Ginv @ mean_cov @ Ginv
        return dict(theta=theta, G=G, Ginv=Ginv, iterations=it, converged=converged,
                    mc_se=np.sqrt(np.clip(np.diag(mc_cov), 0, None)),
                    ess=float(np.min(effective_sample_size(S))), cfg=cfg, restarts=restarts,
                    samples=S)


def _existence_check(data, h, dec, exact_enum, ple=None):
    """Run PLE; return its result or raise when CLE cannot exist."""
    ple = ple or fit_ple(data, h, sandwich=False)
    if ple.exists:
        return ple
    if exact_enum is not None:
        cert = exact_enum.separation()
        if cert is not None:
            raise NonExistenceError(
                "observed h_* is on the boundary of the convex hull of h_* values", cert)
        return ple
    raise NonExistenceError(
        "pseudo-likelihood separation: a direction v with v.u >= 0 for every pair statistic u "
        "exists, so the conditional likelihood estimate cannot be certified", ple.certificate)


def fit_cle(data, h: CanonicalStatistic, *, init="ple", theta0=None, tol: float = 1e-2,
            max_iter: int = 200, cfg: Optional[ChainConfig] = None, method: str = "auto",
            order_policy: str = OBSERVATIONAL, seed: int = 0, ess_target: float = 200.0,
            max_doublings: int = 8, compute_loglik: bool = False,
            budget: int = ENUMERATION_BUDGET, ple=None) -> FitReport:
    """Conditional maximum likelihood estimate of ``theta``.

    Parameters
    ----------
    data : Dataset or array (n, d)
    h : CanonicalStatistic
    init : {"ple", "zero", "custom"}
        Starting value; "custom" uses ``theta0``.
    tol : float
        Bound on the sup-norm of the scoring step at convergence.
    cfg : ChainConfig, optional
        Initial chain configuration (default ``L = 150 n``).
    method : {"auto", "exact", "mc"}
        "auto" enumerates when ``(n!)^(d-1) <= budget``.
    compute_loglik : bool
        For the Monte Carlo backend, estimate the conditional log-likelihood
        by thermodynamic integration.
    ple : PLEResult, optional
        A pseudo-likelihood fit of the same data to reuse.

    Raises
    ------
    NonExistenceError
        The estimate does not exist (or, for Monte Carlo, cannot be
        certified by the pseudo-likelihood check).
    ConvergenceError
        Scoring kept diverging after restarts.
    """
    data = _as_dataset(data)
    if data.n < 2:
        raise NonExistenceError("conditional likelihood needs n >= 2")
    rng = np.random.default_rng(seed)
    dec = decompose(data, order_policy, rng)
    enum = None
    try:
        # the enumeration also settles existence for the Monte Carlo backend
        enum = Enumeration(dec, h, budget)
    except EnumerationBudgetError:
        if method == EXACT:
            raise
    ple = _existence_check(data, h, dec, enum, ple)
    theta_ple = ple.theta if ple.exists else np.zeros(h.dim)
    if init == "ple":
        start = theta_ple
    elif init == "zero":
        start = np.zeros(h.dim)
    else:
        start = np.atleast_1d(np.asarray(theta0, dtype=float))
    names = h.names

    if enum is not None and method != MONTE_CARLO:
        exact_tol = min(tol, 1e-10)
        theta, it, conv = _newton_exact(enum, enum.h_obs, start, exact_tol, max(max_iter, 100))
        _, G = enum.moments(theta)
        return FitReport(theta_hat=theta, covariance=_inverse(G), loglik_conditional=enum.loglik(theta),
                         iterations=it, converged=conv, method=EXACT, n=data.n, names=names,
                         seed=seed, tol=exact_tol, h_obs=enum.h_obs, init=start,
                         extra={"theta_ple": theta_ple.tolist(), "arrangements": enum.count})

    cfg = cfg or ChainConfig.default(data.n, data.d, seed=seed)
    h_obs = h_star(dec, h)
    # without a PLE there is no scale to call divergence against; the MC path is
    # only reached then when the enumeration has shown the estimate exists
    bound = _restart_bound(theta_ple) if ple.exists else np.full(h.dim, np.inf)
    scorer = _Scorer(dec, h, cfg, h_obs, tol, max_iter, ess_target, max_doublings,
                     bound, theta_ple, int(rng.integers(2 ** 63)))
    out = scorer.run(start)
    loglik = loglik_se = None
    if compute_loglik:
        loglik, loglik_se = conditional_loglik_mc(out["theta"], dec, h, out["cfg"],
                                                  seed=int(rng.integers(2 ** 63)))
    return FitReport(theta_hat=out["theta"], covariance=out["Ginv"], loglik_conditional=loglik,
                     loglik_se=loglik_se, iterations=out["iterations"], converged=out["converged"],
                     method=MONTE_CARLO, n=data.n, names=names, seed=seed,
                     chain_config=out["cfg"], tol=tol, mc_se=out["mc_se"], ess=out["ess"],
                     h_obs=h_obs, restarts=out["restarts"], init=start,
                     extra={"theta_ple": theta_ple.tolist(), "chains": scorer.chains})


def conditional_loglik_mc(theta, dec: RankDecomposition, h: CanonicalStatistic,
                          cfg: ChainConfig, seed: int = 0, nodes: int = 8):
    """Monte Carlo ``log f(pi | M; theta)`` over relative arrangements.

    ``Psi(theta) - Psi(0)`` is integrated along the segment from 0 to
    ``theta`` with Gauss-Legendre nodes, each node's mean ``theta . mu``
    coming from its own chain. Returns ``(value, standard_error)``.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    x, w = np.polynomial.legendre.leggauss(nodes)
    x = (x + 1) / 2
    w = w / 2
    rng = np.random.default_rng(seed)
    integral = 0.0
    var = 0.0
    for xi, wi in zip(x, w):
        run_cfg = ChainConfig(cfg.L, cfg.burn_in, cfg.thin, cfg.resync_period,
                              int(rng.integers(2 ** 63)))
        S = run_chain(dec, xi * theta, h, run_cfg).samples
        proj = S @ theta
        integral += wi * proj.mean()
        var += wi ** 2 * float(batch_means_cov(proj[:, None])[0, 0])
    log_count = (dec.d - 1) * math.lgamma(dec.n + 1)
    h_obs = h_star(dec, h)
    return float(theta @ h_obs - integral - log_count), math.sqrt(var)


def default_prior_mean(data, h: CanonicalStatistic, n_samples: int = 200, seed: int = 0) -> np.ndarray:
    """Mean of ``h_*`` over uniformly random rank permutations."""
    data = _as_dataset(data)
    rng = np.random.default_rng(seed)
    dec = decompose(data, OBSERVATIONAL)
    total = np.zeros(h.dim)
    for _ in range(n_samples):
        pi = np.stack([np.arange(data.n)] + [rng.permutation(data.n) for _ in range(data.d - 1)])
        total += h_star(dec, h, pi)
    return total / n_samples


def map_estimate(data, h: CanonicalStatistic, mu0, lambda0: Optional[float] = None, *,
                 tol: float = 1e-2, max_iter: int = 200, cfg: Optional[ChainConfig] = None,
                 method: str = "auto", seed: int = 0, ess_target: float = 200.0,
                 max_doublings: int = 8, budget: int = ENUMERATION_BUDGET) -> FitReport:
    """Posterior mode under the conjugate prior ``exp(l0 mu0.theta - l0 Psi)``.

    The scoring target is ``(h_* + l0 mu0) / (1 + l0)``; ``lambda0``
    defaults to ``1/n``.
    """
    data = _as_dataset(data)
    lam = 1.0 / data.n if lambda0 is None else float(lambda0)
    rng = np.random.default_rng(seed)
    dec = decompose(data, OBSERVATIONAL, rng)
    h_obs = h_star(dec, h)
    mu0 = np.atleast_1d(np.asarray(mu0, dtype=float))
    target = (h_obs + lam * mu0) / (1.0 + lam)
    enum = None
    if method in ("auto", EXACT):
        try:
            enum = Enumeration(dec, h, budget)
        except EnumerationBudgetError:
            if method == EXACT:
                raise
    if enum is not None:
        if enum.separation(target) is not None:
            raise NonExistenceError("prior mean does not put the target inside the hull")
        theta, it, conv = _newton_exact(enum, target, np.zeros(h.dim), min(tol, 1e-10),
                                        max(max_iter, 200))
        _, G = enum.moments(theta)
        return FitReport(theta_hat=theta, covariance=_inverse(G) / (1 + lam),
                         loglik_conditional=enum.loglik(theta), iterations=it, converged=conv,
                         method=MAP, n=data.n, names=h.names, seed=seed, tol=min(tol, 1e-10),
                         h_obs=h_obs, extra={"lambda0": lam, "mu0": mu0.tolist(),
                                             "backend": EXACT})
    ple = fit_ple(data, h, sandwich=False)
    start = ple.theta if ple.exists else np.zeros(h.dim)
    cfg = cfg or ChainConfig.default(data.n, data.d, seed=seed)
    scorer = _Scorer(dec, h, cfg, target, tol, max_iter, ess_target, max_doublings,
                     _restart_bound(start), np.zeros(h.dim), int(rng.integers(2 ** 63)))
    out = scorer.run(start)
    return FitReport(theta_hat=out["theta"], covariance=out["Ginv"] / (1 + lam),
                     loglik_conditional=None, iterations=out["iterations"],
                     converged=out["converged"], method=MAP, n=data.n, names=h.names, seed=seed,
                     chain_config=out["cfg"], tol=tol, mc_se=out["mc_se"], ess=out["ess"],
                     h_obs=h_obs, restarts=out["restarts"],
                     extra={"lambda0": lam, "mu0": mu0.tolist(), "backend": MONTE_CARLO})


# --------------------------------------------------------------------------
# tests and model selection
# --------------------------------------------------------------------------

def wald_test(report: FitReport, constraint=None):
    """Wald statistic for ``C theta = 0``.

    ``constraint`` is a list of component indices, a matrix ``C`` (rows are
    constraints), or None for all components. Returns
    ``(statistic, dof, p_value)``.
    """
    K = report.K
    if constraint is None:
        C = np.eye(K)
    else:
        arr = np.asarray(constraint)
        if arr.ndim == 1 and np.issubdtype(arr.dtype, np.integer):
            C = np.eye(K)[arr]
        else:
            C = np.atleast_2d(arr.astype(float))
    ct = C @ report.theta_hat
    V = C @ report.covariance @ C.T
    dof = int(np.linalg.matrix_rank(C))
    if np.linalg.matrix_rank(V) < C.shape[0]:
        raise np.linalg.LinAlgError("restricted covariance is singular")
    stat = float(ct @ np.linalg.solve(V, ct))
    return stat, dof, float(stats.chi2.sf(stat, dof))


def aic(report: FitReport) -> float:
    """``-2 loglik + 2K``."""
    if report.loglik_conditional is None:
        raise ValueError("report carries no conditional log-likelihood")
    return -2.0 * report.loglik_conditional + 2.0 * report.K


def backward_stepwise(data, h: CanonicalStatistic, fit=None, **fit_kwargs):
    """Backward elimination with the Wald approximation of AIC.

    Dropping component ``j`` changes AIC by about ``2 - (theta_j / se_j)^2``;
    the component with the smallest squared Wald statistic is removed while
    that change is negative. Returns ``(kept_indices, last_report)``.
    """
    from .core import CanonicalStatistic as _CS

    fit = fit or fit_cle
    keep = list(range(h.dim))
    while True:
        sub = _subset_statistic(h, keep, _CS)
        report = fit(data, sub, **fit_kwargs)
        z2 = (report.theta_hat / report.std_errors) ** 2
        j = int(np.argmin(z2))
        if z2[j] >= 2.0 or len(keep) == 1:
            return keep, report
        keep.pop(j)


def _subset_statistic(h, keep, cls):
    keep = list(keep)
    if len(keep) == h.dim:
        return h
    exprs = getattr(h, "exprs", None)
    types = getattr(h, "types", None)
    if exprs is not None and types is not None:
        from .statlang import compile_statistic
        return compile_statistic([exprs[k] for k in keep], types)
    idx = np.array(keep)
    return cls(lambda X: h.evaluate(X)[:, idx], len(keep), vectorized=True,
               names=[h.names[k] for k in keep], d=h.d)

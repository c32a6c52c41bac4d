"""Closed-form Gaussian references and the approximate population sampler."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Dataset, ModelSpec, validate_model
from .exceptions import ModelSpecError
from .exchange import ChainConfig, run_chain
from .rank import OBSERVATIONAL, decompose


def gaussian_rho(theta, sigma1: float = 1.0, sigma2: float = 1.0):
    """Correlation of the bivariate Gaussian with ``h = x1 x2`` coefficient ``theta``.

    Written as ``2c / (1 + sqrt(1 + 4c^2))`` with ``c = theta s1 s2``, which
    is stable for large ``|c|``.
    """
    if sigma1 <= 0 or sigma2 <= 0:
        raise ModelSpecError("standard deviations must be positive")
    c = np.asarray(theta, dtype=float) * sigma1 * sigma2
    out = 2.0 * c / (1.0 + np.sqrt(1.0 + 4.0 * c * c))
    return float(out) if out.ndim == 0 else out


def gaussian_theta(rho, sigma1: float = 1.0, sigma2: float = 1.0):
    """Inverse of :func:`gaussian_rho`: ``rho / (s1 s2 (1 - rho^2))``."""
    if sigma1 <= 0 or sigma2 <= 0:
        raise ModelSpecError("standard deviations must be positive")
    rho = np.asarray(rho, dtype=float)
    if np.any(np.abs(rho) >= 1):
        raise ModelSpecError("|rho| must be < 1")
    out = rho / (sigma1 * sigma2 * (1.0 - rho * rho))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class GaussianBivariate:
    sigma1: float
    sigma2: float
    theta: float

    @property
    def rho(self) -> float:
        return gaussian_rho(self.theta, self.sigma1, self.sigma2)


def gaussian_components(x1, x2, theta, sigma1: float = 1.0, sigma2: float = 1.0):
    """Adjusting functions ``a1(x1)``, ``a2(x2)`` and potential ``psi``.

    Zero-mean normal marginals with standard deviations ``sigma1``,
    ``sigma2`` are assumed.
    """
    rho = gaussian_rho(theta, sigma1, sigma2)
    one = 1.0 - rho * rho
    c = 0.5 / one - 0.5
    a1 = c * ((np.asarray(x1, dtype=float) / sigma1) ** 2 - 1.0)
    a2 = c * ((np.asarray(x2, dtype=float) / sigma2) ** 2 - 1.0)
    psi = 0.5 * math.log(one) + 1.0 / one - 1.0
    return a1, a2, psi


def gaussian_model_density(x1, x2, theta, sigma1: float = 1.0, sigma2: float = 1.0):
    """``exp(theta x1 x2 - a1 - a2 - psi) phi(x1) phi(x2)``."""
    a1, a2, psi = gaussian_components(x1, x2, theta, sigma1, sigma2)
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    logphi = (-0.5 * (x1 / sigma1) ** 2 - math.log(sigma1) - 0.5 * (x2 / sigma2) ** 2
              - math.log(sigma2) - math.log(2 * math.pi))
    return np.exp(theta * x1 * x2 - a1 - a2 - psi + logphi)


def gaussian_mle(X) -> np.ndarray:
    """Off-diagonal negative precision ``-(S^-1)_ij`` for ``i < j``.

    ``S`` is the mean-centred sample covariance with denominator ``n``;
    entries follow the lexicographic pair order of ``pairwise_products``.
    """
    X = X.values if isinstance(X, Dataset) else np.asarray(X, dtype=float)
    n, d = X.shape
    D = X - X.mean(axis=0)
    S = D.T @ D / n
    if np.linalg.matrix_rank(S) < d:
        raise np.linalg.LinAlgError("sample covariance is singular")
    P = np.linalg.inv(S)
    i, j = np.triu_indices(d, 1)
    return -P[i, j]


def precision_theta(Sigma) -> np.ndarray:
    """True ``theta`` of a Gaussian with covariance ``Sigma`` under pairwise products."""
    P = np.linalg.inv(np.asarray(Sigma, dtype=float))
    i, j = np.triu_indices(P.shape[0], 1)
    return -P[i, j]


def sample_population(spec: ModelSpec, n: int, N: int = 1000, L=None, rng=None,
                      chain_seed=None) -> Dataset:
    """Approximate sample of size ``n`` from the model.

    ``N`` rows are drawn independently from the marginals, the exchange
    chain at ``spec.theta`` permutes them for ``L`` steps (default ``150 N``),
    and ``n`` rows are then taken without replacement.
    """
    problems = validate_model(spec)
    if problems:
        raise ModelSpecError("; ".join(problems))
    if n > N:
        raise ModelSpecError(f"sample size {n} exceeds population {N}")
    rng = np.random.default_rng(rng)
    L = int(L or 150 * N)
    cols = [m.sample(rng, N) for m in spec.marginals]
    pop = Dataset.from_array(np.column_stack(cols))
    seed = int(rng.integers(2 ** 63)) if chain_seed is None else chain_seed
    if np.any(spec.theta != 0):
        dec = decompose(pop, OBSERVATIONAL)
        res = run_chain(dec, spec.theta, spec.h, ChainConfig(L=L, burn_in=L - 1, seed=seed))
        values = dec.values(res.final_pi)
    else:
        values = pop.values
    idx = rng.choice(N, size=n, replace=False)
    return Dataset.from_array(values[idx])

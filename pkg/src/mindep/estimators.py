"""scikit-learn style wrappers around the conditional and pseudo-likelihood fits.

The estimators are unsupervised: ``fit(X)`` estimates ``theta`` from the
rows of ``X``. ``score(X)`` is the conditional log-likelihood of ``X``'s
rank arrangement at the fitted ``theta`` (exact when enumeration is
feasible).
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .cle import ENUMERATION_BUDGET, Enumeration, conditional_loglik_mc, fit_cle
from .core import CanonicalStatistic, ColumnType, Dataset, pairwise_products
from .exceptions import EnumerationBudgetError, NonExistenceError
from .exchange import ChainConfig
from .ple import fit_ple
from .rank import decompose
from .statlang import compile_statistic


def check_data(X, types: Optional[Sequence[ColumnType]] = None, min_samples: int = 2) -> Dataset:
    """Validate ``X`` as a finite 2-d float array and wrap it as a Dataset."""
    if isinstance(X, Dataset):
        if X.n < min_samples:
            raise ValueError(f"need at least {min_samples} rows, got {X.n}")
        return X
    arr = check_array(X, dtype=np.float64, ensure_2d=True, ensure_min_samples=min_samples,
                      ensure_all_finite=True)
    return Dataset.from_array(arr, types)


def resolve_statistic(h, d: int, types=None) -> CanonicalStatistic:
    """``h`` may be None (pairwise products), expression strings or a statistic."""
    if h is None:
        return pairwise_products(d)
    if isinstance(h, CanonicalStatistic):
        if h.d is not None and h.d != d:
            raise ValueError(f"statistic expects d={h.d}, data has d={d}")
        return h
    if isinstance(h, str):
        h = [h]
    types = list(types) if types is not None else [ColumnType.continuous()] * d
    return compile_statistic(list(h), types)


class _DependenceEstimator(BaseEstimator):

    def _prepare(self, X):
        data = check_data(X, self.types)
        self.n_features_in_ = data.d
        self.statistic_ = resolve_statistic(self.h, data.d, data.types)
        return data

    def score(self, X, y=None) -> float:
        """Conditional log-likelihood of the rank arrangement of ``X``."""
        check_is_fitted(self, "theta_")
        data = check_data(X, self.types)
        if data.d != self.n_features_in_:
            raise ValueError(f"X has {data.d} features, estimator was fitted on {self.n_features_in_}")
        dec = decompose(data)
        try:
            return Enumeration(dec, self.statistic_, ENUMERATION_BUDGET).loglik(self.theta_)
        except EnumerationBudgetError:
            cfg = ChainConfig.default(data.n, data.d, seed=self.random_state or 0)
            return conditional_loglik_mc(self.theta_, dec, self.statistic_, cfg,
                                         seed=self.random_state or 0)[0]


class ConditionalLikelihoodEstimator(_DependenceEstimator):
    """Conditional maximum likelihood estimate of the dependence parameter.

    Parameters
    ----------
    h : None, str, list of str or CanonicalStatistic
        Canonical statistic; None means all pairwise products.
    types : sequence of ColumnType, optional
    tol : float
    max_iter : int
    chain_length : int, optional
        Initial exchange-chain length (default ``150 n``).
    method : {"auto", "exact", "mc"}
    random_state : int, optional

    Attributes
    ----------
    theta_ : ndarray (K,)
    covariance_ : ndarray (K, K)
    std_errors_ : ndarray (K,)
    report_ : FitReport
    """

    def __init__(self, h=None, types=None, tol=1e-2, max_iter=200, chain_length=None,
                 method="auto", random_state=None):
        self.h = h
        self.types = types
        self.tol = tol
        self.max_iter = max_iter
        self.chain_length = chain_length
        self.method = method
        self.random_state = random_state

    def fit(self, X, y=None):
        data = self._prepare(X)
        seed = 0 if self.random_state is None else int(self.random_state)
        cfg = ChainConfig.default(data.n, data.d, seed=seed, L=self.chain_length)
        rep = fit_cle(data, self.statistic_, tol=self.tol, max_iter=self.max_iter, cfg=cfg,
                      method=self.method, seed=seed)
        self.report_ = rep
        self.theta_ = rep.theta_hat
        self.covariance_ = rep.covariance
        self.std_errors_ = rep.std_errors
        self.converged_ = rep.converged
        return self


class PseudoLikelihoodEstimator(_DependenceEstimator):
    """Pseudo-likelihood estimate with sandwich standard errors.

    Parameters
    ----------
    h : None, str, list of str or CanonicalStatistic
    types : sequence of ColumnType, optional
    tol : float
    max_iter : int
    random_state : int, optional
        Only used by :meth:`score` when the likelihood needs sampling.
    """

    def __init__(self, h=None, types=None, tol=1e-8, max_iter=100, random_state=None):
        self.h = h
        self.types = types
        self.tol = tol
        self.max_iter = max_iter
        self.random_state = random_state

    def fit(self, X, y=None):
        data = self._prepare(X)
        res = fit_ple(data, self.statistic_, tol=self.tol, max_iter=self.max_iter)
        if not res.exists:
            raise NonExistenceError("pseudo-likelihood estimate does not exist", res.certificate)
        self.result_ = res
        self.theta_ = res.theta
        self.covariance_ = res.covariance
        self.std_errors_ = res.std_errors
        return self

import numpy as np
import pytest
from sklearn.base import clone

from mindep.cle import fit_cle
from mindep.core import ColumnType, pairwise_products
from mindep.estimators import (ConditionalLikelihoodEstimator, PseudoLikelihoodEstimator,
                               check_data, resolve_statistic)
from mindep.exceptions import NonExistenceError
from mindep.ple import fit_ple


def _data(seed=0, n=40):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, 2)) @ np.linalg.cholesky([[1, .5], [.5, 1]]).T


def test_params_and_clone():
    est = ConditionalLikelihoodEstimator(h=["x1*x2"], tol=1e-3, random_state=4)
    params = est.get_params()
    assert params["tol"] == 1e-3 and params["random_state"] == 4
    other = clone(est)
    assert other.get_params() == params and other is not est
    est.set_params(max_iter=10)
    assert est.max_iter == 10


def test_cle_estimator_matches_function():
    X = _data()
    est = ConditionalLikelihoodEstimator(random_state=3).fit(X)
    rep = fit_cle(X, pairwise_products(2), seed=3)
    assert np.allclose(est.theta_, rep.theta_hat)
    assert est.converged_ and est.std_errors_.shape == (1,)
    assert np.isfinite(est.score(X))


def test_ple_estimator_matches_function():
    X = _data(1)
    est = PseudoLikelihoodEstimator(h="x1*x2").fit(X)
    assert np.allclose(est.theta_, fit_ple(X, pairwise_products(2)).theta)
    with pytest.raises(NonExistenceError):
        PseudoLikelihoodEstimator().fit(np.column_stack([np.arange(6.0), np.arange(6.0)]))


def test_exact_score_on_small_data():
    X = _data(2, n=5)
    est = ConditionalLikelihoodEstimator(method="exact").fit(X)
    assert est.score(X) <= 0


def test_validation():
    with pytest.raises(ValueError):
        check_data([[1.0, np.nan], [2.0, 3.0]])
    with pytest.raises(ValueError):
        check_data([[1.0, 2.0]])
    est = PseudoLikelihoodEstimator().fit(_data(3))
    with pytest.raises(ValueError):
        est.score(np.ones((5, 3)))
    with pytest.raises(ValueError):
        resolve_statistic(pairwise_products(3), 2)


def test_statistic_resolution():
    assert resolve_statistic(None, 3).dim == 3
    h = resolve_statistic("x1*ind(x2 == 1)", 2, [ColumnType.continuous(), ColumnType.count()])
    assert h((2.0, 1.0))[0] == 2.0


def test_unfitted_score():
    from sklearn.exceptions import NotFittedError
    with pytest.raises(NotFittedError):
        ConditionalLikelihoodEstimator().score(_data())

import math

import numpy as np
import pytest

from mindep.cle import (EXACT, MONTE_CARLO, Enumeration, FitReport, aic, backward_stepwise,
                        conditional_loglik_exact, conditional_moments_mc, default_prior_mean,
                        fit_cle, map_estimate, wald_test)
from mindep.core import Dataset, pairwise_products
from mindep.exceptions import EnumerationBudgetError, NonExistenceError
from mindep.exchange import ChainConfig
from mindep.oracle import gaussian_mle, precision_theta
from mindep.rank import NATURAL, OBSERVATIONAL, decompose
from mindep.statlang import statistic

H = pairwise_products(2)


def _dec(X):
    return decompose(Dataset.from_array(np.asarray(X, dtype=float)))


def _gauss(rng, n, rho=0.4, d=2):
    S = np.full((d, d), rho) + (1 - rho) * np.eye(d)
    return rng.standard_normal((n, d)) @ np.linalg.cholesky(S).T


def _interior():
    # n = 5 data whose estimate exists for both x1*x2 and (x1*x2, x1^2*x2^2)
    return _gauss(np.random.default_rng(1), 5)


def test_uniform_loglik_at_zero():
    dec = _dec([[0.1, 0.5], [0.7, -0.2], [1.3, 0.9]])
    assert conditional_loglik_exact([0.0], dec, H) == pytest.approx(-math.log(6), abs=1e-12)


def test_two_row_loglik():
    dec = _dec([[0, 1], [1, 0]])
    assert conditional_loglik_exact([1.0], dec, H) == pytest.approx(-math.log1p(math.e), abs=1e-12)


def test_probabilities_normalize(rng):
    enum = Enumeration(_dec(rng.normal(size=(5, 2))), statistic(["x1*x2", "x1^2*x2"]))
    for _ in range(5):
        assert abs(enum.probabilities(rng.normal(size=2)).sum() - 1) < 1e-12


def test_budget():
    with pytest.raises(EnumerationBudgetError):
        Enumeration(_dec(np.random.default_rng(0).normal(size=(8, 2))), H)


def test_moments_hand_example():
    dec = _dec([[1, 1], [2, 2], [3, 3]])
    mu, G = Enumeration(dec, H).moments([0.0])
    assert mu[0] == pytest.approx(12.0)
    est = conditional_moments_mc([0.0], dec, H, ChainConfig(L=60000, burn_in=100, thin=3, seed=1))
    assert abs(est.mu[0] - 12.0) <= 3 * est.mc_se[0]
    assert est.G[0, 0] == pytest.approx(G[0, 0], rel=0.1)


def test_large_theta_concentrates_on_maximum(rng):
    enum = Enumeration(_dec(rng.normal(size=(4, 2))), H)
    mu, _ = enum.moments([1e6])
    assert mu[0] == pytest.approx(enum.H[:, 0].max(), rel=1e-12)


def test_additive_statistic_is_degenerate(rng):
    dec = _dec(rng.normal(size=(5, 2)))
    h = statistic(["x1 + x2^2"])
    est = conditional_moments_mc([0.5], dec, h, ChainConfig(L=2000, burn_in=0, thin=1, seed=0))
    assert est.degenerate and np.all(est.G == 0)
    with pytest.raises(Exception):
        fit_cle(rng.normal(size=(5, 2)), h, method="exact")


def test_exact_fit_matches_moments_and_is_concave(rng):
    X = _interior()
    h = statistic(["x1*x2", "x1^2*x2^2"])
    rep = fit_cle(X, h, method="exact")
    assert rep.method == EXACT and rep.converged
    enum = Enumeration(_dec(X), h)
    mu, G = enum.moments(rep.theta_hat)
    assert np.allclose(mu, enum.h_obs, atol=1e-8)
    for th in rng.normal(size=(5, 2)):
        assert np.all(np.linalg.eigvalsh(-enum.moments(th)[1]) <= 1e-9)
    assert np.allclose(rep.covariance, rep.covariance.T)
    assert np.allclose(rep.std_errors, np.sqrt(np.diag(rep.covariance)))


def test_gradient_of_log_normalizer_by_finite_differences(rng):
    enum = Enumeration(_dec(rng.normal(size=(5, 2))), statistic(["x1*x2", "x1*x2^2"]))
    th = np.array([0.3, -0.2])
    mu, _ = enum.moments(th)
    e = 1e-4
    fd = np.array([(enum.log_normalizer(th + e * v) - enum.log_normalizer(th - e * v)) / (2 * e)
                   for v in np.eye(2)])
    assert np.allclose(fd, mu, rtol=1e-6)


def test_mc_fit_agrees_with_exact():
    X = _interior()
    ex = fit_cle(X, H, method="exact")
    mc = fit_cle(X, H, method="mc", seed=3)
    assert mc.method == MONTE_CARLO and mc.converged
    assert abs(mc.theta_hat[0] - ex.theta_hat[0]) <= 3 * mc.mc_se[0] + mc.tol
    # moment matching at the MC estimate, checked exactly
    mu, _ = Enumeration(_dec(X), H).moments(mc.theta_hat)
    assert abs(mu[0] - ex.h_obs[0]) <= 3 * np.sqrt(Enumeration(_dec(X), H).moments(ex.theta_hat)[1][0, 0])


def test_gaussian_cle_near_mle():
    rng = np.random.default_rng(50)
    X = _gauss(rng, 50, rho=0.5)
    rep = fit_cle(X, H, seed=1)
    assert rep.converged
    assert abs(rep.theta_hat[0] - gaussian_mle(X)[0]) <= 3 * rep.std_errors[0]


def test_monotone_data_does_not_exist():
    X = np.column_stack([np.arange(6.0), np.arange(6.0) ** 2])
    with pytest.raises(NonExistenceError):
        fit_cle(X, H)
    X = np.column_stack([np.arange(12.0), np.arange(12.0)])
    with pytest.raises(NonExistenceError):
        fit_cle(X, H, method="mc")


def test_order_policy_invariance():
    rng = np.random.default_rng(8)
    X = rng.integers(0, 3, size=(6, 2)).astype(float)
    a = fit_cle(X, H, method="exact", order_policy=OBSERVATIONAL)
    b = fit_cle(X, H, method="exact", order_policy=NATURAL)
    assert np.allclose(a.theta_hat, b.theta_hat, atol=1e-8)


def test_map_limits():
    X = _interior()
    h = statistic(["x1*x2", "x1^2*x2^2"])
    mu0 = default_prior_mean(X, h)
    base = fit_cle(X, h, method="exact")
    small = map_estimate(X, h, mu0, lambda0=1e-8)
    assert np.allclose(small.theta_hat, base.theta_hat, atol=1e-5)
    big = map_estimate(X, h, mu0, lambda0=1e8)
    mu, _ = Enumeration(_dec(X), h).moments(big.theta_hat)
    assert np.allclose(mu, mu0, atol=1e-5 * (1 + np.abs(mu0)))


def test_map_on_boundary_data():
    X = np.column_stack([np.arange(5.0), np.arange(5.0)])
    with pytest.raises(NonExistenceError):
        fit_cle(X, H)
    mu0 = default_prior_mean(X, H)
    rep = map_estimate(X, H, mu0)
    assert rep.converged and np.all(np.isfinite(rep.theta_hat))


def _report(theta, cov, loglik=None):
    theta = np.asarray(theta, dtype=float)
    return FitReport(theta_hat=theta, covariance=np.asarray(cov, dtype=float),
                     loglik_conditional=loglik, iterations=0, converged=True, method=EXACT,
                     n=10, names=tuple(f"h{k}" for k in range(theta.size)))


def test_wald_identities():
    stat, dof, p = wald_test(_report([0, 0], np.eye(2)))
    assert (stat, dof, p) == (0.0, 2, 1.0)
    rep = _report([1.5, -0.3], [[0.25, 0.05], [0.05, 0.5]])
    stat, dof, p = wald_test(rep, [0])
    assert stat == pytest.approx((1.5 / 0.5) ** 2) and dof == 1
    from scipy import stats
    assert p == pytest.approx(stats.chi2.sf(9.0, 1))
    with pytest.raises(np.linalg.LinAlgError):
        wald_test(_report([1.0, 1.0], np.zeros((2, 2))))


def test_aic():
    assert aic(_report([0.0], [[1.0]], loglik=-10.0)) == 22.0


def test_aic_difference_is_lr_minus_penalty():
    X = _interior()
    small = fit_cle(X, statistic(["x1*x2"]), method="exact")
    large = fit_cle(X, statistic(["x1*x2", "x1^2*x2^2"]), method="exact")
    lr = 2 * (large.loglik_conditional - small.loglik_conditional)
    assert aic(small) - aic(large) == pytest.approx(lr - 2 * 1)


@pytest.mark.slow
def test_wald_null_rejection_rate():
    rng = np.random.default_rng(500)
    rejected = 0
    for rep in range(500):
        X = rng.standard_normal((50, 2))
        fit = fit_cle(X, H, seed=rep)
        rejected += wald_test(fit)[2] < 0.05
    assert 0.02 <= rejected / 500 <= 0.09


@pytest.mark.slow
def test_backward_stepwise_recovers_edges():
    d = 4
    # AR(1) with rho = 1/2 has a tridiagonal precision
    Sigma = 0.5 ** np.abs(np.subtract.outer(np.arange(d), np.arange(d)))
    truth = precision_theta(Sigma)
    assert np.allclose(truth, [2 / 3, 0, 0, 2 / 3, 0, 2 / 3])
    h = pairwise_products(d)
    rng = np.random.default_rng(200)
    hits = 0
    L = np.linalg.cholesky(Sigma)
    for rep in range(100):
        X = rng.standard_normal((200, d)) @ L.T
        keep, _ = backward_stepwise(X, h, seed=rep)
        # AIC keeps each null edge with probability about 0.16, so only the
        # true edges are required
        hits += {0, 3, 5} <= set(keep)
    assert hits >= 80

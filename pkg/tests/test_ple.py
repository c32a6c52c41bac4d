import math

import numpy as np
import pytest
from scipy.special import expit
from sklearn.linear_model import LogisticRegression

from mindep.core import Dataset, pairwise_products
from mindep.ple import (PairStatistics, fit_ple, pair_statistic, pseudo_loglik,
                        sandwich_variance)
from mindep.statlang import statistic

H = pairwise_products(2)


def _gauss(rng, n, theta=0.0):
    r = 2 * theta / (1 + math.sqrt(1 + 4 * theta * theta))
    return rng.standard_normal((n, 2)) @ np.linalg.cholesky([[1, r], [r, 1]]).T


def test_value_at_zero(rng):
    X = rng.normal(size=(7, 3))
    v, g, Hs = pseudo_loglik(np.zeros(3), X, pairwise_products(3))
    assert v == pytest.approx(-3 * 21 * math.log(2))


def test_additive_statistic_is_flat(rng):
    X = rng.normal(size=(6, 2))
    h = statistic(["x1 + x2^2", "x1^3"])
    for th in ([0, 0], [1.3, -2.0]):
        v, g, Hs = pseudo_loglik(th, X, h)
        assert v == pytest.approx(-2 * 15 * math.log(2))
        assert np.allclose(g, 0, atol=1e-12) and np.allclose(Hs, 0, atol=1e-12)


def test_hand_example():
    X = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert pair_statistic(X, H, 0, 0, 1).tolist() == [-1.0]
    v, _, _ = pseudo_loglik([1.0], X, H)
    assert v == pytest.approx(-2 * math.log1p(math.e))


def test_gradient_and_concavity(rng):
    X = rng.normal(size=(8, 3))
    h = pairwise_products(3)
    th = rng.normal(scale=0.3, size=3)
    _, g, Hs = pseudo_loglik(th, X, h)
    e = 1e-5
    fd = np.array([(pseudo_loglik(th + e * v, X, h)[0] - pseudo_loglik(th - e * v, X, h)[0]) / (2 * e)
                   for v in np.eye(3)])
    assert np.allclose(g, fd, rtol=1e-6)
    assert np.all(np.linalg.eigvalsh(Hs) <= 1e-12)
    for _ in range(20):
        a, b = rng.normal(size=(2, 3))
        lam = rng.random()
        mid = pseudo_loglik(lam * a + (1 - lam) * b, X, h)[0]
        ends = lam * pseudo_loglik(a, X, h)[0] + (1 - lam) * pseudo_loglik(b, X, h)[0]
        assert mid >= ends - 1e-10


def test_pair_symmetry_and_locality(rng):
    X = rng.normal(size=(6, 3))
    h = statistic(["x1*x2*x3", "x1^2*x3"])
    pairs = PairStatistics(X, h)
    U = pairs.matrix()
    k = 0
    for i in range(3):
        for s, t in zip(pairs.s, pairs.t):
            assert np.allclose(U[k], pair_statistic(X, h, i, s, t))
            assert np.allclose(pair_statistic(X, h, i, s, t), pair_statistic(X, h, i, t, s))
            k += 1


def test_matches_logistic_regression(rng):
    X = _gauss(rng, 40, theta=0.5)
    h = statistic(["x1*x2", "x1^2*x2^2"])
    U = PairStatistics(X, h).matrix()
    # all responses are one; mirroring the design gives sklearn both classes
    lr = LogisticRegression(fit_intercept=False, penalty=None, tol=1e-12, max_iter=10_000)
    lr.fit(np.vstack([U, -U]), np.r_[np.ones(len(U)), np.zeros(len(U))])
    res = fit_ple(X, h)
    assert res.exists
    assert np.allclose(res.theta, lr.coef_[0], rtol=1e-5, atol=1e-6)


def test_streamed_equals_materialized(rng):
    X = rng.normal(size=(30, 3))
    h = pairwise_products(3)
    big = PairStatistics(X, h)
    small = PairStatistics(X, h, budget=10, block_rows=37)
    assert big.materialized and not small.materialized
    th = np.array([0.2, -0.1, 0.3])
    for a, b in zip(pseudo_loglik(th, X, h, big), pseudo_loglik(th, X, h, small)):
        assert np.allclose(a, b, rtol=1e-12)
    assert np.allclose(fit_ple(X, h, pairs=small).theta, fit_ple(X, h, pairs=big).theta)


def test_monotone_data_separates():
    X = np.column_stack([np.arange(10.0), np.exp(np.arange(10.0) / 3)])
    res = fit_ple(X, H)
    assert not res.exists and res.certificate is not None
    X = np.array([[0.0, 0.0], [1.0, 1.0]])
    res = fit_ple(X, H)
    assert not res.exists


def _sandwich_by_hand(theta, X, h):
    # direct double loop over ordered pairs of rows
    n = X.shape[0]
    d = X.shape[1]
    K = h.dim
    score = np.zeros((n, K))
    J = np.zeros((K, K))
    for i in range(d):
        for s in range(n):
            for t in range(n):
                if s == t:
                    continue
                u = pair_statistic(X, h, i, s, t)
                w = 1 / (1 + math.exp(theta @ u))
                score[s] += u * w
                if s < t:
                    J += np.outer(u, u) * w * w
    score /= n
    J *= 2 / (n * (n - 1))
    I = score.T @ score / n
    Jinv = np.linalg.inv(J)
    return 4 / n * Jinv @ I @ Jinv


def test_sandwich_matches_direct_formula(rng):
    X = _gauss(rng, 12, theta=0.4)
    h = statistic(["x1*x2", "x1*x2^2"])
    res = fit_ple(X, h)
    assert np.allclose(res.covariance, _sandwich_by_hand(res.theta, X, h), rtol=1e-10)
    assert np.all(np.linalg.eigvalsh(res.covariance) >= -1e-14)


def test_sandwich_single_atom():
    # n = 2: one pair per variable, both with u = -1
    X = np.array([[0.0, 1.0], [1.0, 0.0]])
    th = np.array([1.0])
    w = expit(-th[0] * -1.0)
    J = 2 * w * w
    row = np.array([2 * (-1.0) * w / 2, 2 * (-1.0) * w / 2])
    I = np.mean(row * row)
    want = 4 / 2 * I / J ** 2
    assert sandwich_variance(th, X, H)[0, 0] == pytest.approx(want)
    assert want == pytest.approx((1 + math.exp(-1)) ** 2 / 2)


def test_duplicating_rows(rng):
    X = _gauss(rng, 20, theta=0.5)
    a = fit_ple(X, H)
    b = fit_ple(np.vstack([X, X]), H)
    assert np.allclose(a.theta, b.theta, atol=1e-7)
    assert np.trace(b.covariance) < np.trace(a.covariance)


def test_null_within_three_standard_errors():
    rng = np.random.default_rng(200)
    inside = 0
    for _ in range(200):
        res = fit_ple(_gauss(rng, 50), H)
        inside += abs(res.theta[0]) <= 3 * res.std_errors[0]
    assert inside >= 190


@pytest.mark.slow
def test_sandwich_coverage():
    rng = np.random.default_rng(300)
    hit = 0
    for _ in range(300):
        res = fit_ple(_gauss(rng, 100, theta=1.0), H)
        hit += abs(res.theta[0] - 1.0) <= 1.959963984540054 * res.std_errors[0]
    assert 0.90 <= hit / 300 <= 0.99

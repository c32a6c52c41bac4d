import math

import numpy as np
import pytest

from mindep.core import Normal
from mindep.exceptions import ConvergenceError, ModelSpecError
from mindep.finite import (FiniteModel, backfit_projection, correlation, expectation_range,
                           kl_divergence, poisson_correlation_bounds, potential_derivatives,
                           pythagorean_residual, solve_adjusting)
from mindep.oracle import gaussian_components


def _rand_marg(rng, m):
    return rng.dirichlet(np.ones(m) * 2)


def test_independence(rng):
    r = [_rand_marg(rng, 4), _rand_marg(rng, 6)]
    model = solve_adjusting(np.zeros((4, 6)), r)
    assert all(np.allclose(a, 0) for a in model.a) and model.psi == pytest.approx(0, abs=1e-14)
    assert np.allclose(model.p, np.outer(*r))


def test_three_way_table(rng):
    r = [_rand_marg(rng, m) for m in (3, 4, 5)]
    H = rng.normal(size=(3, 4, 5))
    model = solve_adjusting(H, r)
    assert model.marginal_errors().max() <= 1e-10
    assert abs(model.zero_mean_residual()) <= 1e-10
    for i in range(3):
        assert abs(model.a[i] @ r[i]) <= 1e-12


def test_circle():
    m = 64
    x = 2 * np.pi * np.arange(m) / m
    model = solve_adjusting(1.5 * np.cos(x[:, None] - x[None, :]), [np.full(m, 1 / m)] * 2)
    assert max(np.abs(a).max() for a in model.a) <= 1e-8
    assert model.psi == pytest.approx(math.log(np.mean(np.exp(1.5 * np.cos(x)))), abs=1e-12)


def test_gaussian_grid_potential():
    x, w = Normal().grid(201, 6.0)
    model = solve_adjusting(0.5 * np.outer(x, x), [w, w])
    assert abs(model.psi - gaussian_components(0, 0, 0.5)[2]) <= 1e-3


def test_mixed_logistic_form(rng):
    x1, r1 = Normal().grid(41, 5.0)
    r2 = np.array([0.3, 0.7])
    h = lambda a, b: a * b / (1 + a * a) + 0.5 * a * a * b
    theta = 1.3
    H = theta * h(x1[:, None], np.array([0.0, 1.0])[None, :])
    p = solve_adjusting(H, [r1, r2]).p
    cond = p[:, 1] / p.sum(axis=1)
    u = h(x1, 1.0) - h(x1, 0.0)
    alpha = np.log(cond / (1 - cond)) - theta * u
    assert np.ptp(alpha) <= 1e-8


def test_monotone_support_limit():
    # mass off the monotone support shrinks as theta grows
    x = np.arange(5.0)
    r = np.full(5, 0.2)
    off = [1 - np.trace(solve_adjusting(t * np.outer(x, x), [r, r]).p) for t in (2.5, 5.0, 10.0)]
    assert off[0] > off[1] > off[2] and off[2] < 0.02
    anti = solve_adjusting(-10.0 * np.outer(x, x), [r, r]).p
    assert np.trace(anti[:, ::-1]) > 0.98


def test_zero_cells_are_dropped(rng):
    r1 = np.array([0.5, 0.0, 0.5])
    r2 = _rand_marg(rng, 3)
    model = solve_adjusting(rng.normal(size=(3, 3)), [r1, r2])
    assert model.p.shape == (2, 3)
    assert model.marginal_errors().max() <= 1e-10


def test_uniqueness_across_starts(rng):
    H = rng.normal(size=(5, 4))
    r = [_rand_marg(rng, 5), _rand_marg(rng, 4)]
    a = solve_adjusting(H, r)
    b = solve_adjusting(H, r, init=[rng.normal(size=5) * 5, rng.normal(size=4) * 5])
    assert np.allclose(a.additive() + a.psi, b.additive() + b.psi, atol=1e-8)


def test_bad_input_and_nonconvergence(rng):
    with pytest.raises(ModelSpecError):
        solve_adjusting(np.zeros((2, 2)), [np.array([0.5, 0.6]), np.array([0.5, 0.5])])
    with pytest.raises(ModelSpecError):
        solve_adjusting(np.zeros((2, 3)), [np.array([0.5, 0.5])] * 2)
    with pytest.raises(ConvergenceError) as err:
        solve_adjusting(30 * rng.normal(size=(6, 6)), [np.full(6, 1 / 6)] * 2, max_sweeps=2)
    assert err.value.residual > 0


def test_text_round_trip(rng):
    model = solve_adjusting(rng.normal(size=(3, 4)), [_rand_marg(rng, 3), _rand_marg(rng, 4)])
    back = FiniteModel.from_text(model.to_text())
    assert back.psi == model.psi
    assert all(np.array_equal(a, b) for a, b in zip(back.a, model.a))
    assert np.array_equal(back.p, model.p)


def test_gradient_at_independence(rng):
    x1, r1 = np.array([0.0, 1.0, 3.0]), _rand_marg(rng, 3)
    x2, r2 = np.array([-1.0, 2.0]), _rand_marg(rng, 2)
    _, grad, _ = potential_derivatives([0.0], np.outer(x1, x2)[None], [r1, r2])
    assert grad[0] == pytest.approx((r1 @ x1) * (r2 @ x2))


def test_fisher_is_covariance_of_residual(rng):
    hs = rng.normal(size=(2, 4, 5))
    r = [_rand_marg(rng, 4), _rand_marg(rng, 5)]
    th = np.array([0.4, -0.3])
    _, _, F = potential_derivatives(th, hs, r)
    assert np.allclose(F, F.T) and np.all(np.linalg.eigvalsh(F) >= -1e-12)


def test_backfit_fixed_point_and_orthogonality(rng):
    p = rng.dirichlet(np.ones(20)).reshape(4, 5)
    f = rng.normal(size=4)[:, None] + rng.normal(size=5)[None, :]
    assert np.ptp(backfit_projection(f, p) - f) <= 1e-10
    x = np.array([-2.0, -1.0, 1.0, 2.0])
    w = np.array([0.1, 0.4, 0.4, 0.1])
    B = backfit_projection(np.outer(x, x), np.outer(w, w))
    assert np.abs(B).max() <= 1e-10
    g = rng.normal(size=(4, 5))
    resid = g - backfit_projection(g, p)
    assert np.allclose((p * resid).sum(axis=1), 0, atol=1e-10)
    assert np.allclose((p * resid).sum(axis=0), 0, atol=1e-10)


def test_pythagorean_identity(rng):
    p = rng.dirichlet(np.ones(12)).reshape(3, 4)
    s = rng.dirichlet(np.ones(12)).reshape(3, 4)
    assert pythagorean_residual(p, p, s) == pytest.approx(0, abs=1e-15)
    assert pythagorean_residual(p, s, s) == pytest.approx(0, abs=1e-15)
    q = solve_adjusting(np.log(s), [p.sum(axis=1), p.sum(axis=0)]).p
    assert abs(pythagorean_residual(p, q, s)) <= 1e-8
    assert kl_divergence(p, p) == 0.0


@pytest.mark.parametrize("nu2,lower,upper", [(1.0, -0.74, 0.99), (0.25, -0.50, 0.82)])
def test_poisson_bounds(nu2, lower, upper):
    lo, hi = poisson_correlation_bounds(1.0, nu2)
    assert abs(lo - lower) <= 0.02 and abs(hi - upper) <= 0.02


def test_two_point_bounds():
    x = np.array([-1.0, 1.0])
    lo, hi = expectation_range(np.outer(x, x), [np.full(2, .5)] * 2, supports=[x, x])
    assert abs(lo + 1) <= 1e-3 and abs(hi - 1) <= 1e-3


def test_correlation_needs_two_dims(rng):
    model = solve_adjusting(np.zeros((2, 2, 2)), [np.full(2, .5)] * 3)
    with pytest.raises(ModelSpecError):
        correlation(model)

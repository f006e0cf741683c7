import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from conftest import central_gradient
from qlc.efc import EfcLaw, GaussianNoiseLaw, bernoulli, gaussian, poisson
from qlc.glm import (
    GlmModel,
    check_glm_conditions,
    fit_qmle,
    glm_geometry,
    identifiability_constants,
    loglik_diff,
    loglik_gradient,
    loglik_hessian,
    quasi_loglik,
    rate_function,
    rate_gradient,
    rate_hessian,
    target_theta0,
    well_specified_law,
)


def ones(n):
    return np.ones((n, 1))


@pytest.mark.parametrize("family, design, y, theta, expected", [
    (gaussian(1.0), ones(1), [2.0], [1.0], 1.5),
    (poisson(), ones(2), [1.0, 3.0], [0.0], -2.0),
    (bernoulli(), ones(2), [0.0, 1.0], [0.0], -2 * math.log(2)),
])
def test_quasi_loglik_values(family, design, y, theta, expected):
    assert quasi_loglik(GlmModel(design, family, 1.0, y), theta) == pytest.approx(expected, rel=1e-14)


def test_quasi_loglik_vectorised_over_points(rng):
    x = rng.normal(size=(7, 2))
    m = GlmModel(x, poisson(), 0.7, rng.poisson(2.0, 7).astype(float))
    pts = rng.normal(scale=0.3, size=(5, 2))
    np.testing.assert_allclose(quasi_loglik(m, pts), [quasi_loglik(m, t) for t in pts], rtol=1e-13)
    assert loglik_diff(m, pts[0], pts[0]) == 0.0


def test_gradient_and_hessian_match_finite_differences(rng):
    x = rng.normal(size=(12, 3))
    m = GlmModel(x, bernoulli(), 1.3, rng.integers(0, 2, 12).astype(float))
    th = rng.normal(scale=0.5, size=3)
    np.testing.assert_allclose(loglik_gradient(m, th), central_gradient(lambda t: quasi_loglik(m, t), th), rtol=1e-6)
    fd = np.column_stack([central_gradient(lambda t: loglik_gradient(m, t)[j], th) for j in range(3)])
    np.testing.assert_allclose(loglik_hessian(m, th), fd, rtol=1e-6, atol=1e-8)


@pytest.mark.parametrize("family, y, expected", [
    (gaussian(1.0), [1.0, 2.0, 3.0], 2.0),
    (poisson(), [1.0, 2.0, 3.0], math.log(2.0)),
])
def test_fit_closed_forms(family, y, expected):
    fit = fit_qmle(GlmModel(ones(3), family, 1.0, y, -10, 10))
    assert fit.theta[0] == pytest.approx(expected, abs=1e-10)


def test_fit_from_maximizer_takes_no_steps():
    m = GlmModel(ones(3), poisson(), 1.0, [1.0, 2.0, 3.0], -10, 10)
    fit = fit_qmle(m, init=[math.log(2.0)])
    assert fit.diagnostics["newton_steps"] == 0
    assert fit.theta[0] == math.log(2.0)


def test_fit_projects_onto_box():
    fit = fit_qmle(GlmModel(ones(3), gaussian(1.0), 1.0, [5.0, 6.0, 7.0], -1, 1))
    assert fit.theta[0] == 1.0 and fit.diagnostics["at_box_face"]


@given(c=st.floats(0.05, 20))
def test_fit_invariant_to_rescaling_mu(c):
    y = np.array([0.0, 1.0, 4.0, 2.0])
    x = np.column_stack([np.ones(4), np.arange(4.0)])
    base = fit_qmle(GlmModel(x, poisson(), 1.0, y, -5, 5)).theta
    scaled = fit_qmle(GlmModel(x, poisson(), c, y, -5, 5)).theta
    np.testing.assert_allclose(scaled, base, atol=1e-8)


@pytest.mark.parametrize("family, sampler", [
    (gaussian(1.0), lambda r: r.normal(1.0, 1.0, 30)),
    (poisson(), lambda r: r.poisson(2.5, 30).astype(float)),
])
def test_fit_matches_brute_force_grid(family, sampler, rng):
    y = sampler(rng)
    x = np.column_stack([rng.uniform(0.5, 1.5, 30)])
    lo, hi = -1.0, 3.0
    m = GlmModel(x, family, 1.0, y, lo, hi)
    grid = np.linspace(lo, hi, 10_000)
    brute = grid[np.argmax(quasi_loglik(m, grid[:, None]))]
    assert abs(fit_qmle(m).theta[0] - brute) <= grid[1] - grid[0]


@pytest.mark.parametrize("family, means, expected", [
    (gaussian(1.0), [0.0, 1.0], 0.5),
    (poisson(), [1.0, 3.0], math.log(2.0)),
])
def test_target_closed_forms(family, means, expected):
    for mu in (0.3, 1.0, 4.0):
        t = target_theta0(ones(2), family, means, mu)
        assert t.theta0[0] == pytest.approx(expected, abs=1e-12)
        assert t.grad_residual <= 1e-9


def test_target_well_specified_recovers_truth(rng):
    x = rng.normal(size=(20, 2))
    theta_star = np.array([0.4, -0.3])
    for fam in (poisson(), bernoulli(), gaussian(2.0)):
        t = target_theta0(x, fam, fam.mean(x @ theta_star))
        np.testing.assert_allclose(t.theta0, theta_star, atol=1e-10)


def _mc_rate(model, law, theta, theta0, draws, rng):
    y = np.stack([law.sample(rng) for _ in range(draws)]) if draws <= 1000 else None
    if y is None:
        if isinstance(law, EfcLaw):
            y = law.family.sample(rng, np.broadcast_to(law.natural, (draws, law.n)))
        else:
            y = law.means + law.sigma * rng.standard_normal((draws, law.n))
    eta, eta0 = model.design @ theta, model.design @ theta0
    ld = model.mu * (y @ (eta - eta0) - np.sum(model.family.d(eta) - model.family.d(eta0)))
    z = np.exp(ld)
    return -math.log(z.mean()), z.std(ddof=1) / z.mean() / math.sqrt(draws)


def test_rate_closed_form_gaussian():
    m = GlmModel(ones(4), gaussian(1.0), 0.5)
    assert rate_function(m, [1.0], [0.0]) == pytest.approx(0.5, abs=1e-12)
    assert rate_function(m, [0.3], [0.3]) == 0.0


def test_rate_by_exact_summation_poisson():
    # independent route: E exp{t Y} by summing the Poisson pmf
    m = GlmModel(ones(3), poisson(), 0.6)
    theta0, theta = np.array([0.2]), np.array([0.9])
    lam = math.exp(0.2)
    k = np.arange(200)
    t = m.mu * (theta - theta0)[0]
    mgf = float(np.sum(stats.poisson.pmf(k, lam) * np.exp(t * k)))
    expected = -3 * (math.log(mgf) - m.mu * (math.exp(0.9) - math.exp(0.2)))
    assert rate_function(m, theta, theta0) == pytest.approx(expected, rel=1e-12)


def test_rate_by_quadrature_misspecified_gaussian_noise():
    # Gaussian noise of variance 2 around arbitrary means, fitted with a Poisson model
    b = np.array([1.0, 2.5])
    law = GaussianNoiseLaw(b, math.sqrt(2.0))
    x = np.array([[1.0], [1.5]])
    m = GlmModel(x, poisson(), 0.4)
    theta0 = target_theta0(x, poisson(), b).theta0
    theta = theta0 + 0.3
    eta, eta0 = x[:, 0] * theta[0], x[:, 0] * theta0[0]
    logs = 0.0
    for i in range(2):
        t = m.mu * (eta[i] - eta0[i])
        val, _ = integrate.quad(lambda y: stats.norm.pdf(y, b[i], math.sqrt(2)) * math.exp(t * y), -40, 40)
        logs += math.log(val) - m.mu * (math.exp(eta[i]) - math.exp(eta0[i]))
    assert rate_function(m, theta, theta0, law) == pytest.approx(-logs, rel=1e-9)


@pytest.mark.parametrize("family", [gaussian(1.0), poisson(), bernoulli()], ids=lambda f: f.token)
def test_rate_vanishes_at_mu_one(family, rng):
    x = rng.normal(size=(6, 2))
    theta0 = np.array([0.2, -0.1])
    m = GlmModel(x, family, 1.0)
    grid = rng.normal(scale=0.7, size=(25, 2))
    assert np.max(np.abs(rate_function(m, grid, theta0))) <= 1e-10


@pytest.mark.parametrize("family", [gaussian(1.0), poisson()], ids=lambda f: f.token)
@given(mu=st.floats(0.05, 1.0), shift=st.floats(-1, 1))
def test_rate_nonnegative_for_mu_below_one(family, mu, shift):
    x = np.array([[1.0], [0.5], [-0.7]])
    assert rate_function(GlmModel(x, family, mu), [0.1 + shift], [0.1]) >= -1e-12


def test_rate_derivatives(rng):
    x = rng.normal(size=(8, 2))
    law = EfcLaw.from_means(poisson(), rng.uniform(0.5, 3, 8))
    m = GlmModel(x, poisson(), 0.45)
    theta0 = target_theta0(x, poisson(), law.means).theta0
    np.testing.assert_allclose(central_gradient(lambda t: rate_function(m, t, theta0, law), theta0), 0, atol=1e-7)
    th = theta0 + rng.normal(scale=0.3, size=2)
    np.testing.assert_allclose(rate_gradient(m, th, theta0, law),
                               central_gradient(lambda t: rate_function(m, t, theta0, law), th), rtol=1e-6)
    fd = np.column_stack([central_gradient(lambda t: rate_gradient(m, t, theta0, law)[j], th) for j in range(2)])
    np.testing.assert_allclose(rate_hessian(m, th, theta0, law), fd, rtol=1e-5, atol=1e-8)


def test_geometry_examples():
    m = GlmModel(ones(3), gaussian(1.0), 1.0)
    g = glm_geometry(m, 1.0, well_specified_law(m, [0.0]))
    np.testing.assert_allclose(g.V, [[3.0]])
    # rank one: the second row carries a zero scale
    m2 = GlmModel(np.eye(2), gaussian(1.0), 1.0)
    g2 = glm_geometry(m2, 1.0, n_scales=np.array([2.0, 0.0]))
    np.testing.assert_allclose(g2.V, [[4.0, 0.0], [0.0, 0.0]])
    g3 = glm_geometry(m.with_mu(2.0), 1.0, well_specified_law(m, [0.0]))
    np.testing.assert_allclose(g3.V, 4 * g.V)


def test_identifiability_gaussian_constants(rng):
    x = rng.normal(size=(10, 2))
    m = GlmModel(x, gaussian(1.0), 0.5)
    law = well_specified_law(m, [0.0, 0.0])
    geom = glm_geometry(m, 1.0, law)
    rep = identifiability_constants(m, geom, [0.0, 0.0], rng.normal(size=(5, 2)), law)
    assert rep.a1 == pytest.approx(0.25, rel=1e-12)
    assert rep.a**2 == pytest.approx(0.5, rel=1e-12)
    assert 0 <= rep.s < 1 and rep.s == pytest.approx(1 - rep.a1**2 / rep.a**2)


def test_identifiability_at_target_uses_response_variance():
    law = EfcLaw.from_means(poisson(), [2.0, 2.0])
    m = GlmModel(ones(2), poisson(), 0.5)
    geom = glm_geometry(m, 0.5, law)
    rep = identifiability_constants(m, geom, [math.log(2.0)], [[math.log(2.0)]], law)
    v1 = float(geom.V1[0, 0])
    assert rep.a**2 == pytest.approx(0.5 * 2 * 2.0 / v1, rel=1e-12)


def test_glm_conditions_single_term():
    m = GlmModel(ones(1), gaussian(1.0), 1.0, None, -1, 1)
    geom = glm_geometry(m, 1.0, well_specified_law(m, [0.0]))
    rep = check_glm_conditions(m, geom, [0.0], 1.0)
    assert rep["direction_worst_ratio"] == pytest.approx(1.0)
    assert rep["lambda_star_max"] == pytest.approx(1.0)
    assert rep["corner_worst"] == pytest.approx(1.0)
    assert check_glm_conditions(m, geom, [0.0], 1.0, lambda1_star=1e12)["corner_ok"]

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import central_gradient, central_hessian
from qlc.efc import EfcLaw, bernoulli, gaussian, poisson
from qlc.glm import GlmModel, fit_qmle, quasi_loglik, rate_function, target_theta0
from qlc.single_index import (
    LinkFunction,
    SiModel,
    identity_link,
    link_from_token,
    si_fit,
    si_identifiability_matrix,
    si_loglik,
    si_rate_function,
    si_rate_gradient,
    si_rate_hessian,
    si_target_theta0,
    si_v_matrix,
    start_lattice,
)

LINKS = ["identity", "logistic", "tanh", "sin"]
square_link = LinkFunction("square", lambda u: u * u, lambda u: 2 * u, lambda u: 2 + 0 * u)


@pytest.mark.parametrize("token", LINKS)
def test_link_derivatives(token):
    link = link_from_token(token)
    u = np.linspace(-3, 3, 41)
    h = 1e-5
    np.testing.assert_allclose(link.g_dot(u), (link.g(u + h) - link.g(u - h)) / (2 * h), rtol=1e-5, atol=1e-9)
    np.testing.assert_allclose(link.g_ddot(u), (link.g_dot(u + h) - link.g_dot(u - h)) / (2 * h),
                               rtol=1e-5, atol=1e-9)


def test_unknown_link_rejected():
    with pytest.raises(ValueError):
        link_from_token("probit")


def test_loglik_reduces_to_glm(rng):
    x = rng.normal(size=(9, 2))
    y = rng.normal(size=9)
    si = SiModel(x, gaussian(1.0), identity_link(), 0.7, y)
    glm = GlmModel(x, gaussian(1.0), 0.7, y)
    pts = rng.normal(size=(4, 2))
    np.testing.assert_allclose(si_loglik(si, pts), quasi_loglik(glm, pts), rtol=1e-14)


def test_loglik_tanh_example():
    m = SiModel(np.ones((1, 1)), gaussian(1.0), link_from_token("tanh"), 1.0, [1.0])
    assert si_loglik(m, [0.0]) == 0.0


def test_target_tanh_example():
    x = np.array([[1.0], [-1.0]])
    f = np.tanh([0.5, -0.5])
    m = SiModel(x, gaussian(1.0), link_from_token("tanh"), 1.0, None, -3, 3, f)
    res = si_target_theta0(m)
    # brute-force grid of the deterministic objective
    grid = np.linspace(-3, 3, 60_001)
    obj = np.sum(f[None, :] * np.tanh(grid[:, None] * x[:, 0]) - 0.5 * np.tanh(grid[:, None] * x[:, 0]) ** 2, axis=1)
    assert abs(grid[np.argmax(obj)] - 0.5) <= grid[1] - grid[0]
    assert res.theta[0] == pytest.approx(0.5, abs=1e-8)


def test_target_identity_link_matches_glm(rng):
    x = rng.normal(size=(15, 2))
    means = rng.uniform(0.5, 3.0, 15)
    f = np.log(means)
    si = SiModel(x, poisson(), identity_link(), 1.0, None, -4, 4, f)
    np.testing.assert_allclose(si_target_theta0(si).theta, target_theta0(x, poisson(), means).theta0, atol=1e-8)


def test_target_well_specified_is_stationary(rng):
    x = rng.normal(size=(20, 2))
    theta_star = np.array([0.7, -0.4])
    link = link_from_token("logistic")
    m = SiModel(x, bernoulli(), link, 1.0, None, -2, 2, link.g(x @ theta_star))
    res = si_target_theta0(m, extra_starts=theta_star)
    np.testing.assert_allclose(res.theta, theta_star, atol=1e-7)


@pytest.mark.parametrize("seed", range(3))
def test_fit_identity_matches_glm(seed):
    r = np.random.default_rng(seed)
    x = r.normal(size=(30, 2))
    y = r.poisson(np.exp(x @ [0.3, 0.2])).astype(float)
    si = SiModel(x, poisson(), identity_link(), 1.0, y, -3, 3)
    glm = GlmModel(x, poisson(), 1.0, y, -3, 3)
    np.testing.assert_allclose(si_fit(si).theta, fit_qmle(glm).theta, atol=1e-8)


def test_fit_noiseless_recovers_truth(rng):
    x = rng.normal(size=(25, 2))
    theta_star = np.array([0.8, -0.5])
    link = link_from_token("tanh")
    y = np.tanh(x @ theta_star)
    res = si_fit(SiModel(x, gaussian(1.0), link, 1.0, y, -2, 2))
    np.testing.assert_allclose(res.theta, theta_star, atol=1e-8)


def test_fit_matches_brute_force_grid(rng):
    x = rng.uniform(-1, 1, size=(40, 1))
    link = link_from_token("sin")
    y = np.sin(1.2 * x[:, 0]) + 0.3 * rng.normal(size=40)
    m = SiModel(x, gaussian(1.0), link, 1.0, y, -2, 2)
    grid = np.linspace(-2, 2, 10_000)
    brute = grid[np.argmax(si_loglik(m, grid[:, None]))]
    assert abs(si_fit(m).theta[0] - brute) <= grid[1] - grid[0]


def test_even_link_flags_multimodality():
    x = np.array([[1.0], [-1.0]])
    m = SiModel(x, gaussian(1.0), square_link, 1.0, [1.0, 1.0], -2, 2)
    res = si_fit(m)
    assert res.multimodal
    thetas = sorted(mx["theta"][0] for mx in res.local_maxima)
    np.testing.assert_allclose(thetas, [-1.0, 1.0], atol=1e-6)
    assert res.theta[0] == pytest.approx(-1.0, abs=1e-6)  # tie broken lexicographically


def test_start_lattice_size():
    pts = start_lattice([-3, 0], [3, 6])
    assert pts.shape == (9, 2)
    np.testing.assert_allclose(pts[0], [-2, 1])


def test_v_matrix_examples(rng):
    x = rng.normal(size=(6, 2))
    m = SiModel(x, gaussian(1.0), identity_link(), 0.5, None, -1, 1, np.zeros(6))
    np.testing.assert_allclose(si_v_matrix(m, [0.2, 0.1], 1.0), 0.25 * x.T @ x, rtol=1e-13)
    t = SiModel(np.ones((3, 1)), gaussian(1.0), link_from_token("tanh"), 1.0, None, -20, 20, np.zeros(3))
    assert np.all(np.abs(si_v_matrix(t, [10.0], 1.0)) < 1e-7)
    scaled = t.replace(X=2 * t.X)
    np.testing.assert_allclose(si_v_matrix(scaled, [0.15], 1.0), 4 * si_v_matrix(t, [0.3], 1.0), rtol=1e-13)


def _instance(seed, link="tanh", family=None):
    # truth near the model so that the target is interior to the box
    r = np.random.default_rng(seed)
    x = r.normal(size=(10, 2))
    lk = link_from_token(link)
    f = lk.g(x @ r.uniform(-0.5, 0.5, 2)) + 0.1 * r.normal(size=10)
    return SiModel(x, family or gaussian(1.0), lk, 0.4, None, -2, 2, f)


@pytest.mark.parametrize("seed", range(5))
def test_rate_stationary_at_target(seed):
    m = _instance(seed)
    theta0 = si_target_theta0(m).theta
    assert si_rate_function(m, theta0, theta0) == 0.0
    g = central_gradient(lambda t: si_rate_function(m, t, theta0), theta0)
    assert np.linalg.norm(g) <= 1e-5


@pytest.mark.parametrize("seed, link, family", [
    (0, "tanh", gaussian(1.0)), (1, "logistic", poisson()), (2, "sin", bernoulli()), (3, "tanh", poisson()),
])
def test_rate_hessian_matches_finite_differences(seed, link, family):
    m = _instance(seed, link, family)
    r = np.random.default_rng(100 + seed)
    theta0, theta = r.uniform(-0.5, 0.5, 2), r.uniform(-0.5, 0.5, 2)
    np.testing.assert_allclose(si_rate_gradient(m, theta, theta0),
                               central_gradient(lambda t: si_rate_function(m, t, theta0), theta), rtol=1e-6, atol=1e-9)
    fd = central_hessian(lambda t: si_rate_gradient(m, t, theta0), theta)
    an = si_rate_hessian(m, theta, theta0)
    assert np.max(np.abs(an - fd)) <= 1e-4 * max(1.0, np.max(np.abs(fd)))


@given(mu=st.floats(0.05, 1.0), shift=st.floats(-1.5, 1.5))
def test_rate_identity_gaussian_closed_form(mu, shift):
    n = 5
    m = SiModel(np.ones((n, 1)), gaussian(1.0), identity_link(), mu, None, -3, 3, np.full(n, 0.2))
    expected = n * mu * (1 - mu) * shift**2 / 2
    assert si_rate_function(m, [0.2 + shift], [0.2]) == pytest.approx(expected, rel=1e-10, abs=1e-13)
    glm = GlmModel(np.ones((n, 1)), gaussian(1.0), mu)
    assert si_rate_function(m, [0.2 + shift], [0.2]) == pytest.approx(rate_function(glm, [0.2 + shift], [0.2]),
                                                                      rel=1e-10, abs=1e-13)


def test_gaussian_identifiability_matches_small_mu_limit(rng):
    x = rng.normal(size=(12, 2))
    link = link_from_token("tanh")
    f = rng.normal(size=12) * 0.5
    theta = np.array([0.3, -0.2])
    u = x @ theta
    direct = (x.T * (link.g_dot(u) ** 2 + (link.g(u) - f) * link.g_ddot(u))) @ x / 12
    m = SiModel(x, gaussian(1.0), link, 1.0, None, -2, 2, f)
    np.testing.assert_allclose(si_identifiability_matrix(m, theta), direct, rtol=1e-8, atol=1e-12)
    small = m.replace(mu=1e-7)
    theta0 = np.zeros(2)
    limit = si_rate_hessian(small, theta, theta0) / (1e-7 * 12)
    np.testing.assert_allclose(limit, direct, rtol=1e-5, atol=1e-7)


def test_domain_error_names_tilted_condition():
    m = SiModel(np.ones((2, 1)), poisson(), identity_link(), 1.0, None, -1e308, 1e308, np.zeros(2))
    with pytest.raises(ValueError, match="tilted canonical value"), np.errstate(all="ignore"):
        si_rate_function(m, [1e308], [-1e308])

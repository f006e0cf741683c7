import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from qlc.grids import GridDomain
from qlc.penalties import (
    BoundConstants,
    DivergenceError,
    PenaltySpec,
    bound_Q_main,
    bound_Q_quadratic,
    bound_Q_ranking,
    check_rho_eps,
    entropy_and_volume,
    entropy_number,
    h_eps,
    kappa,
    penalty,
    pstar,
)

# dyadic entropy sums with N(delta) <= (1 + 2/delta)^p, frozen once
Q1 = 2.230607106567147
Q2 = 4.46121421313522


def spec(kind="quadratic", p=1, **kw):
    return PenaltySpec(kind, np.eye(p), **kw)


@pytest.mark.parametrize("s, t, expected", [
    (spec(), 1.0, 1.0),
    (spec("logarithmic", delta2=1.0), 0.0, 1.0),
    (spec(delta1=1.0), 2.0, math.exp(-1.0)),
    (spec("logarithmic", p=2, delta2=0.5), 1.0, 2.0 ** -2.5),
])
def test_kappa_values(s, t, expected):
    assert kappa(s, t) == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("s", [spec(delta1=0.7), spec("logarithmic", p=2, delta2=0.3),
                               spec("hybrid", delta1=1.0, delta2=1.0, r_threshold=5.0)], ids=lambda s: s.kind)
def test_kappa_non_increasing_with_values_in_unit_interval(s):
    t = np.linspace(0, 50, 5001)
    k = kappa(s, t)
    assert np.all(np.diff(k) <= 1e-15) and np.all((k >= 0) & (k <= 1))
    assert np.all(kappa(s, t[t <= 6]) > 0)


def test_hybrid_rejects_upward_jump():
    with pytest.raises(ValueError, match="jumps up"):
        spec("hybrid", delta1=1.0, delta2=1.0, r_threshold=1.5)


@pytest.mark.parametrize("kw", [dict(rho=1.0), dict(rho=0.0), dict(eps=0.0), dict(delta1=-1.0),
                                dict(kind="hybrid"), dict(kind="cubic")])
def test_spec_validation(kw):
    with pytest.raises(ValueError):
        spec(**kw)


@pytest.mark.parametrize("delta1", [0.5, 1.0, math.pi])
def test_pstar_quadratic_weight_p1_closed_form(delta1):
    assert pstar(spec(delta1=delta1)) == pytest.approx(1 + 0.5 * math.sqrt(math.pi / delta1), abs=1e-8)


@pytest.mark.parametrize("delta2", [0.5, 1.0, 2.0])
def test_pstar_log_weight_closed_forms(delta2):
    assert pstar(spec("logarithmic", delta2=delta2)) == pytest.approx(1 / delta2, abs=1e-8)
    exact2 = 2 / (delta2 * (1 + delta2))
    val2 = pstar(spec("logarithmic", p=2, delta2=delta2))
    assert val2 == pytest.approx(exact2, abs=1e-8)
    assert val2 <= 2 / delta2


def test_pstar_quadratic_weight_p2_by_polar_integral():
    # independent route: integrate exp(-delta (|x| - 1)_+^2) over the plane and divide by pi
    delta = 0.8
    val, _ = integrate.dblquad(lambda r, a: r * math.exp(-delta * max(r - 1, 0) ** 2), 0, 2 * math.pi, 0, 60)
    assert pstar(spec(p=2, delta1=delta)) == pytest.approx(val / math.pi, rel=1e-9)


def test_pstar_divergent_weight_detected():
    with pytest.raises(DivergenceError):
        pstar(lambda t: (t + 1.0) ** -1.0, p=1)


@pytest.mark.parametrize("s, theta, expected", [
    (spec(), [0.0], 0.0),
    (spec(rho=0.5, delta1=1.0, eps=1.0), [2.0], 8.0),
    (spec("logarithmic", rho=0.5, delta2=1.0), [1.0], 4 * math.log(3.0)),
    (spec("logarithmic", rho=0.5, delta2=1.0, kappa_shift=0.0), [1.0], 4 * math.log(2.0)),
])
def test_penalty_values(s, theta, expected):
    assert penalty(s, theta) == pytest.approx(expected, rel=1e-14, abs=1e-15)


@given(rho=st.floats(0.05, 0.95), eps=st.floats(0.1, 5), delta1=st.floats(0.1, 5),
       x=st.lists(st.floats(-5, 5), min_size=2, max_size=2))
def test_quadratic_penalty_identity(rho, eps, delta1, x):
    v = np.array([[2.0, 0.3], [0.3, 0.5]])
    s = PenaltySpec("quadratic", v, theta0=[0.1, -0.2], rho=rho, eps=eps, delta1=delta1)
    d = np.array(x) - s.theta0
    assert penalty(s, x) == pytest.approx(delta1 * (d @ v @ d) / (rho * eps**2), rel=1e-12, abs=1e-12)


def test_entropy_and_volume():
    om1, q1 = entropy_and_volume(1)
    om2, q2 = entropy_and_volume(2)
    assert om1 == pytest.approx(2.0) and om2 == pytest.approx(math.pi)
    assert q1 == pytest.approx(Q1, rel=1e-14) and q2 == pytest.approx(Q2, rel=1e-14)
    with pytest.raises(ValueError):
        entropy_number(0)


def test_bound_formulas():
    assert bound_Q_main(0.5, 1.0, 1, 1.0, 0.0) == pytest.approx(1 + 0.5 * Q1)
    assert bound_Q_main(1e-9, 1.0, 1, 1.0, 0.0) == pytest.approx(Q1, rel=1e-8)
    assert bound_Q_main(0.3, 1.0, 2, math.e, 0.0) - bound_Q_main(0.3, 1.0, 2, 1.0, 0.0) == pytest.approx(2.0)
    assert bound_Q_ranking(0.5, 1.0, 1, 1.5) == pytest.approx(1 + 0.5 * Q1 + math.log(1.5))
    assert bound_Q_ranking(0.4, 2.0, 1, 2.0) - bound_Q_ranking(0.4, 2.0, 1, 1.0) == pytest.approx(math.log(2))
    expected = 1 + 0.5 * Q1 + math.log(1 + 0.5 * math.sqrt(math.pi / 0.5))
    assert bound_Q_quadratic(0.5, 0.0, 1.0, 1.0, 1) == pytest.approx(expected, rel=1e-14)


@given(a1=st.floats(0.1, 0.9))
def test_quadratic_bound_decreases_in_a1(a1):
    a = 1.0
    lo = bound_Q_quadratic(0.5, 1 - a1**2, a, a1, 2)
    hi = bound_Q_quadratic(0.5, 1 - (a1 + 0.05) ** 2, a, a1 + 0.05, 2)
    assert hi < lo


def test_quadratic_bound_rejects_inconsistent_s():
    with pytest.raises(ValueError):
        bound_Q_quadratic(0.5, 0.3, 1.0, 1.0, 1)
    with pytest.raises(ValueError):
        bound_Q_quadratic(0.5, 0.0, 1.0, 2.0, 1)


@given(rho=st.floats(0.01, 0.99))
def test_bounds_increase_in_entropy_terms(rho):
    assert bound_Q_main(rho, 1.0, 1, 1.0, 0.5) > bound_Q_main(rho, 1.0, 1, 1.0, 0.4)
    assert bound_Q_main(rho, 1.0, 2, 1.0, 0.0) > bound_Q_main(rho, 1.0, 1, 1.0, 0.0)


@pytest.mark.parametrize("rho, eps, lam, ok, margin", [
    (0.5, 1.0, 1.0, True, 0.0), (0.9, 1.0, 1.0, False, -8.0), (0.3, 0.0, 0.0, True, 0.0),
])
def test_check_rho_eps(rho, eps, lam, ok, margin):
    got, m = check_rho_eps(rho, eps, lam)
    assert got is ok and m == pytest.approx(margin)


def test_bound_constants_recompute():
    for bc in (BoundConstants.main(0.3, 0.7, 2, 1.2, 0.4), BoundConstants.ranking(0.6, 1.1, 1, 2.5),
               BoundConstants.quadratic(0.5, 0.8, 0.4, 1)):
        assert bc.recompute() == pytest.approx(bc.log_Q, rel=1e-15)
    assert BoundConstants.quadratic(0.5, 0.8, 0.8, 1).s == 0.0


def test_h_eps_constant_field_closed_form():
    g = GridDomain((-2.0,), (3.0,), (501,))
    v, c, rho, eps = 2.0, 0.7, 0.4, 0.5
    val = h_eps(lambda pts: np.full(pts.shape[0], c), v * np.eye(1), g, eps, rho)
    expected = math.log(math.sqrt(v) * 5.0 / (2.0 * eps)) - rho * c
    assert val == pytest.approx(expected, rel=1e-12)


def test_h_eps_monotone_in_penalty():
    g = GridDomain((-3.0, -3.0), (3.0, 3.0), (41, 41))
    pen = lambda pts: np.sum(pts**2, axis=1)  # noqa: E731
    base = h_eps(pen, np.eye(2), g, 0.5, 0.5)
    assert h_eps(lambda pts: 2 * pen(pts), np.eye(2), g, 0.5, 0.5) <= base


def test_h_eps_quadratic_penalty_matches_pstar_route():
    # with pen = -log(kappa)/rho the smoothed integral approaches log Pstar for p = 1
    s = spec(rho=0.5, eps=1.0, delta1=1.0)
    g = GridDomain((-30.0,), (30.0,), (6001,))
    val = h_eps(lambda pts: penalty(s, pts), np.eye(1), g, s.eps, s.rho)
    assert abs(val - math.log(pstar(s))) <= 0.02 * abs(math.log(pstar(s)))

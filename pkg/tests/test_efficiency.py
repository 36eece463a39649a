import math

import numpy as np
import pytest

from powergame import efficiency
from powergame.efficiency import (
    EfficiencySpec,
    Family,
    beta_star,
    eval_f,
    existence_check,
    gamma_star,
    gamma_star_array,
    hamiltonian,
    hamiltonian_array,
    inflection_point,
    max_curvature,
    reward_rate,
    shutdown_curve,
    shutdown_threshold,
    stationarity_gap,
    stationary_gamma,
    theta_max,
)
from powergame.utils import ConfigError, DomainError


@pytest.mark.parametrize("a", [0.5, 1.0, 2.0])
def test_beta_star_exponential_is_a(a):
    assert abs(beta_star(EfficiencySpec(Family.EXPONENTIAL, a=a)) - a) < 1e-10


@pytest.mark.parametrize("m", [2, 5, 10, 50])
def test_beta_star_sigmoid_solves_stationarity(m):
    spec = EfficiencySpec(Family.SIGMOID, m=m)
    b = beta_star(spec)
    assert b > inflection_point(spec)
    assert abs(b * eval_f(spec, b, 1) - eval_f(spec, b)) < 1e-10


def test_beta_star_sigmoid_m2_value():
    # (1 - e^-x)^2 : 2x e^-x = 1 - e^-x
    b = beta_star(EfficiencySpec(Family.SIGMOID, m=2))
    assert 2 * b * math.exp(-b) == pytest.approx(1 - math.exp(-b), abs=1e-12)
    assert b == pytest.approx(1.2564, abs=1e-4)


def test_eval_f_values(exp1):
    assert eval_f(exp1, 1.0) == pytest.approx(math.exp(-1))
    assert eval_f(exp1, 0.0) == 0.0
    assert eval_f(exp1, 0.0, 1) == 0.0
    assert eval_f(exp1, 0.0, 2) == 0.0
    vals = eval_f(exp1, np.array([0.5, 1.0, 2.0]))
    assert vals.shape == (3,)


def test_eval_f_rejects_negative_sinr(exp1):
    with pytest.raises(DomainError):
        eval_f(exp1, -0.1)


def test_spec_validation():
    with pytest.raises(ConfigError, match="efficiency.m"):
        EfficiencySpec(Family.SIGMOID, m=1)
    with pytest.raises(ConfigError, match="efficiency.a"):
        EfficiencySpec(Family.EXPONENTIAL, a=0.0)
    with pytest.raises(ConfigError, match="efficiency.family"):
        EfficiencySpec("logistic")
    assert EfficiencySpec("sigmoid", m=3).family is Family.SIGMOID


def test_thresholds_exponential_closed_forms(exp1):
    # sup f/x^2 at x = a/2: 4 e^-2
    off = shutdown_threshold(exp1)
    assert off.value == pytest.approx(4 * math.exp(-2), rel=1e-9)
    assert off.at == pytest.approx(0.5, rel=1e-6)
    # sup g at 1/x = 2 + sqrt(2)
    u = 2 + math.sqrt(2)
    top = theta_max(exp1)
    assert top.value == pytest.approx(math.exp(-u) * (u - 1) * u**2, rel=1e-9)
    assert top.at == pytest.approx(1 / u, rel=1e-6)
    # max f'' at 1/x = 3 + sqrt(3)
    u = 3 + math.sqrt(3)
    curv = max_curvature(exp1)
    assert curv.value == pytest.approx(u**3 * (u - 2) * math.exp(-u), rel=1e-9)
    assert off.value <= top.value


@pytest.mark.parametrize("spec", [
    EfficiencySpec(Family.EXPONENTIAL, a=1.0),
    EfficiencySpec(Family.EXPONENTIAL, a=0.3),
    EfficiencySpec(Family.SIGMOID, m=2),
    EfficiencySpec(Family.SIGMOID, m=10),
])
def test_threshold_ordering(spec):
    off = shutdown_threshold(spec).value
    assert off <= theta_max(spec).value
    assert off <= max_curvature(spec).value / 2


def test_gamma_star_at_zero_is_beta_star(exp1, sig10):
    assert gamma_star(exp1, 0.0) == beta_star(exp1)
    assert gamma_star(sig10, 0.0) == beta_star(sig10)


def test_gamma_star_shutdown(exp1):
    off = shutdown_threshold(exp1)
    assert gamma_star(exp1, off.value) == 0.0
    assert gamma_star(exp1, theta_max(exp1).value) == 0.0
    below = gamma_star(exp1, 0.999 * off.value)
    assert off.at <= below < beta_star(exp1)
    with pytest.raises(DomainError):
        gamma_star(exp1, -1.0)


def test_gamma_star_beats_switching_off(exp1):
    # interior optimum value R c f(g)/g - g v/c >= 0 whenever gamma* > 0
    for theta in np.linspace(0.0, 0.54, 30):
        g = gamma_star(exp1, theta)
        if g > 0:
            assert eval_f(exp1, g) / g - g * theta >= -1e-12


def test_gamma_star_array_matches_scalar(exp1, sig10):
    for spec in (exp1, sig10):
        off = shutdown_threshold(spec).value
        thetas = np.concatenate([np.linspace(0, 1.2 * off, 97), [0.0, off]])
        fast = gamma_star_array(spec, thetas)
        slow = np.array([gamma_star(spec, float(t)) for t in thetas])
        np.testing.assert_allclose(fast, slow, rtol=1e-9, atol=1e-12)
    assert gamma_star_array(exp1, 0.0).shape == ()


def test_stationary_gamma_solves_gap(sig10):
    top = theta_max(sig10).value
    for theta in np.linspace(0.01, 0.99 * top, 10):
        g = stationary_gamma(sig10, float(theta))
        assert stationarity_gap(sig10, g) == pytest.approx(theta, rel=1e-8, abs=1e-12)
    with pytest.raises(DomainError):
        stationary_gamma(sig10, top)


def test_hamiltonian_zero_price_is_static_optimum(exp1):
    c, rate = 2.0, 3.0
    h, p = hamiltonian(exp1, c, 0.0, rate, p_max=10.0)
    assert p == pytest.approx(beta_star(exp1) / c)
    assert h == pytest.approx(rate * c * math.exp(-1))


def test_hamiltonian_matches_brute_force(exp1, sig10):
    rng = np.random.default_rng(7)
    grid = np.linspace(0.0, 3.0, 30001)
    for spec in (exp1, sig10):
        for _ in range(20):
            c = rng.uniform(0.2, 3.0)
            v_e = rng.uniform(0.0, 2.0)
            h, p = hamiltonian(spec, c, v_e, 1.0, p_max=3.0)
            obj = reward_rate(spec, 1.0, c, grid) - grid * v_e
            assert h >= obj.max() - 1e-9
            assert h == pytest.approx(float(reward_rate(spec, 1.0, c, p)) - p * v_e, abs=1e-12)
            assert h >= 0.0


def test_hamiltonian_cap(exp1):
    # optimum beta*/c = 1 above the cap; the capped power still pays off
    h, p = hamiltonian(exp1, 1.0, 0.0, 1.0, p_max=0.8)
    assert p == 0.8
    assert h == pytest.approx(math.exp(-1 / 0.8) / 0.8)
    # a price high enough that the capped power loses money
    h, p = hamiltonian(exp1, 1.0, 0.5, 1.0, p_max=0.3)
    assert p == 0.0
    assert h == 0.0


def test_hamiltonian_array_invalid_nodes(exp1):
    h, p = hamiltonian_array(exp1, np.array([0.0, 1.0]), np.array([0.0, -1.0]), 1.0, 5.0)
    assert h[0] == 0.0 and p[0] == 0.0
    # negative shadow price is clamped to 0
    assert p[1] == pytest.approx(beta_star(exp1))
    h, p = hamiltonian_array(exp1, np.array([1.0]), np.array([0.0]), 0.0, 5.0)
    assert h[0] == 0.0 and p[0] == 0.0
    with pytest.raises(DomainError):
        hamiltonian(exp1, 0.0, 0.0, 1.0, 1.0)


@pytest.mark.parametrize("spec", [
    EfficiencySpec(Family.EXPONENTIAL, a=1.0),
    EfficiencySpec(Family.SIGMOID, m=10),
])
def test_shutdown_curve_is_nonincreasing(spec):
    v_e = np.linspace(0.0, 5.0, 1000)
    p = shutdown_curve(spec, 1.0, 1.0, 1e6, v_e)
    assert p[0] == pytest.approx(beta_star(spec))
    assert np.all(np.diff(p) <= 1e-12)
    assert p[-1] == 0.0


def test_existence_check_exponential_closed_form(exp1):
    top = theta_max(exp1).value
    rep = existence_check(exp1, np.linspace(0.05, 0.95 * top, 25))
    np.testing.assert_allclose(rep.margin, rep.closed_form_margin, rtol=1e-6, atol=1e-9)
    assert rep.min_margin == pytest.approx(rep.margin.min())
    assert rep.gamma.shape == (25,)


def test_existence_check_sigmoid_has_no_closed_form(sig10):
    rep = existence_check(sig10, [0.0, 0.1])
    assert np.all(np.isnan(rep.closed_form_margin))
    assert np.all(np.isfinite(rep.margin))


def test_sigmoid_m2_sup_is_only_approached_at_zero():
    sig2 = EfficiencySpec(Family.SIGMOID, m=2)
    for point in (theta_max(sig2), shutdown_threshold(sig2)):
        assert point.value == 1.0
        assert point.at == 0.0
        assert not point.attained
    curv = max_curvature(sig2)
    assert curv.value == 2.0 and not curv.attained
    assert shutdown_threshold(sig2).value <= theta_max(sig2).value
    g = gamma_star(sig2, 0.999)
    assert g > 0
    assert g == stationary_gamma(sig2, 0.999)
    assert gamma_star(sig2, 1.0) == 0.0


def test_interior_thresholds_are_attained(exp1, sig10):
    for spec in (exp1, sig10):
        assert theta_max(spec).attained
        assert shutdown_threshold(spec).attained
        assert shutdown_threshold(spec).at > 0


@pytest.mark.parametrize("spec, atol", [
    (EfficiencySpec(Family.EXPONENTIAL, a=1.0), 1e-9),
    (EfficiencySpec(Family.SIGMOID, m=10), 1e-9),
    # steep leading edge; absolute slack for round-off in the second difference
    (EfficiencySpec(Family.SIGMOID, m=100), 1e-8),
])
def test_derivatives_match_central_differences(spec, atol):
    x = np.geomspace(0.01, 100.0, 400)
    h1, h2 = 1e-5 * x, 1e-4 * x
    d1 = (eval_f(spec, x + h1) - eval_f(spec, x - h1)) / (2 * h1)
    d2 = (eval_f(spec, x + h2) - 2 * eval_f(spec, x) + eval_f(spec, x - h2)) / h2**2
    np.testing.assert_allclose(d1, eval_f(spec, x, derivative=1), rtol=1e-5, atol=atol)
    np.testing.assert_allclose(d2, eval_f(spec, x, derivative=2), rtol=1e-5, atol=atol)


def test_existence_margin_at_zero_price(exp1):
    # gamma0 = a = 1 and f''(1) = -e^{-1}
    rep = existence_check(exp1, [0.0])
    assert rep.gamma[0] == pytest.approx(1.0)
    assert rep.margin[0] == pytest.approx(math.exp(-1), rel=1e-9)
    assert rep.flagged == ()


def test_existence_check_flags_small_margins(exp1, monkeypatch):
    thetas = [0.0, 0.1]
    margins = existence_check(exp1, thetas).margin
    assert margins[0] != margins[1]
    monkeypatch.setattr(efficiency, "EXISTENCE_FLAG", float(margins.max()))
    rep = existence_check(exp1, thetas)
    assert rep.flagged == (thetas[int(np.argmin(margins))],)

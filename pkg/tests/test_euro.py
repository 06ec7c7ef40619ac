from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cdeo_lab.euro import (DivergenceError, PayoffMeasure, boundary_proxy, driftless_transform_check,
                           euro_derivs, price_function_payoff, price_measure_boundary,
                           price_measure_payoff)
from cdeo_lab.kernel import DomainError, GaussParams, MarketParams, bs_put_value, norm_cdf, norm_pdf
from cdeo_lab.payoff import EuropeanPayoff

K = math.log(100.0)


def exp_pair_payoff():
    return EuropeanPayoff(lambda y: 3 * np.exp(y / 2) + np.exp(1.5 * y))


def tent_measure(K, lo, hi, peak=1.0, n=41, L=8.0):
    knots = np.linspace(lo, hi, n)
    dens = peak * (1 - np.abs(knots - 0.5 * (lo + hi)) / (0.5 * (hi - lo)))
    return PayoffMeasure.from_density(K, knots, dens, L=L)


# ------------------------------------------------------- function payoffs

def test_exp_pair_value_function():
    m = MarketParams(0.0, math.sqrt(2.0), 1.0, 0.0)
    f = exp_pair_payoff()
    th, xx = np.meshgrid(np.linspace(0, 2, 9), np.linspace(-2, 2, 9))
    got = price_function_payoff(m, f, th, xx)
    ref = 3 * np.exp(xx / 2 - th / 4) + np.exp(1.5 * xx + 0.75 * th)
    assert np.max(np.abs(got - ref)) <= 1e-8


def test_put_matches_black_scholes(put_market):
    m = put_market
    f = EuropeanPayoff(lambda y: np.maximum(100.0 - np.exp(y), 0.0), breakpoints=(K,))
    for th in (0.05, 0.25, 0.5, 2.0):
        xs = np.linspace(K - 1.5, K + 1.5, 13)
        assert np.max(np.abs(price_function_payoff(m, f, th, xs) - bs_put_value(m, K, th, xs))) <= 1e-8


def test_unit_indicator_values():
    m = MarketParams(1.0, math.sqrt(2.0), 1.0, 0.0)
    f = EuropeanPayoff(lambda y: ((y >= 0) & (y <= 1)).astype(float), breakpoints=(0.0, 1.0))
    for th in (0.1, 0.5, 1.0):
        for x in np.linspace(-1, 2, 7):
            ref = math.exp(-th) * (norm_cdf((1 - x) / math.sqrt(2 * th)) - norm_cdf(-x / math.sqrt(2 * th)))
            assert price_function_payoff(m, f, th, x) == pytest.approx(ref, abs=1e-9)


def test_theta_zero_returns_payoff():
    m = MarketParams(0.06, 0.4, 0.5, 0.0)
    f = exp_pair_payoff()
    assert price_function_payoff(m, f, 0.0, 0.3) == pytest.approx(f(0.3), rel=1e-15)


def test_negative_theta_rejected():
    m = MarketParams(0.06, 0.4, 0.5, 0.0)
    with pytest.raises(DomainError):
        price_function_payoff(m, exp_pair_payoff(), -0.1, 0.0)


def test_divergent_payoff_raises():
    m = MarketParams(0.0, 1.0, 1.0, 0.0)
    f = EuropeanPayoff(lambda y: np.exp(np.minimum(y * y, 700.0)))
    with pytest.raises(DivergenceError):
        price_function_payoff(m, f, 1.0, 0.0)


# -------------------------------------------------------- measure payoffs

def test_single_atom(put_market):
    m = put_market
    y0, w = K - 0.4, 2.5
    mu = PayoffMeasure.from_atoms(K, [y0], [w])
    anchor = m.anchor()
    for th, x in [(0.1, K - 0.2), (0.5, K + 0.1), (0.3, K - 1.0)]:
        p1 = GaussParams(x + m.r_hat * th, m.sigma2 * th)
        ref = w * math.exp(-m.r * th) * norm_pdf(p1, y0) / norm_pdf(anchor, y0)
        assert price_measure_payoff(m, mu, th, x) == pytest.approx(ref, rel=1e-12)


def test_anchor_value_is_discounted_mass(put_market):
    m = put_market
    mu = tent_measure(K, K - 3, K, peak=2.0)
    mu = PayoffMeasure(K, [K - 1.0, K - 5.0], [0.7, 0.2], mu.knots, mu.density)
    assert price_measure_payoff(m, mu, m.T, m.x0) == pytest.approx(math.exp(-m.r * m.T) * mu.total_mass(),
                                                                   rel=1e-10)


def test_density_against_function_payoff(put_market):
    # a density d prices like the function payoff d / phi_anchor
    m = put_market
    anchor = m.anchor()
    knots = np.linspace(K - 2.0, K, 9)
    dens = np.interp(knots, [K - 2.0, K - 1.0, K], [0.0, 30.0, 0.0])
    mu = PayoffMeasure.from_density(K, knots, dens)
    f = EuropeanPayoff(lambda y: np.interp(y, knots, dens, left=0, right=0) / norm_pdf(anchor, y),
                       breakpoints=tuple(knots))
    for th, x in [(0.2, K - 0.5), (0.5, m.x0), (0.4, K - 1.5)]:
        a = price_measure_payoff(m, mu, th, x)
        b = price_function_payoff(m, f, th, x)
        assert abs(a - b) <= 1e-8 * (1 + abs(b))


def test_boundary_zero_above_knot(put_market):
    mu = tent_measure(K, K - 2, K)
    assert abs(price_measure_boundary(put_market, mu, K + 0.2)) <= 1e-8


def test_boundary_density_limit(put_market):
    m = put_market
    mu = tent_measure(K, K - 2, K, peak=3.0)
    # points strictly inside density cells; at the knots the limit converges only like sqrt(theta)
    for x in (K - 1.512, K - 0.987, K - 0.321):
        ref = float(mu.density_at(x)) / norm_pdf(m.anchor(), x)
        assert price_measure_boundary(m, mu, x) == pytest.approx(ref, rel=1e-6)


def test_boundary_atom_at_knot_diverges(put_market):
    mu = PayoffMeasure.from_atoms(K, [K], [1.0])
    bp = boundary_proxy(put_market, mu, K)
    assert bp.diverging and math.isinf(bp.value)
    assert np.all(np.diff(bp.history[-5:]) > 0)


# ------------------------------------------------------------ derivatives

def _mixed_measure():
    mu = tent_measure(K, K - 3, K, peak=5.0, n=61)
    return PayoffMeasure(K, [K - 0.6, K - 2.2], [1.5, 0.8], mu.knots, mu.density)


def test_derivs_vs_finite_differences(put_market):
    m = put_market
    mu = _mixed_measure()
    h = 1e-5
    for th in (0.1, 0.3, 0.5):
        for x in (K - 1.0, K - 0.3, K + 0.1):
            d = euro_derivs(m, mu, th, x)
            v = lambda t, z: price_measure_payoff(m, mu, t, z, tol=1e-13)
            D1 = (v(th + h, x) - v(th - h, x)) / (2 * h)
            D2 = (v(th, x + h) - v(th, x - h)) / (2 * h)
            # D22 against a central difference of D2; a second difference of v would be
            # dominated by rounding (eps |v| / h^2)
            D22 = (euro_derivs(m, mu, th, x + h).D2 - euro_derivs(m, mu, th, x - h).D2) / (2 * h)
            assert d.D1 == pytest.approx(D1, rel=1e-5, abs=1e-6)
            assert d.D2 == pytest.approx(D2, rel=1e-5, abs=1e-6)
            assert d.D22 == pytest.approx(D22, rel=1e-5, abs=1e-6)


def test_kolmogorov_residual(put_market):
    m = put_market
    mu = _mixed_measure()
    for th in np.linspace(0.05, 0.6, 6):
        xs = np.linspace(K - 2, K + 0.5, 11)
        d = euro_derivs(m, mu, th, xs)
        res = d.D1 - (0.5 * m.sigma2 * d.D22 + m.r_hat * d.D2 - m.r * d.v)
        assert np.all(np.abs(res) <= 1e-6 * (1 + np.abs(d.v)))


def test_single_atom_derivative_sign(put_market):
    m = put_market
    y0 = K - 0.5
    mu = PayoffMeasure.from_atoms(K, [y0], [1.0])
    th = 0.2
    for x in (K - 1.2, K - 0.3, K + 0.2):
        d = euro_derivs(m, mu, th, x)
        assert np.sign(d.D2) == np.sign(y0 - x - m.r_hat * th)


def test_derivs_domain(put_market):
    with pytest.raises(DomainError):
        euro_derivs(put_market, _mixed_measure(), 0.0, K)


# -------------------------------------------------- driftless transformation

def test_transform_zero_rate():
    m = MarketParams(0.0, 0.4, 0.5, K + 0.1)
    mu = _mixed_measure()
    for th, x in [(0.1, K - 0.5), (0.3, K), (0.45, K + 0.1)]:
        assert driftless_transform_check(m, mu, th, x) <= 1e-14 * (1 + price_measure_payoff(m, mu, th, x))


def test_transform_put_parameters(put_market):
    m = put_market
    mu = _mixed_measure()
    rng = np.random.default_rng(7)
    for th, x in zip(rng.uniform(0.02, 0.49, 20), rng.uniform(K - 2, K + 0.3, 20)):
        v = price_measure_payoff(m, mu, th, x)
        assert driftless_transform_check(m, mu, th, x) <= 1e-10 * (1 + abs(v))


def test_transform_atoms_only(put_market):
    m = put_market
    mu = PayoffMeasure.from_atoms(K, [K - 0.2, K - 1.3, K - 4.0], [1.0, 2.0, 0.5])
    for th, x in [(0.1, K - 0.5), (0.3, K), (0.45, K + 0.1)]:
        v = price_measure_payoff(m, mu, th, x)
        assert driftless_transform_check(m, mu, th, x) <= 1e-12 * (1 + abs(v))


# -------------------------------------------------------------- invariants

@given(st.floats(0.0, 3.0), st.floats(0.0, 3.0), st.floats(0.02, 0.6), st.floats(K - 2.0, K + 0.5))
def test_linearity(a, b, th, x):
    m = MarketParams(0.06, 0.4, 0.5, K + 0.1)
    mu1 = tent_measure(K, K - 3, K - 0.5, peak=2.0)
    mu2 = PayoffMeasure.from_atoms(K, [K - 0.3, K - 1.1], [1.0, 0.4])
    mix = PayoffMeasure(K, mu2.atoms_y, b * mu2.atoms_w, mu1.knots, a * mu1.density)
    lhs = price_measure_payoff(m, mix, th, x)
    rhs = a * price_measure_payoff(m, mu1, th, x) + b * price_measure_payoff(m, mu2, th, x)
    assert abs(lhs - rhs) <= 1e-12 * (1 + abs(rhs))


@given(st.floats(0.01, 0.6), st.floats(K - 4.0, K + 1.0))
def test_positivity(th, x):
    m = MarketParams(0.06, 0.4, 0.5, K + 0.1)
    assert price_measure_payoff(m, _mixed_measure(), th, x) >= 0.0


def test_martingale_consistency(put_market):
    m = put_market
    mu = _mixed_measure()
    th, t, x = 0.5, 0.2, K - 0.2
    # e^{-rt} E v(th - t, x + r^ t + s W_t) by Gauss-Hermite in the increment
    z, w = np.polynomial.hermite_e.hermegauss(80)
    xs = x + m.r_hat * t + m.sigma * math.sqrt(t) * z
    inner = price_measure_payoff(m, mu, th - t, xs, tol=1e-12)
    lhs = math.exp(-m.r * t) * np.sum(w * inner) / math.sqrt(2 * math.pi)
    assert lhs == pytest.approx(price_measure_payoff(m, mu, th, x), abs=1e-6)


# --------------------------------------------------------------- the type

def test_csv_roundtrip_bit_exact(tmp_path):
    mu = _mixed_measure()
    mu = PayoffMeasure(K, mu.atoms_y + 1e-13, mu.atoms_w / 3.0, mu.knots, mu.density / 7.0, L=6.5)
    path = mu.to_csv(tmp_path / "mu.csv", meta={"config_hash": "abc"})
    back = PayoffMeasure.from_csv(path)
    assert back.K == mu.K and back.L == mu.L
    for a in ("atoms_y", "atoms_w", "knots", "density"):
        assert np.array_equal(getattr(back, a), getattr(mu, a))


def test_measure_invariants():
    with pytest.raises(ValueError):
        PayoffMeasure.from_atoms(K, [K - 1], [-0.1])
    with pytest.raises(ValueError):
        PayoffMeasure.from_density(K, [K - 1, K - 2], [1.0, 1.0])
    assert not PayoffMeasure.from_atoms(K, [K + 1], [1.0]).on_half_line
    assert _mixed_measure().on_half_line

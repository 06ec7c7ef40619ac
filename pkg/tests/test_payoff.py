from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cdeo_lab.payoff import (EuropeanPayoff, concavity_c, make_custom, make_put,
                             payoff_from_expression, validate_payoff, validation_grid)

K = math.log(100.0)


def test_put_knot_and_half_strike():
    g = make_put(K)
    assert g(K) == 0.0
    assert g(K - math.log(2)) == pytest.approx(50.0, rel=1e-14)
    assert g(K + 0.5) == 0.0


def test_put_growth_condition():
    g = make_put(K)
    gamma = 2 * 0.06 / 0.16
    assert math.exp(gamma * (K - 40)) * g(K - 40) < 1e-9


def test_put_concavity_is_constant():
    g = make_put(K)
    xs = np.linspace(K - 6, K - 1e-3, 200)
    assert np.allclose(concavity_c(g, 0.06, 0.4, xs), -75.0, rtol=1e-12, atol=1e-12)


def test_put_concavity_zero_rate():
    g = make_put(K)
    xs = np.linspace(K - 6, K - 1e-3, 50)
    assert np.allclose(concavity_c(g, 0.0, 0.4, xs), 0.0, atol=1e-12)


def test_concavity_finite_difference_agreement():
    # oracle: central differences at step 1e-5 in 40-digit arithmetic, so only truncation error remains
    import mpmath as mp
    mp.mp.dps = 40
    h = mp.mpf("1e-5")
    phi = lambda z: mp.e ** mp.mpf(K) - mp.e ** z
    gamma = mp.mpf(2) * mp.mpf("0.06") / mp.mpf("0.16")
    g = make_put(K)
    for x in np.linspace(K - 3, K - 0.01, 60):
        z = mp.mpf(x)
        d1 = (phi(z + h) - phi(z - h)) / (2 * h)
        d2 = (phi(z + h) - 2 * phi(z) + phi(z - h)) / h ** 2
        ref = d2 - gamma * (phi(z) - d1) - d1
        assert abs(concavity_c(g, 0.06, 0.4, x) - float(ref)) <= 1e-6


def test_concavity_custom_payoff_double_precision():
    # custom payoffs take second differences in double precision: rounding noise is
    # about eps * e^K / h^2, i.e. a few 1e-4 here
    g = make_put(K)
    fd = make_custom(K, lambda x: 100.0 - np.exp(x))
    xs = np.linspace(K - 3, K - 0.01, 100)
    diff = np.abs(concavity_c(fd, 0.06, 0.4, xs) - concavity_c(g, 0.06, 0.4, xs))
    assert diff.max() <= 1e-3


def test_concavity_above_knot_is_nan():
    g = make_put(K)
    assert math.isnan(concavity_c(g, 0.06, 0.4, K + 0.1))


def test_validate_put_passes():
    rep = validate_payoff(make_put(K), 0.06, 0.4)
    assert rep.ok, rep.notes
    assert rep.max_c == pytest.approx(-75.0)


def test_validate_shifted_put_fails_knot():
    g = make_custom(K, lambda x: 101.0 - np.exp(x))
    rep = validate_payoff(g, 0.06, 0.4)
    assert not rep.knot_zero and not rep.ok


def test_validate_cubed_put_recorded():
    g = payoff_from_expression(K, "(exp(K) - exp(x))**3")
    rep = validate_payoff(g, 0.06, 0.4)
    assert rep.positive and rep.knot_zero and rep.growth
    assert isinstance(rep.concave, bool) and np.isfinite(rep.max_c)


def test_validate_growth_fails_for_exploding_tail():
    g = make_custom(K, lambda x: np.exp(-2.0 * (x - K)) - 1.0)
    rep = validate_payoff(g, 0.06, 0.4)
    assert not rep.growth


def test_validation_grid_shape():
    x = validation_grid(K)
    assert x.max() == pytest.approx(K - 1e-3)
    assert x.min() == pytest.approx(K - 40)
    assert np.all(np.diff(x) > 0)


def test_expression_payoff_matches_put():
    g = payoff_from_expression(K, "exp(K) - exp(x)")
    xs = np.linspace(K - 5, K + 1, 31)
    assert np.allclose(g(xs), make_put(K)(xs), atol=1e-12)


def test_expression_rejects_unknown_symbols():
    with pytest.raises(ValueError):
        payoff_from_expression(K, "exp(K) - exp(y)")


@given(st.floats(-50, 50))
def test_validated_payoff_nonnegative_and_zero_above(x):
    g = make_put(K)
    v = g(x)
    assert v >= 0.0
    if x >= K:
        assert v == 0.0


def test_derivatives_put():
    g = make_put(K)
    xs = np.linspace(K - 2, K - 0.01, 5)
    assert np.allclose(g.d1(xs), -np.exp(xs))
    assert np.allclose(g.d2(xs), -np.exp(xs))
    assert g.d1(K + 1) == 0.0


def test_european_payoff_callable():
    f = EuropeanPayoff(lambda y: np.maximum(1.0 - y, 0.0), breakpoints=(1.0,))
    assert f(0.0) == 1.0 and f(2.0) == 0.0

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special

from liouville.special import EULER_GAMMA, exp1


def e1_quad(x):
    v, _ = integrate.quad(lambda t: math.exp(-t) / t, x, math.inf, epsabs=0, epsrel=1e-12, limit=400)
    return v


@pytest.mark.parametrize("x", [1e-8, 1e-3, 0.1, 0.5, 0.999, 1.0, 1.001, 2.0, 5.0, 20.0, 80.0])
def test_exp1_matches_quadrature(x):
    assert exp1(x) == pytest.approx(e1_quad(x), rel=1e-10)


def test_exp1_zero_is_infinite():
    assert exp1(0.0) == math.inf


def test_exp1_small_argument_asymptotics():
    x = 1e-12
    assert exp1(x) == pytest.approx(-EULER_GAMMA - math.log(x), rel=1e-12)


def test_exp1_vectorised_shape():
    x = np.linspace(0.01, 10, 12).reshape(3, 4)
    out = exp1(x)
    assert out.shape == (3, 4)
    np.testing.assert_allclose(out, special.exp1(x), rtol=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=1e-10, max_value=600.0))
def test_exp1_agrees_with_scipy(x):
    assert exp1(x) == pytest.approx(float(special.exp1(x)), rel=1e-12, abs=1e-300)


@settings(max_examples=100, deadline=None)
@given(st.floats(min_value=1.0, max_value=300.0))
def test_exp1_tail_bound(u):
    # E1(u) <= e^{-u} for u >= 1 (in fact E1(u) < e^{-u}/u)
    assert exp1(u) <= math.exp(-u)

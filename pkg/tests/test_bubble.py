import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from concentra.bubble import BubbleParams, alpha_n, bubble_derivative, bubble_power, bubble_value, critical_power
from concentra.errors import InvalidDimension, InvalidIndex


@pytest.mark.parametrize("n,want", [(3, 3 ** 0.25), (4, math.sqrt(8.0)), (6, 24.0)])
def test_alpha_n(n, want):
    assert alpha_n(n) == pytest.approx(want, rel=1e-14)


def test_alpha_n_rejects_low_dimension():
    with pytest.raises(InvalidDimension):
        alpha_n(2)


def test_critical_power():
    assert critical_power(3) == 6.0
    assert critical_power(4) == 4.0


def test_value_at_center_and_unit_radius():
    b = BubbleParams(0.3, (0.1, 0.2, -0.1), 3)
    assert bubble_value(b, b.center) == pytest.approx(alpha_n(3) * 0.3 ** -0.5)
    b1 = BubbleParams(1.0, (0, 0, 0), 3)
    assert bubble_value(b1, np.array([1.0, 0, 0])) == pytest.approx(0.930605, abs=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 5.0), st.lists(st.floats(-2, 2), min_size=3, max_size=3),
       st.lists(st.floats(-3, 3), min_size=3, max_size=3))
def test_scaling_identity(delta, xi, x):
    b = BubbleParams(delta, xi, 3)
    unit = BubbleParams(1.0, (0, 0, 0), 3)
    y = (np.asarray(x) - np.asarray(xi)) / delta
    assert bubble_value(b, np.asarray(x)) == pytest.approx(delta ** -0.5 * bubble_value(unit, y), rel=1e-12)


def test_solves_critical_equation():
    # radial Laplacian by central differences: -U'' - (n-1)/r U' = U^{p-1}
    n = 5
    b = BubbleParams(0.7, (0,) * n, n)
    r = np.linspace(0.2, 2.0, 7)
    h = 1e-4

    def U(s):
        return bubble_value(b, np.column_stack([s] + [np.zeros_like(s)] * (n - 1)))

    lap = (U(r + h) - 2 * U(r) + U(r - h)) / h ** 2 + (n - 1) / r * (U(r + h) - U(r - h)) / (2 * h)
    assert np.allclose(-lap, U(r) ** (critical_power(n) - 1), rtol=1e-5)


def test_derivatives_at_center():
    b = BubbleParams(0.5, (0.1, 0.0, 0.3), 3)
    for j in (1, 2, 3):
        assert bubble_derivative(b, b.center, j) == pytest.approx(0.0, abs=1e-14)
    assert bubble_derivative(b, b.center, 0) == pytest.approx(-alpha_n(3) * 0.5 * 0.5 ** -1.5)


@pytest.mark.parametrize("j", [0, 1, 2, 3])
def test_derivatives_match_finite_differences(j, rng):
    d, xi = 0.4, np.array([0.2, -0.1, 0.05])
    x = rng.uniform(-1, 1, size=(20, 3))
    h = 1e-5
    if j == 0:
        fd = (bubble_value(BubbleParams(d + h, xi, 3), x) - bubble_value(BubbleParams(d - h, xi, 3), x)) / (2 * h)
    else:
        e = np.zeros(3)
        e[j - 1] = h
        fd = (bubble_value(BubbleParams(d, xi + e, 3), x) - bubble_value(BubbleParams(d, xi - e, 3), x)) / (2 * h)
    got = bubble_derivative(BubbleParams(d, xi, 3), x, j)
    assert np.allclose(got, fd, rtol=1e-6, atol=1e-9 * np.abs(fd).max())


def test_derivative_index_checked():
    with pytest.raises(InvalidIndex):
        bubble_derivative(BubbleParams(1.0, (0, 0, 0), 3), np.zeros(3), 4)


def test_power_matches_value():
    b = BubbleParams(0.01, (0, 0, 0), 3)
    x = np.array([[0.0, 0, 0], [0.3, 0.1, 0], [1.0, 1.0, 1.0]])
    assert np.allclose(bubble_power(b, x, 5.0), bubble_value(b, x) ** 5, rtol=1e-12)


def test_dimension_mismatch():
    with pytest.raises(InvalidDimension):
        BubbleParams(1.0, (0, 0), 3)
    with pytest.raises(ValueError):
        BubbleParams(-1.0, (0, 0, 0), 3)

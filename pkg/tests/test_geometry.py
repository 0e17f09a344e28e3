import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from concentra.errors import InvalidCodimension, InvalidDimension, OutsideCollar, OutsideDomain, WeightDegenerate
from concentra.geometry import (Ball, HalfSpace, Reflection, RoundedBox, SignedDistanceDomain, SymmetrySpec,
                                boundary_critical_point, constant_weight, critical_exponent, integrate_lifted,
                                lift_to_invariant, monomial_weight, profile_point, sphere_area)


def test_collar_data_unit_ball():
    B = Ball()
    c = B.collar_data(np.array([0.9, 0.0, 0.0]))
    assert c.d_x == pytest.approx(0.1)
    assert np.allclose(c.p_x, [1, 0, 0])
    assert np.allclose(c.nu, [-1, 0, 0])
    assert np.allclose(c.x_bar, [1.1, 0, 0])
    assert np.allclose(B.collar_data(np.array([0, 0, 0.95])).x_bar, [0, 0, 1.05])


def test_collar_errors():
    B = Ball()
    with pytest.raises(OutsideDomain):
        B.collar_data(np.array([1.2, 0, 0]))
    with pytest.raises(OutsideCollar):
        B.collar_data(np.array([0.0, 0, 0]))
    with pytest.raises(InvalidDimension):
        B.collar_data(np.array([0.5, 0]))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3).filter(lambda v: 0.3 < np.linalg.norm(v) < 0.99))
def test_reflection_isometry(x):
    B = Ball()
    d, p, nu, xb = B.collar_arrays(np.asarray(x))
    assert np.linalg.norm(xb[0] - p[0]) == pytest.approx(d[0], abs=1e-12)
    assert np.linalg.norm(p[0]) == pytest.approx(1.0)


def test_shifted_ball_normals():
    B = Ball(center=[2, 0, 0])
    s = B.project(np.array([1.2, 0.0, 0.0]))[0]
    assert np.allclose(s, [1, 0, 0])
    assert np.allclose(B.inward_normal(s), [1, 0, 0])
    assert B.is_axisymmetric


def test_rounded_box_geometry():
    box = RoundedBox([0, 0, 0], [2, 1, 1], 0.2)
    assert box.contains(np.array([[1.0, 0.5, 0.5]]))[0]
    assert not box.contains(np.array([[0.001, 0.001, 0.001]]))[0]
    d = box.distance(np.array([[1.0, 0.5, 0.1]]))[0]
    assert d == pytest.approx(0.1)
    with pytest.raises(ValueError):
        RoundedBox([0, 0, 0], [1, 1, 1], 0.6)


def test_halfspace_and_sdf():
    H = HalfSpace(3)
    assert H.contains(np.array([[0, 0, 0.1]]))[0]
    c = H.collar_data(np.array([0.3, 0.2, 0.1]))
    assert np.allclose(c.x_bar, [0.3, 0.2, -0.1])
    sd = SignedDistanceDomain(lambda x: np.linalg.norm(x, axis=-1) - 1.0, ([-1] * 3, [1] * 3), 1.0)
    nu = sd.inward_normal(np.array([0.0, 1.0, 0.0]))
    assert np.allclose(nu, [0, -1, 0], atol=1e-6)


def test_reflection_symmetry_check():
    B = Ball(center=[2, 0, 0])
    B = Ball(center=[2, 0, 0], reflections=B.axis_reflections())
    w = monomial_weight(SymmetrySpec([1], 4), B)
    assert B.check_reflection_symmetry(w)
    bad = Ball(center=[2, 0, 0], reflections=[Reflection((2, 0, 0), (1, 0, 0))])
    assert not bad.check_reflection_symmetry(w)


@pytest.mark.parametrize("N,k,want", [(5, 2, 6.0), (6, 1, 10 / 3), (7, 0, 14 / 5)])
def test_critical_exponent(N, k, want):
    assert critical_exponent(N, k) == pytest.approx(want)


def test_critical_exponent_codimension():
    with pytest.raises(InvalidCodimension):
        critical_exponent(4, 2)


def test_symmetry_spec_validation():
    assert SymmetrySpec([1], 4).n == 3
    with pytest.raises(InvalidCodimension):
        SymmetrySpec([2], 4)
    with pytest.raises(ValueError):
        SymmetrySpec([0], 6)


def test_monomial_weight_values():
    w = monomial_weight(SymmetrySpec([1], 4))
    x = np.array([[2.0, 5.0, 7.0]])
    assert w(x)[0] == 2.0
    assert np.allclose(w.gradient(x)[0], [1, 0, 0])
    w2 = monomial_weight(SymmetrySpec([1, 1], 7))
    x = np.array([[2.0, 3.0, 1.0]])
    assert w2(x)[0] == 6.0
    assert np.allclose(w2.gradient(x)[0], [3, 2, 0])


def test_monomial_weight_derivatives_fd(rng):
    w = monomial_weight(SymmetrySpec([2, 1], 8))
    x = rng.uniform(0.5, 2.0, size=(5, 5))
    h = 1e-6
    for i in range(5):
        e = np.zeros(5)
        e[i] = h
        fd = (w(x + e) - w(x - e)) / (2 * h)
        assert np.allclose(w.gradient(x)[:, i], fd, rtol=1e-7)
        fdg = (w.gradient(x + e) - w.gradient(x - e)) / (2 * h)
        assert np.allclose(w.hessian(x)[:, :, i], fdg, rtol=1e-6, atol=1e-8)


def test_monomial_weight_needs_positive_coordinates():
    with pytest.raises(WeightDegenerate):
        monomial_weight(SymmetrySpec([1], 4), Ball())


def test_weight_invariant_under_axis_reflection():
    B = Ball(center=[2, 0, 0])
    w = monomial_weight(SymmetrySpec([1], 4), B)
    x = B.sample_interior(100, np.random.default_rng(0))
    for r in B.axis_reflections():
        assert np.allclose(w(r.apply(x)), w(x))


def test_constant_weight():
    w = constant_weight(3, 2.5)
    assert np.all(w(np.zeros((4, 3))) == 2.5)
    assert w.axisymmetric


def test_profile_and_lift(rng):
    spec = SymmetrySpec([1], 4)
    y = rng.standard_normal((10, 4))
    x = profile_point(y, spec)
    assert np.allclose(x[:, 0], np.linalg.norm(y[:, :2], axis=1))
    assert np.allclose(x[:, 1:], y[:, 2:])
    q, _ = np.linalg.qr(rng.standard_normal((2, 2)))
    yr = y.copy()
    yr[:, :2] = y[:, :2] @ q.T
    f = lambda p: np.sin(p[:, 0]) + p[:, 1] ** 2
    assert np.allclose(lift_to_invariant(f, y, spec), lift_to_invariant(f, yr, spec))
    assert np.all(lift_to_invariant(lambda p: np.ones(len(p)), y, spec) == 1.0)
    with pytest.raises(InvalidDimension):
        profile_point(np.zeros((2, 3)), spec)


def test_lift_outside_domain():
    spec = SymmetrySpec([1], 4)
    with pytest.raises(OutsideDomain):
        lift_to_invariant(lambda p: p[:, 0], np.array([[0.0, 0, 0, 0]]), spec, Ball(center=[2, 0, 0]))


def test_measure_identity_monte_carlo():
    # u = 1: integral over the revolution domain is 2 pi int_B x_1 = 2 pi * 2 * vol(B)
    spec = SymmetrySpec([1], 4)
    B = Ball(center=[2, 0, 0])
    val, se = integrate_lifted(lambda x: np.ones(len(x)), spec, B, 500_000, np.random.default_rng(0))
    want = sphere_area(1) * 2.0 * 4 * math.pi / 3
    assert abs(val - want) / want < 0.01
    assert se < 0.01 * want


def test_sphere_area():
    assert sphere_area(1) == pytest.approx(2 * math.pi)
    assert sphere_area(2) == pytest.approx(4 * math.pi)


def test_boundary_critical_point():
    B = Ball(center=[2, 0, 0])
    w = monomial_weight(SymmetrySpec([1], 4), B)
    s = boundary_critical_point(B, w, np.array([1.5, 0.8, 0.0]), steps=2000, lr=0.2)
    assert np.allclose(s, [1, 0, 0], atol=1e-4)

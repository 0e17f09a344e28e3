import numpy as np
import pytest

from concentra.errors import InvalidConfiguration
from concentra.geometry import Ball, Reflection, SymmetrySpec, constant_weight, monomial_weight
from concentra.grid import Discretization, GridField, graded_axis, graded_grid, radial_axis, uniform_grid


def test_interior_stencil_is_seven_point():
    disc = uniform_grid(Ball(), 17)
    A = disc.stiffness("a").tocsr()
    h = disc.h_max
    i = disc.locate(np.zeros(3))
    row = A.getrow(i)
    vol = disc.volumes[i]
    assert row.nnz == 7
    assert row[0, i] / vol == pytest.approx(6 / h ** 2)
    assert np.allclose(np.sort(row.data)[:6] / vol, -1 / h ** 2)


def test_stiffness_symmetric():
    B = Ball(center=[2, 0, 0])
    w = monomial_weight(SymmetrySpec([1], 4), B)
    for disc in (uniform_grid(B, 13, w, margin=0.05), graded_grid(B, w, [[1.2, 0, 0]], 0.0123, 1.2, 0.1)):
        A = disc.stiffness("a")
        assert abs(A - A.T).max() < 1e-12 * abs(A).max()


def test_constant_field_nonnegative_load():
    disc = uniform_grid(Ball(), 17)
    load = disc.stiffness("a") @ np.ones(disc.N)
    assert load.min() >= -1e-12


def test_graded_axis_properties():
    ax = graded_axis(0.0, 1.0, [0.3], 1e-3, 1.1, 0.05)
    h = np.diff(ax)
    assert ax[0] == 0.0 and ax[-1] == 1.0
    assert h.min() >= 0.5e-3 and h.max() <= 0.05 * 1.0000001
    assert np.min(np.abs(ax - 0.3)) < 1e-12
    r = radial_axis(1.0, 1e-3, 1.1, 0.05)
    assert r[0] == 0.0 and np.diff(r)[0] == pytest.approx(1e-3, rel=0.1)


def test_axis_validation():
    with pytest.raises(InvalidConfiguration):
        Discretization(Ball(), [np.array([0.0, 1.0]), np.linspace(0, 1, 5), np.linspace(0, 1, 5)])


def test_integrate_volume_axisymmetric():
    B = Ball(center=[2, 0, 0])
    disc = graded_grid(B, constant_weight(3), [[2, 0, 0]], 0.0123, 1.05, 0.0123)
    assert disc.total_volume == pytest.approx(4 * np.pi / 3, rel=1e-2)


def test_reflection_permutation():
    B = Ball()
    disc = uniform_grid(B, 11)
    p = disc.reflection_permutation(Reflection((0, 0, 0), (1, 0, 0)))
    assert np.allclose(disc.points[p][:, 0], -disc.points[:, 0])
    assert np.all(np.sort(p) == np.arange(disc.N))
    ax = graded_grid(Ball(center=[2, 0, 0]), None, [[2, 0, 0]], 0.05, 1.1, 0.1)
    assert np.all(ax.reflection_permutation(Reflection((2, 0, 0), (0, 1, 0))) == np.arange(ax.N))
    with pytest.raises(InvalidConfiguration):
        ax.reflection_permutation(Reflection((2, 0, 0), (1, 0, 0)))


def test_interpolation_modes():
    B = Ball()
    disc = uniform_grid(B, 17)
    f = disc.sample(lambda x: 1.0 + x[:, 0])
    x = np.array([[0.1, 0.05, 0.0], [0.97, 0.0, 0.0]])
    ren = disc.interpolate(f.values, x, outside="renormalize")
    assert ren[0] == pytest.approx(1.1, abs=1e-12)
    assert abs(ren[1] - 1.97) < 0.15
    with pytest.raises(ValueError):
        disc.interpolate(f.values, x, outside="bogus")


def test_gradient_linear_field():
    disc = uniform_grid(Ball(), 17)
    g = disc.gradient(disc.points[:, 1] * 2.0)
    inner = np.linalg.norm(disc.points, axis=1) < 0.7
    assert np.allclose(g[inner], [0, 2, 0])


def test_field_norms():
    disc = uniform_grid(Ball(), 17)
    u = GridField(np.ones(disc.N), disc)
    assert u.plain_norm(2) == pytest.approx(np.sqrt(disc.total_volume))
    assert u.inner(u) > 0


def test_refined_halves_spacing():
    disc = uniform_grid(Ball(), 9)
    assert disc.refined().h_max == pytest.approx(disc.h_max / 2)

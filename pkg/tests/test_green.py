import numpy as np
import pytest

from concentra.errors import OutsideDomain, ResolutionError
from concentra.geometry import Ball, HalfSpace
from concentra.green import (GreenKernel, check_collar_bounds, fundamental, regular_part_ball,
                             regular_part_ball_gradient, regular_part_halfspace, regular_part_numeric,
                             unit_ball_volume)
from concentra.grid import uniform_grid


def test_h_at_origin_and_center():
    y = np.array([[0.3, -0.2, 0.1], [0.0, 0.5, 0.0]])
    assert np.allclose(regular_part_ball(np.zeros((2, 3)), y), 1.0)
    assert np.allclose(regular_part_ball(y, np.zeros((2, 3))), 1.0)


def test_h_symmetric(rng):
    x = Ball().sample_interior(50, rng)
    y = Ball().sample_interior(50, rng)
    assert np.allclose(regular_part_ball(x, y), regular_part_ball(y, x), rtol=1e-13)


def test_h_matches_gamma_on_boundary(rng):
    y = Ball().sample_interior(20, rng) * 0.8
    d = rng.standard_normal((20, 3))
    x = (1 - 1e-9) * d / np.linalg.norm(d, axis=1, keepdims=True)
    assert np.allclose(regular_part_ball(x, y), fundamental(x, y, 3), rtol=1e-6)


def test_h_harmonic_and_gradient(rng):
    x = Ball().sample_interior(10, rng) * 0.5
    y = Ball().sample_interior(10, rng) * 0.5
    h = 1e-3
    lap = -6 * regular_part_ball(x, y)
    grad = np.zeros_like(x)
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        lap = lap + regular_part_ball(x + e, y) + regular_part_ball(x - e, y)
        grad[:, k] = (regular_part_ball(x + e, y) - regular_part_ball(x - e, y)) / (2 * h)
    assert np.abs(lap / h ** 2).max() < 1e-4
    assert np.allclose(regular_part_ball_gradient(x, y), grad, rtol=1e-5, atol=1e-7)


def test_shifted_ball_kelvin():
    c = np.array([2.0, 0, 0])
    x = np.array([[2.0, 0, 0]])
    y = np.array([[2.3, 0.1, 0]])
    assert regular_part_ball(x, y, center=c, radius=1.0)[0] == pytest.approx(1.0)
    with pytest.raises(OutsideDomain):
        regular_part_ball(np.array([[0.0, 0, 0]]), y, center=c)


def test_halfspace_mirror():
    x = np.array([[0, 0, 0.2]])
    y = np.array([[0, 0, 0.5]])
    assert regular_part_halfspace(x, y)[0] == pytest.approx(1 / 0.7)
    assert regular_part_halfspace(y, x)[0] == pytest.approx(1 / 0.7)
    xs = np.array([[0.1, 0.2, 1e-10]])
    assert regular_part_halfspace(xs, y)[0] == pytest.approx(fundamental(xs, y, 3)[0], rel=1e-8)
    with pytest.raises(OutsideDomain):
        regular_part_halfspace(np.array([[0, 0, -0.1]]), y)


def test_normalised_green_vanishes_on_boundary():
    g = GreenKernel(Ball())
    y = np.array([[0.2, 0.1, 0.0]])
    x = np.array([[0.0, 0.0, 1 - 1e-10]])
    assert abs(g.green(x, y)[0]) < 1e-8
    assert g.omega_n == pytest.approx(unit_ball_volume(3))
    assert g.exact


def test_numeric_h_unit_ball(rng):
    B = Ball()
    disc = uniform_grid(B, 33)
    g = GreenKernel(B)
    y = np.array([0.3, 0.0, 0.0])
    Hn = regular_part_numeric(g, y, disc)
    pts = B.sample_interior(20, rng)
    got = disc.interpolate(Hn.values, pts, outside="renormalize")
    want = g.regular(pts, np.broadcast_to(y, pts.shape))
    assert np.max(np.abs(got - want) / want) < 0.03
    # maximum principle: G >= 0 up to discretisation error
    G = fundamental(disc.points, y, 3) - Hn.values
    assert G.min() > -1e-3


def test_numeric_h_resolution_error():
    B = Ball()
    disc = uniform_grid(B, 17)
    with pytest.raises(ResolutionError):
        regular_part_numeric(GreenKernel(B), np.array([0.95, 0, 0]), disc)


def test_collar_ratios_ball():
    rep = check_collar_bounds(GreenKernel(Ball()), samples=4000, seed=3)
    for name in ("ratio2", "ratio31", "ratio15"):
        assert np.isfinite(rep.sup[name]) and rep.sup[name] <= 50
        assert rep.monotone[name]


def test_collar_ratio_halfspace_zero():
    rep = check_collar_bounds(GreenKernel(HalfSpace(3)), samples=2000, seed=0)
    assert rep.sup["ratio2"] == 0.0
    assert rep.sup["ratio31"] == pytest.approx(1.0)


def test_collar_csv(tmp_path):
    rep = check_collar_bounds(GreenKernel(Ball()), samples=100, seed=0)
    rep.write_csv(tmp_path / "c.csv")
    head = (tmp_path / "c.csv").read_text().splitlines()[0]
    assert head == "d_x,xbar_minus_y,ratio2,ratio31,ratio15"

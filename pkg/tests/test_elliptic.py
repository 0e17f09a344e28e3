import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from concentra import elliptic as E
from concentra.bubble import BubbleParams, bubble_value
from concentra.errors import NoConvergence, OutsideDomain
from concentra.geometry import Ball, constant_weight
from concentra.grid import GridField, graded_grid, uniform_grid
from concentra.green import GreenKernel
from concentra.scenarios import nehari_iteration


@pytest.fixture(scope="module")
def ball65():
    return uniform_grid(Ball(), 65)


def test_torsion_function(ball65):
    v = E.i_star(ball65, GridField(np.ones(ball65.N), ball65))
    assert v.values[ball65.locate(np.zeros(3))] == pytest.approx(1 / 6, abs=1e-3)


def test_torsion_second_order():
    errs = []
    for n in (17, 33):
        disc = uniform_grid(Ball(), n)
        v = E.i_star(disc, GridField(np.ones(disc.N), disc)).values
        exact = (1 - np.sum(disc.points ** 2, axis=1)) / 6
        errs.append(np.abs(v - exact).max())
    assert math.log2(errs[0] / errs[1]) > 1.7


def test_linearity_zero():
    disc = uniform_grid(Ball(), 9)
    assert np.all(E.i_star(disc, GridField(np.zeros(disc.N), disc)).values == 0)


def test_istar_continuity_constant_stable(rng):
    # ratio |i*(u)|_A / |u|_{6/5} stays bounded under refinement
    ratios = []
    for n in (17, 33):
        disc = uniform_grid(Ball(), n)
        vals = []
        for _ in range(3):
            c = rng.standard_normal(4)
            u = disc.sample(lambda x: c[0] + c[1] * x[:, 0] + c[2] * x[:, 1] ** 2 + c[3] * np.cos(3 * x[:, 2]))
            v = E.i_star(disc, u)
            vals.append(v.energy_norm() / u.plain_norm(6 / 5))
        ratios.append(max(vals))
    assert ratios[1] / ratios[0] == pytest.approx(1.0, abs=0.1)


def test_first_eigenvalue_ball(ball65):
    lam = E.linearized_spectrum(ball65, GridField(np.zeros(ball65.N), ball65), 0.5)[0]
    assert lam == pytest.approx(math.pi ** 2, rel=0.02)


def test_projected_bubble_vanishes_on_trace():
    B = Ball()
    disc = uniform_grid(B, 33)
    b = BubbleParams(0.2, (0.1, 0, 0), 3)
    PU = E.project_bubble(disc, b).values
    U = bubble_value(b, disc.points)
    assert np.all(U - PU >= -1e-10)
    with pytest.raises(OutsideDomain):
        E.project_bubble(disc, BubbleParams(0.2, (1.5, 0, 0), 3))


def test_newton_zero_is_trivial():
    disc = uniform_grid(Ball(), 9)
    nr = E.newton_solve(disc, 0.5, GridField(np.zeros(disc.N), disc))
    assert nr.trivial and nr.iterations == 0
    assert np.all(nr.u.values == 0)


def test_newton_rejects_bad_eps():
    disc = uniform_grid(Ball(), 9)
    with pytest.raises(ValueError):
        E.newton_solve(disc, 5.0, GridField(np.zeros(disc.N), disc))


def _shooting_profile(q):
    # -w'' - (2/r) w' = |w|^{q-1} w, w(0) = 1; first zero R0; u(r) = mu w(mu^{(q-1)/2} r) on the unit ball
    def rhs(r, y):
        return [y[1], -abs(y[0]) ** (q - 1) * y[0] - (2 / r) * y[1]]

    r0 = 1e-6
    hit = lambda r, y: y[0]
    hit.terminal = True
    sol = solve_ivp(rhs, (r0, 50.0), [1 - r0 ** 2 / 6, -r0 / 3], events=hit, rtol=1e-11, atol=1e-13,
                    dense_output=True)
    R0 = sol.t_events[0][0]
    mu = R0 ** (2 / (q - 1))
    return lambda r: mu * sol.sol(np.maximum(R0 * r, r0))[0]


def test_newton_matches_radial_shooting():
    B = Ball()
    eps = 1.0
    # second order: the error is 7.5% at 48, 1.5% at 96 and 0.36% at 192 cells per diameter
    h = 2.0137 / 192
    disc = graded_grid(B, constant_weight(3), [[0, 0, 0]], h, 1.05, h)
    u0 = E.project_bubble(disc, BubbleParams(0.3, (0, 0, 0), 3)).values
    u1, _ = nehari_iteration(disc, u0, eps)
    nr = E.newton_solve(disc, eps, GridField(u1, disc))
    assert not nr.trivial and nr.residual_history[-1] < 1e-9
    prof = _shooting_profile(E.exponent(3, eps) + 1)
    r = np.linalg.norm(disc.points, axis=1)
    exact = prof(r)
    assert np.abs(nr.u.values - exact).max() / exact.max() < 0.01
    # the positive solution is of mountain-pass type
    assert E.linearized_spectrum(disc, nr.u, eps)[0] < 0


def test_newton_from_solution_converges_fast():
    disc = uniform_grid(Ball(), 17)
    u0 = E.project_bubble(disc, BubbleParams(0.3, (0, 0, 0), 3)).values
    u1, _ = nehari_iteration(disc, u0, 1.0)
    nr = E.newton_solve(disc, 1.0, GridField(u1, disc))
    again = E.newton_solve(disc, 1.0, nr.u)
    assert again.iterations <= 2


def test_energy_of_zero():
    disc = uniform_grid(Ball(), 9)
    assert E.energy_functional(disc, GridField(np.zeros(disc.N), disc), 0.3) == 0.0


def test_field_roundtrip(tmp_path):
    disc = uniform_grid(Ball(), 9)
    u = disc.sample(lambda x: x[:, 0] + 2 * x[:, 1])
    E.save_field(tmp_path / "u.field", u, {"eps": 0.1})
    header, arr = E.load_field(tmp_path / "u.field")
    assert header["format"] == "concentra-field/1" and header["meta"]["eps"] == 0.1
    assert np.array_equal(arr[disc.mask], u.values)


def test_line_profile(tmp_path):
    disc = uniform_grid(Ball(), 17)
    u = disc.sample(lambda x: 1 - np.sum(x ** 2, axis=1))
    rows = E.line_profile(u, [-0.5, 0, 0], [0.5, 0, 0], samples=11)
    assert rows.shape == (11, 5)
    E.write_profile_csv(tmp_path / "p.csv", rows, 3)
    assert (tmp_path / "p.csv").read_text().startswith("s,x1,x2,x3,u")

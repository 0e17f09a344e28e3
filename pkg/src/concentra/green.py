"""Dirichlet Green function of the Laplacian and its regular part.

Convention: ``H`` is the regular part of the unnormalised kernel
``Gamma(x, y) = |x - y|^{2-n}``, i.e. ``H(., y)`` is harmonic with boundary
values ``Gamma(., y)``.  The normalised Green function is
``G = (Gamma - H) / (n (n-2) omega_n)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import OutsideDomain, ResolutionError
from .geometry import Ball, Domain, HalfSpace
from .grid import Discretization, GridField


def unit_ball_volume(n: int) -> float:
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1)


def fundamental(x, y, n: int):
    """``|x - y|^{2-n}``."""
    r2 = np.sum((np.asarray(x, float) - np.asarray(y, float)) ** 2, axis=-1)
    return r2 ** (-(n - 2) / 2)


def _ball_terms(x, y, center, radius):
    x = np.asarray(x, float) - center
    y = np.asarray(y, float) - center
    R2 = radius * radius
    x2 = np.sum(x * x, axis=-1)
    y2 = np.sum(y * y, axis=-1)
    xy = np.sum(x * y, axis=-1)
    # |y| |x - R^2 y/|y|^2| / R, written without dividing by |y|
    q = x2 * y2 / R2 - 2.0 * xy + R2
    return x, y, x2, y2, q


def regular_part_ball(x, y, n: int | None = None, center=None, radius: float = 1.0):
    """Kelvin-reflection closed form ``(|y'| |x' - R^2 y'/|y'|^2| / R)^{2-n}``
    with ``x' = x - center``, written without dividing by ``|y'|``."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    n = x.shape[-1] if n is None else n
    center = np.zeros(n) if center is None else np.asarray(center, float)
    for pt in (x, y):
        if np.any(np.sum((pt - center) ** 2, axis=-1) >= radius * radius):
            raise OutsideDomain("points must lie in the open ball")
    *_, q = _ball_terms(x, y, center, radius)
    return q ** (-(n - 2) / 2)


def regular_part_ball_gradient(x, y, n: int | None = None, center=None, radius: float = 1.0):
    """``grad_x H`` for the ball."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    n = x.shape[-1] if n is None else n
    center = np.zeros(n) if center is None else np.asarray(center, float)
    xc, yc, x2, y2, q = _ball_terms(x, y, center, radius)
    R2 = radius * radius
    dq = 2.0 * (y2[..., None] * xc / R2 - yc)
    return -(n - 2) / 2 * q[..., None] ** (-n / 2) * dq


def regular_part_halfspace(x, y):
    """Mirror-image regular part for ``{x_n > 0}``: ``|x_bar - y|^{2-n}``."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if np.any(x[..., -1] <= 0) or np.any(y[..., -1] <= 0):
        raise OutsideDomain("points must lie in the open half-space x_n > 0")
    xb = x.copy()
    xb[..., -1] *= -1
    return fundamental(xb, y, x.shape[-1])


def regular_part_halfspace_gradient(x, y):
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    n = x.shape[-1]
    xb = x.copy()
    xb[..., -1] *= -1
    diff = xb - y
    r2 = np.sum(diff * diff, axis=-1)
    g = -(n - 2) * r2[..., None] ** (-n / 2) * diff
    g[..., -1] *= -1
    return g


@dataclass(frozen=True)
class GreenKernel:
    domain: Domain
    convention: str = "unnormalized"

    @property
    def n(self) -> int:
        return self.domain.n

    @property
    def omega_n(self) -> float:
        return unit_ball_volume(self.n)

    @property
    def exact(self) -> bool:
        return isinstance(self.domain, (Ball, HalfSpace))

    def gamma(self, x, y):
        return fundamental(x, y, self.n)

    def regular(self, x, y):
        if isinstance(self.domain, Ball):
            return regular_part_ball(x, y, self.n, self.domain.center, self.domain.radius)
        if isinstance(self.domain, HalfSpace):
            return regular_part_halfspace(x, y)
        raise NotImplementedError("no closed form; use regular_part_numeric")

    def regular_gradient(self, x, y):
        if isinstance(self.domain, Ball):
            return regular_part_ball_gradient(x, y, self.n, self.domain.center, self.domain.radius)
        if isinstance(self.domain, HalfSpace):
            return regular_part_halfspace_gradient(x, y)
        raise NotImplementedError("no closed form; use regular_part_numeric")

    def green(self, x, y):
        """Normalised Dirichlet Green function."""
        n = self.n
        return (self.gamma(x, y) - self.regular(x, y)) / (n * (n - 2) * self.omega_n)


def regular_part_numeric(g: GreenKernel, y, disc: Discretization) -> GridField:
    """Discrete harmonic function with boundary values ``|x - y|^{2-n}`` at the
    cut points of the grid."""
    y = np.asarray(y, float)
    dist = float(g.domain.distance(y[None])[0])
    if not dist > 2 * disc.h_max:
        raise ResolutionError(f"pole at distance {dist:.3g} from the boundary needs > 2h = {2 * disc.h_max:.3g}")
    n = g.n
    load = disc.boundary_load(lambda x: fundamental(x, y, n), coef="one")
    return GridField(disc.solver("one").solve(load), disc)


# ---------------------------------------------------------------- collar bounds

@dataclass
class CollarReport:
    rows: np.ndarray            # columns d_x, |x_bar - y|, ratio2, ratio31, ratio15
    sup: dict
    binned: dict
    monotone: dict

    columns = ("d_x", "xbar_minus_y", "ratio2", "ratio31", "ratio15")

    def write_csv(self, path):
        np.savetxt(path, self.rows, delimiter=",", header=",".join(self.columns),
                   comments="", fmt="%.17g")


def check_collar_bounds(g: GreenKernel, samples: int = 10_000, seed: int = 0, dmin: float = 0.01,
                        dmax: float = 0.2, bins: int = 8, tol: float = 0.05,
                        y_samples=None, regular=None, regular_gradient=None) -> CollarReport:
    """Empirical constants of the collar bounds for ``H``.

    With ``x`` in the collar (``d_x`` uniform in ``[dmin, dmax]``) and ``y``
    in the domain, the ratios are

    * ratio2  = |H - |x_bar - y|^{2-n}| / (d_x |x_bar - y|^{2-n})
    * ratio31 = H / |x_bar - y|^{2-n}
    * ratio15 = |grad_x H| |x - y|^{n-1}

    Per-bin suprema over ``d_x`` are reported; ``monotone`` records whether
    each bin supremum is non-increasing as ``d_x`` decreases (within ``tol``).
    A numeric ``H`` can be supplied through ``regular``/``regular_gradient``.
    """
    rng = np.random.default_rng(seed)
    dom = g.domain
    n = g.n
    H = regular if regular is not None else g.regular
    dH = regular_gradient if regular_gradient is not None else g.regular_gradient
    if isinstance(dom, HalfSpace):
        s = rng.uniform(-1.0, 1.0, size=(samples, n))
        s[:, -1] = 0.0
        dx = rng.uniform(dmin, dmax, samples)
        x = s.copy()
        x[:, -1] = dx
        y = rng.uniform(-1.0, 1.0, size=(samples, n))
        y[:, -1] = rng.uniform(1e-3, 1.0, samples)
    else:
        x = dom.sample_collar(samples, rng, dmin, dmax)
        y = dom.sample_interior(samples, rng) if y_samples is None else np.asarray(y_samples)
        if y.shape[0] != samples:
            y = y[rng.integers(0, y.shape[0], samples)]
    d, _, _, xb = dom.collar_arrays(x)
    comp = fundamental(xb, y, n)
    h = H(x, y)
    ratio2 = np.abs(h - comp) / (d * comp)
    ratio31 = h / comp
    ratio15 = np.linalg.norm(dH(x, y), axis=-1) * np.sum((x - y) ** 2, axis=-1) ** ((n - 1) / 2)
    rows = np.column_stack([d, np.linalg.norm(xb - y, axis=-1), ratio2, ratio31, ratio15])
    edges = np.exp(np.linspace(np.log(dmin), np.log(dmax), bins + 1))
    idx = np.clip(np.searchsorted(edges, d) - 1, 0, bins - 1)
    binned, monotone, sup = {}, {}, {}
    for k, name in ((2, "ratio2"), (3, "ratio31"), (4, "ratio15")):
        vals = rows[:, k]
        sup[name] = float(np.max(vals))
        per = np.array([vals[idx == b].max() if np.any(idx == b) else np.nan for b in range(bins)])
        binned[name] = per
        ok = np.isfinite(vals).all()
        scale = np.nanmax(per) if np.isfinite(np.nanmax(per)) and np.nanmax(per) > 0 else 1.0
        for b in range(bins - 1):
            if per[b] > per[b + 1] + tol * scale:
                ok = False
        monotone[name] = bool(ok)
    return CollarReport(rows, sup, binned, monotone)

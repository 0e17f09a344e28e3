"""Tensor-product grids with masked interiors and Shortley-Weller cut links.

Two layouts share one implementation:

* ``cartesian``: the grid lives in R^n directly.
* ``axisymmetric``: a meridian half-plane ``(z, rho)`` with ``rho >= 0`` of a
  domain and weight that are rotationally symmetric about the x_1 axis.  The
  measure picks up ``area(S^{n-2}) rho^{n-2}`` and the ambient point of a node is
  ``(z, rho, 0, ..., 0)``.

Axes may be non-uniform.  Links to exterior neighbours are cut at the exact
boundary crossing (Shortley-Weller distances).  The stiffness matrix is
assembled in flux form with dual cells taken from the uncut tensor grid; cut
links then only enter the diagonal, which keeps the matrix symmetric while the
solution stays second-order accurate (Gibou-Fedkiw type treatment).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import InvalidConfiguration, OutsideDomain, StencilDegenerate
from .geometry import Domain, Reflection, WeightField, constant_weight, sphere_area
from .linalg import SPDSolver

DEGENERATE_CUT = 1e-8


@dataclass
class _Links:
    i: np.ndarray          # interior node
    j: np.ndarray          # neighbour node (-1 for a boundary link)
    axis: np.ndarray
    length: np.ndarray
    geo: np.ndarray        # geometric conductance without the coefficient
    face: np.ndarray       # ambient face-midpoint coordinates
    bpoint: np.ndarray     # ambient boundary point (boundary links only)


class Discretization:
    def __init__(self, domain: Domain, axes: Sequence[np.ndarray], weight: WeightField | None = None,
                 layout: str = "cartesian"):
        self.domain = domain
        self.n = domain.n
        self.layout = layout
        self.axes = [np.asarray(a, dtype=float) for a in axes]
        for a in self.axes:
            if a.ndim != 1 or a.size < 3 or np.any(np.diff(a) <= 0):
                raise InvalidConfiguration("grid axes must be increasing with at least 3 nodes")
        if layout == "cartesian":
            if len(self.axes) != self.n:
                raise InvalidConfiguration(f"need {self.n} axes for a cartesian grid")
            self.radial_axis = None
            self.measure_const = 1.0
        elif layout == "axisymmetric":
            if len(self.axes) != 2:
                raise InvalidConfiguration("axisymmetric grids have exactly 2 axes (z, rho)")
            if self.axes[1][0] != 0.0:
                raise InvalidConfiguration("radial axis must start at rho = 0")
            if not domain.is_axisymmetric:
                raise InvalidConfiguration("domain is not rotationally symmetric about the x_1 axis")
            if weight is not None and not weight.axisymmetric:
                raise InvalidConfiguration("weight is not rotationally symmetric about the x_1 axis")
            self.radial_axis = 1
            self.measure_const = sphere_area(self.n - 2)
        else:
            raise InvalidConfiguration(f"unknown layout {layout!r}")
        self.weight = weight if weight is not None else constant_weight(self.n)
        self.shape = tuple(a.size for a in self.axes)
        self.grid_dim = len(self.axes)
        self._solvers: dict = {}
        self._build()

    # ------------------------------------------------------------------ geometry
    def to_ambient(self, g: np.ndarray) -> np.ndarray:
        """Grid coordinates (..., grid_dim) -> ambient points (..., n)."""
        g = np.asarray(g, dtype=float)
        if self.layout == "cartesian":
            return g
        out = np.zeros(g.shape[:-1] + (self.n,))
        out[..., 0] = g[..., 0]
        out[..., 1] = g[..., 1]
        return out

    def from_ambient(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.layout == "cartesian":
            return x
        return np.stack([x[..., 0], np.linalg.norm(x[..., 1:], axis=-1)], axis=-1)

    def _build(self):
        mesh = np.meshgrid(*self.axes, indexing="ij")
        gpts = np.stack([m.ravel() for m in mesh], axis=-1)
        phi = self.domain.phi(self.to_ambient(gpts)).reshape(self.shape)
        self.mask = phi < 0
        self.index = -np.ones(self.shape, dtype=np.int64)
        self.index[self.mask] = np.arange(int(self.mask.sum()))
        self.N = int(self.mask.sum())
        if self.N == 0:
            raise InvalidConfiguration("grid has no interior nodes")
        multi = np.argwhere(self.mask)            # (N, grid_dim) in index order
        self.multi = multi
        self.coords = np.stack([self.axes[k][multi[:, k]] for k in range(self.grid_dim)], axis=-1)
        self.points = self.to_ambient(self.coords)

        hm = np.zeros((self.N, self.grid_dim))
        hp = np.zeros((self.N, self.grid_dim))
        raw = []  # (i, j, axis, length, side, bpoint)
        for k in range(self.grid_dim):
            ax = self.axes[k]
            for side in (+1, -1):
                nb = multi.copy()
                nb[:, k] += side
                axis_node = None
                if k == self.radial_axis and side == -1:
                    axis_node = multi[:, k] == 0
                inside_grid = (nb[:, k] >= 0) & (nb[:, k] < self.shape[k])
                if axis_node is not None:
                    inside_grid &= ~axis_node
                j = np.full(self.N, -1, dtype=np.int64)
                ok = inside_grid.copy()
                j[ok] = self.index[tuple(nb[ok].T)]
                regular = j >= 0
                cut = ~regular
                if axis_node is not None:
                    cut &= ~axis_node
                if np.any(cut & ~inside_grid):
                    raise InvalidConfiguration("domain touches the edge of the grid; enlarge the axes")
                length = np.zeros(self.N)
                length[regular] = np.abs(ax[nb[regular, k]] - ax[multi[regular, k]])
                bpt = np.zeros((self.N, self.n))
                if np.any(cut):
                    ci = np.nonzero(cut)[0]
                    p = self.points[ci]
                    qg = self.coords[ci].copy()
                    qg[:, k] = ax[nb[ci, k]]
                    q = self.to_ambient(qg)
                    theta = self.domain.segment_crossing(p, q)
                    full = np.abs(ax[nb[ci, k]] - ax[multi[ci, k]])
                    length[ci] = theta * full
                    if np.any(theta < DEGENERATE_CUT):
                        raise StencilDegenerate("a node sits within 1e-8 h of the boundary")
                    bpt[ci] = p + theta[:, None] * (q - p)
                if side == +1:
                    hp[:, k] = length
                else:
                    hm[:, k] = length
                sel = np.nonzero(regular | cut)[0]
                if side == -1:
                    # regular minus links duplicate plus links of the neighbour
                    sel = np.nonzero(cut)[0]
                raw.append((sel, j[sel], k, length[sel], side, bpt[sel]))
        self.hm, self.hp = hm, hp

        # dual-cell measures per axis, taken from the full grid spacing so that
        # transverse face areas agree at both ends of every link
        Hm = np.zeros((self.N, self.grid_dim))
        Hp = np.zeros((self.N, self.grid_dim))
        for k in range(self.grid_dim):
            ax = self.axes[k]
            idx = multi[:, k]
            Hp[:, k] = np.where(idx < ax.size - 1, ax[np.minimum(idx + 1, ax.size - 1)] - ax[idx], 0.0)
            Hm[:, k] = np.where(idx > 0, ax[idx] - ax[np.maximum(idx - 1, 0)], 0.0)
        self.Hm, self.Hp = Hm, Hp
        meas = np.empty((self.N, self.grid_dim))
        for k in range(self.grid_dim):
            x = self.coords[:, k]
            if k == self.radial_axis:
                m = self.n - 2
                a = np.maximum(x - Hm[:, k] / 2, 0.0)
                b = x + Hp[:, k] / 2
                meas[:, k] = (b ** (m + 1) - a ** (m + 1)) / (m + 1)
            else:
                meas[:, k] = (Hm[:, k] + Hp[:, k]) / 2
        self.dual = meas
        self.volumes = self.measure_const * np.prod(meas, axis=1)

        links = []
        for sel, j, k, length, side, bpt in raw:
            other = np.prod(np.delete(meas[sel], k, axis=1), axis=1)
            face_g = self.coords[sel].copy()
            face_g[:, k] += side * length / 2
            f = other.copy()
            if k == self.radial_axis:
                f *= face_g[:, k] ** (self.n - 2)
            geo = self.measure_const * f / length
            links.append(_Links(sel, j, np.full(sel.size, k), length, geo,
                                self.to_ambient(face_g), bpt))
        cat = lambda name: np.concatenate([getattr(l, name) for l in links])
        self.links = _Links(cat("i"), cat("j"), cat("axis"), cat("length"), cat("geo"),
                            cat("face"), cat("bpoint"))
        self.node_weight = self.weight(self.points)
        if np.any(self.node_weight <= 0):
            raise InvalidConfiguration("weight must be strictly positive at every node")

    # ------------------------------------------------------------------ operators
    def conductances(self, coef: str = "a") -> np.ndarray:
        key = ("cond", coef)
        if key not in self._solvers:
            c = self.links.geo.copy()
            if coef == "a":
                c *= self.weight(self.links.face)
            elif coef != "one":
                raise ValueError(coef)
            self._solvers[key] = c
        return self._solvers[key]

    def stiffness(self, coef: str = "a") -> sp.csr_matrix:
        """Symmetric stiffness matrix of ``-div(c grad .)``, ``c = a`` or ``1``."""
        key = ("A", coef)
        if key not in self._solvers:
            c = self.conductances(coef)
            L = self.links
            reg = L.j >= 0
            diag = np.bincount(L.i, weights=c, minlength=self.N)
            diag += np.bincount(L.j[reg], weights=c[reg], minlength=self.N)
            rows = np.concatenate([np.arange(self.N), L.i[reg], L.j[reg]])
            cols = np.concatenate([np.arange(self.N), L.j[reg], L.i[reg]])
            vals = np.concatenate([diag, -c[reg], -c[reg]])
            A = sp.csr_matrix((vals, (rows, cols)), shape=(self.N, self.N))
            A = 0.5 * (A + A.T)
            self._solvers[key] = A.tocsr()
        return self._solvers[key]

    def boundary_load(self, g: Callable, coef: str = "a") -> np.ndarray:
        """Right-hand side contributed by Dirichlet data ``g`` at the cut points."""
        c = self.conductances(coef)
        L = self.links
        b = L.j < 0
        vals = np.zeros(self.N)
        if np.any(b):
            np.add.at(vals, L.i[b], c[b] * g(L.bpoint[b]))
        return vals

    def solver(self, coef: str = "a") -> SPDSolver:
        key = ("solver", coef)
        if key not in self._solvers:
            self._solvers[key] = SPDSolver(self.stiffness(coef), grid_dim=self.grid_dim)
        return self._solvers[key]

    # ------------------------------------------------------------------ quadrature
    def integrate(self, values: np.ndarray, weighted: bool = False) -> float:
        w = self.volumes * (self.node_weight if weighted else 1.0)
        return float(np.dot(w, values))

    @property
    def total_volume(self) -> float:
        return float(self.volumes.sum())

    @property
    def h_min(self) -> float:
        return float(min(np.min(np.diff(a)) for a in self.axes))

    @property
    def h_max(self) -> float:
        return float(max(np.max(np.diff(a)) for a in self.axes))

    def gradient(self, values: np.ndarray) -> np.ndarray:
        """Nodal gradient (grid coordinates) by 3-point non-uniform differences;
        boundary crossings carry the value 0.  On the symmetry axis the radial
        component is 0."""
        g = np.zeros((self.N, self.grid_dim))
        L = self.links
        for k in range(self.grid_dim):
            up = np.zeros(self.N)
            dn = np.zeros(self.N)
            hp = self.hp[:, k]
            hm = self.hm[:, k]
            # neighbour values; boundary links leave 0
            nb = self.multi.copy()
            nb[:, k] += 1
            ok = nb[:, k] < self.shape[k]
            j = np.full(self.N, -1)
            j[ok] = self.index[tuple(nb[ok].T)]
            up[j >= 0] = values[j[j >= 0]]
            nb = self.multi.copy()
            nb[:, k] -= 1
            ok = nb[:, k] >= 0
            j = np.full(self.N, -1)
            j[ok] = self.index[tuple(nb[ok].T)]
            dn[j >= 0] = values[j[j >= 0]]
            axis = hm == 0
            hm_s = np.where(axis, 1.0, hm)
            d = (hm_s ** 2 * (up - values) + hp ** 2 * (values - dn)) / (hp * hm_s * (hp + hm_s))
            g[:, k] = np.where(axis, 0.0, d)
        return g

    # ------------------------------------------------------------------ symmetry
    def reflection_permutation(self, refl: Reflection) -> np.ndarray:
        """Node permutation realising a reflection of the grid onto itself."""
        if self.layout == "axisymmetric":
            nrm = np.asarray(refl.normal, float)
            pt = np.asarray(refl.point, float)
            if abs(nrm[0]) < 1e-14 and np.allclose(pt[1:], 0):
                return np.arange(self.N)
            raise InvalidConfiguration("reflection does not preserve the axisymmetric layout")
        mirrored = refl.apply(self.points)
        idx = np.empty((self.N, self.grid_dim), dtype=np.int64)
        for k in range(self.grid_dim):
            ax = self.axes[k]
            pos = np.searchsorted(ax, mirrored[:, k])
            pos = np.clip(pos, 0, ax.size - 1)
            lo = np.clip(pos - 1, 0, ax.size - 1)
            pick = np.where(np.abs(ax[lo] - mirrored[:, k]) < np.abs(ax[pos] - mirrored[:, k]), lo, pos)
            if np.max(np.abs(ax[pick] - mirrored[:, k])) > 1e-9 * (1 + np.abs(ax).max()):
                raise InvalidConfiguration("grid is not symmetric under the reflection")
            idx[:, k] = pick
        perm = self.index[tuple(idx.T)]
        if np.any(perm < 0):
            raise InvalidConfiguration("reflection maps interior nodes outside the mask")
        return perm

    # ------------------------------------------------------------------ fields
    def field(self, values) -> "GridField":
        return GridField(np.asarray(values, dtype=float), self)

    def sample(self, func: Callable) -> "GridField":
        return GridField(np.asarray(func(self.points), dtype=float), self)

    def full_array(self, values: np.ndarray) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.mask] = values
        return out

    def interpolate(self, values: np.ndarray, x: np.ndarray, outside: str = "zero") -> np.ndarray:
        """Multilinear interpolation at ambient points.

        ``outside="zero"`` treats exterior nodes as zero (right for fields with
        zero boundary values); ``"renormalize"`` averages over interior corners only.
        """
        from scipy.interpolate import RegularGridInterpolator

        pts = self.from_ambient(np.atleast_2d(x))
        f = RegularGridInterpolator(self.axes, self.full_array(values), bounds_error=False, fill_value=0.0)
        if outside == "zero":
            return f(pts)
        if outside != "renormalize":
            raise ValueError(f"unknown outside rule {outside!r}")
        w = RegularGridInterpolator(self.axes, self.mask.astype(float), bounds_error=False, fill_value=0.0)(pts)
        out = f(pts)
        good = w > 1e-12
        out[good] /= w[good]
        for i in np.flatnonzero(~good):
            out[i] = values[int(np.argmin(np.linalg.norm(self.coords - pts[i], axis=1)))]
        return out

    def locate(self, x) -> int:
        """Index of the grid node nearest to ambient point x."""
        g = self.from_ambient(np.asarray(x, float)[None])[0]
        d = np.linalg.norm(self.coords - g, axis=1)
        return int(np.argmin(d))

    @property
    def identifier(self) -> str:
        return (f"{self.layout}:{self.domain.identifier}:shape={self.shape}:"
                f"hmin={self.h_min:.3e}:weight={self.weight.identifier}")

    def refined(self) -> "Discretization":
        """Grid with every interval bisected."""
        axes = [np.sort(np.concatenate([a, 0.5 * (a[1:] + a[:-1])])) for a in self.axes]
        return Discretization(self.domain, axes, self.weight, self.layout)


@dataclass
class GridField:
    values: np.ndarray
    disc: Discretization

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.disc.N,):
            raise ValueError(f"field has shape {self.values.shape}, expected ({self.disc.N},)")

    def inner(self, other: "GridField") -> float:
        """Weighted energy inner product ``int a grad u . grad v``."""
        return float(self.values @ (self.disc.stiffness("a") @ other.values))

    def energy_norm(self) -> float:
        return float(np.sqrt(max(self.inner(self), 0.0)))

    def norm(self, r: float) -> float:
        """``(int a |u|^r)^{1/r}``."""
        return float(self.disc.integrate(np.abs(self.values) ** r, weighted=True) ** (1.0 / r))

    def plain_norm(self, q: float) -> float:
        if np.isinf(q):
            return float(np.max(np.abs(self.values)))
        return float(self.disc.integrate(np.abs(self.values) ** q) ** (1.0 / q))

    def gradient_norm(self, q: float) -> float:
        g = self.disc.gradient(self.values)
        return float(self.disc.integrate(np.linalg.norm(g, axis=1) ** q) ** (1.0 / q))

    def __add__(self, other):
        return GridField(self.values + _vals(other), self.disc)

    def __sub__(self, other):
        return GridField(self.values - _vals(other), self.disc)

    def __mul__(self, s):
        return GridField(self.values * s, self.disc)

    __rmul__ = __mul__

    def __neg__(self):
        return GridField(-self.values, self.disc)


def _vals(x):
    return x.values if isinstance(x, GridField) else x


# ---------------------------------------------------------------------- meshes

def uniform_grid(domain: Domain, nodes: int | Sequence[int], weight: WeightField | None = None,
                 margin: float = 0.0) -> Discretization:
    """Cartesian grid with ``nodes`` points per axis spanning the bounding box.

    With zero margin the box faces carry exterior nodes, which is enough as
    long as the domain is strictly inside the box.
    """
    lo, hi = domain.bounding_box
    counts = [nodes] * domain.n if np.isscalar(nodes) else list(nodes)
    span = hi - lo
    axes = []
    for k in range(domain.n):
        pad = margin * span[k]
        a = np.linspace(lo[k] - pad, hi[k] + pad, counts[k])
        axes.append(a)
    return Discretization(domain, axes, weight, "cartesian")


def graded_axis(lo: float, hi: float, centers: Sequence[float], h_min: Sequence[float] | float,
                ratio: float, h_max: float) -> np.ndarray:
    """Nodes on [lo, hi] whose spacing grows geometrically (factor ``ratio``) away
    from every centre, starting at ``h_min`` and capped at ``h_max``.  All centres
    are nodes."""
    centers = sorted(float(c) for c in centers)
    hmins = np.broadcast_to(np.asarray(h_min, dtype=float), (len(centers),))
    order = np.argsort([float(c) for c in centers])
    hmins = hmins[order] if len(hmins) == len(order) else hmins

    def spacing(x):
        s = np.array([hm * ratio ** max(np.log1p((ratio - 1) * abs(x - c) / hm) / np.log(ratio), 0.0)
                      for c, hm in zip(centers, hmins)])
        return min(h_max, float(s.min()))

    def march(a, b, direction):
        pts = []
        x = a
        while True:
            s = spacing(x + direction * 0.5 * spacing(x))
            nxt = x + direction * s
            if direction * (nxt - b) >= -0.3 * s:
                break
            pts.append(nxt)
            x = nxt
        return pts

    nodes = [centers[0]]
    left = march(centers[0], lo, -1)
    nodes = left[::-1] + nodes
    if not left or nodes[0] > lo:
        nodes = [lo] + nodes
    for c0, c1 in zip(centers[:-1], centers[1:]):
        mid = 0.5 * (c0 + c1)
        fw = march(c0, mid, +1)
        bw = march(c1, mid, -1)
        inner = fw + bw[::-1]
        nodes += [p for p in inner if c0 < p < c1]
        nodes.append(c1)
    right = march(centers[-1], hi, +1)
    nodes += right
    nodes.append(hi)
    a = np.unique(np.asarray(nodes))
    return a


def radial_axis(hi: float, h_min: float, ratio: float, h_max: float) -> np.ndarray:
    return graded_axis(0.0, hi, [0.0], h_min, ratio, h_max)


def graded_grid(domain: Domain, weight: WeightField | None, centers, h_min, ratio: float,
                h_max: float, layout: str = "axisymmetric", margin: float = 0.02) -> Discretization:
    """Tensor grid refined geometrically around the given ambient points.

    In the meridian layout the axial coordinate is graded at every centre's
    ``x_1`` and the radial one at the symmetry axis."""
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    lo, hi = domain.bounding_box
    pad = margin * (hi - lo)
    if layout == "axisymmetric":
        z = graded_axis(lo[0] - pad[0], hi[0] + pad[0], centers[:, 0], h_min, ratio, h_max)
        rho_hi = float(np.max(np.abs(np.concatenate([lo[1:], hi[1:]]))) + np.max(pad[1:]))
        rho = radial_axis(rho_hi, float(np.min(h_min)), ratio, h_max)
        return Discretization(domain, [z, rho], weight, layout="axisymmetric")
    axes = [graded_axis(lo[k] - pad[k], hi[k] + pad[k], centers[:, k], h_min, ratio, h_max)
            for k in range(domain.n)]
    return Discretization(domain, axes, weight, layout="cartesian")

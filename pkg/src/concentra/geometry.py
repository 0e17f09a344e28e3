"""Domain models, monomial weights and the product-of-spheres reduction.

A domain answers geometric queries in its boundary collar: distance to the
boundary, nearest boundary point, inward normal and the reflection
``x_bar = x - 2 d_x nu``.  The level-set convention is ``phi < 0`` inside.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (
    InvalidCodimension,
    InvalidDimension,
    OutsideCollar,
    OutsideDomain,
    WeightDegenerate,
)


@dataclass(frozen=True)
class CollarData:
    d_x: float
    p_x: np.ndarray
    nu: np.ndarray
    x_bar: np.ndarray


@dataclass(frozen=True)
class Reflection:
    """Mirror through the hyperplane ``{x : <x - point, normal> = 0}``."""

    point: tuple
    normal: tuple

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        nrm = np.asarray(self.normal, dtype=float)
        nrm = nrm / np.linalg.norm(nrm)
        s = (x - np.asarray(self.point)) @ nrm
        return x - 2.0 * s[..., None] * nrm


class Domain:
    """Base class.  Subclasses implement ``phi`` and ``_project``."""

    kind = "abstract"
    n: int

    def __init__(self, n: int, eta: float | None, reflections: Sequence[Reflection] = ()):
        if n < 2:
            raise InvalidDimension(f"domain dimension must be >= 2, got {n}")
        self.n = n
        self.eta = float(eta) if eta is not None else 0.2 * self.inradius
        self.reflections = tuple(reflections)

    # -- required geometry -------------------------------------------------
    def phi(self, x) -> np.ndarray:
        raise NotImplementedError

    def _project(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Return (nearest boundary points, inward unit normals) for collar points."""
        raise NotImplementedError

    @property
    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    @property
    def inradius(self) -> float:
        raise NotImplementedError

    @property
    def identifier(self) -> str:
        return self.kind

    def min_coordinate(self, i: int) -> float:
        """Lower bound of ``x_i`` over the closure (used for weight positivity)."""
        return float(self.bounding_box[0][i])

    @property
    def is_axisymmetric(self) -> bool:
        """Rotationally symmetric about the x_1 axis."""
        return False

    # -- derived queries ---------------------------------------------------
    def contains(self, x) -> np.ndarray:
        return self.phi(x) < 0

    def distance(self, x) -> np.ndarray:
        return -self.phi(x)

    def collar_arrays(self, x):
        """Vectorised collar data; no domain checks."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        p, nu = self._project(x)
        d = np.linalg.norm(p - x, axis=-1)
        return d, p, nu, x - 2.0 * d[:, None] * nu

    def collar_data(self, x) -> CollarData:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise InvalidDimension(f"expected a point in R^{self.n}")
        if not self.contains(x[None])[0]:
            raise OutsideDomain(f"{x} is not inside the domain")
        if self.distance(x[None])[0] > 2.0 * self.eta:
            raise OutsideCollar(f"{x} lies deeper than the collar width 2*eta={2 * self.eta}")
        d, p, nu, xb = self.collar_arrays(x[None])
        return CollarData(float(d[0]), p[0], nu[0], xb[0])

    def project(self, x) -> np.ndarray:
        return self._project(np.atleast_2d(np.asarray(x, dtype=float)))[0]

    def inward_normal(self, s) -> np.ndarray:
        """Inward unit normal at (or nearest to) a boundary point ``s``."""
        s = np.asarray(s, dtype=float)
        nu = self._project(np.atleast_2d(s))[1]
        return nu[0] if s.ndim == 1 else nu

    def segment_crossing(self, p, q, iters: int = 60) -> np.ndarray:
        """Fraction ``theta`` along p->q where phi changes sign (p inside, q outside)."""
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        lo = np.zeros(p.shape[0])
        hi = np.ones(p.shape[0])
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            inside = self.phi(p + mid[:, None] * (q - p)) < 0
            lo = np.where(inside, mid, lo)
            hi = np.where(inside, hi, mid)
        return 0.5 * (lo + hi)

    def sample_interior(self, count: int, rng: np.random.Generator) -> np.ndarray:
        lo, hi = self.bounding_box
        out = []
        got = 0
        while got < count:
            x = rng.uniform(lo, hi, size=(max(2 * count, 64), self.n))
            x = x[self.contains(x)]
            out.append(x)
            got += len(x)
        return np.concatenate(out)[:count]

    def sample_collar(self, count: int, rng: np.random.Generator, dmin: float, dmax: float):
        """Points with boundary distance uniform in ``[dmin, dmax]`` (rejection)."""
        out = []
        got = 0
        while got < count:
            x = self.sample_interior(max(4 * count, 256), rng)
            d = self.distance(x)
            x = x[(d >= dmin) & (d <= dmax)]
            out.append(x)
            got += len(x)
        return np.concatenate(out)[:count]

    def check_reflection_symmetry(self, weight=None, samples: int = 2000, seed: int = 0,
                                  tol: float = 1e-10) -> bool:
        """Sample-based check that every declared reflection maps the domain
        (and the weight, if given) to itself."""
        rng = np.random.default_rng(seed)
        x = self.sample_interior(samples, rng)
        for r in self.reflections:
            y = r.apply(x)
            if not np.all(self.contains(y)):
                return False
            if np.max(np.abs(self.phi(y) - self.phi(x))) > tol:
                return False
            if weight is not None and np.max(np.abs(weight(y) - weight(x))) > tol * (1 + np.max(np.abs(weight(x)))):
                return False
        return True


class Ball(Domain):
    def __init__(self, center=None, radius: float = 1.0, n: int | None = None,
                 eta: float | None = None, reflections: Sequence[Reflection] = ()):
        if center is None:
            center = np.zeros(n if n is not None else 3)
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        super().__init__(self.center.size, eta, reflections)
        self.kind = "unit-ball" if (np.allclose(self.center, 0) and self.radius == 1.0) else "shifted-ball"

    @property
    def identifier(self) -> str:
        c = ",".join(f"{v:g}" for v in self.center)
        return f"{self.kind}(c=[{c}],R={self.radius:g})"

    def phi(self, x):
        x = np.asarray(x, dtype=float)
        return np.linalg.norm(x - self.center, axis=-1) - self.radius

    def _project(self, x):
        v = x - self.center
        r = np.linalg.norm(v, axis=-1, keepdims=True)
        e = v / np.where(r > 0, r, 1.0)
        e = np.where(r > 0, e, np.eye(self.n)[0])
        return self.center + self.radius * e, -e

    def segment_crossing(self, p, q, iters: int = 60):
        # exact root of |p + s(q-p) - c| = R
        p = np.asarray(p, dtype=float) - self.center
        dq = np.asarray(q, dtype=float) - self.center - p
        a = np.einsum("ij,ij->i", dq, dq)
        b = 2 * np.einsum("ij,ij->i", p, dq)
        c = np.einsum("ij,ij->i", p, p) - self.radius ** 2
        disc = np.sqrt(np.maximum(b * b - 4 * a * c, 0.0))
        # c < 0 (p inside): the positive root, written to avoid cancellation
        return np.where(b >= 0, (-2 * c) / (b + disc), (disc - b) / (2 * a))

    @property
    def bounding_box(self):
        return self.center - self.radius, self.center + self.radius

    @property
    def inradius(self):
        return self.radius

    def min_coordinate(self, i):
        return float(self.center[i] - self.radius)

    @property
    def is_axisymmetric(self):
        return bool(np.all(self.center[1:] == 0))

    def boundary_point(self, direction) -> np.ndarray:
        d = np.asarray(direction, dtype=float)
        return self.center + self.radius * d / np.linalg.norm(d)

    def axis_reflections(self) -> list[Reflection]:
        """Mirrors in the coordinate hyperplanes through the x_1 axis."""
        out = []
        for j in range(1, self.n):
            nrm = np.zeros(self.n)
            nrm[j] = 1.0
            out.append(Reflection(tuple(self.center), tuple(nrm)))
        return out


class RoundedBox(Domain):
    """Axis-aligned box whose edges and corners are rounded with radius ``r``."""

    kind = "axis-aligned-box-with-rounded-edges"

    def __init__(self, lo, hi, rounding: float, eta: float | None = None,
                 reflections: Sequence[Reflection] = ()):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        self.rounding = float(rounding)
        if self.rounding <= 0 or np.any(self.hi - self.lo <= 2 * self.rounding):
            raise ValueError("rounding radius must be positive and below half of every side")
        super().__init__(self.lo.size, eta, reflections)

    @property
    def identifier(self):
        return f"{self.kind}(lo={self.lo.tolist()},hi={self.hi.tolist()},r={self.rounding:g})"

    def _parts(self, x):
        c = 0.5 * (self.lo + self.hi)
        half = 0.5 * (self.hi - self.lo) - self.rounding
        v = np.asarray(x, dtype=float) - c
        q = np.abs(v) - half
        return v, q

    def phi(self, x):
        _, q = self._parts(x)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(np.max(q, axis=-1), 0.0)
        return outside + inside - self.rounding

    def _project(self, x):
        v, q = self._parts(x)
        sgn = np.where(v >= 0, 1.0, -1.0)
        qp = np.maximum(q, 0.0)
        nq = np.linalg.norm(qp, axis=-1, keepdims=True)
        # deep inside the inner box: nearest face along the largest q
        k = np.argmax(q, axis=-1)
        face = np.zeros_like(q)
        face[np.arange(len(q)), k] = 1.0
        outward = np.where(nq > 0, qp / np.where(nq > 0, nq, 1.0), face) * sgn
        ph = self.phi(x)
        return x - ph[:, None] * outward, -outward

    @property
    def bounding_box(self):
        return self.lo.copy(), self.hi.copy()

    @property
    def inradius(self):
        return float(0.5 * np.min(self.hi - self.lo))

    def min_coordinate(self, i):
        return float(self.lo[i])


class HalfSpace(Domain):
    """``{x : x_n > 0}``; unbounded, so only the exact kernels use it."""

    kind = "half-space"

    def __init__(self, n: int, eta: float = 1.0):
        self._eta_default = eta
        super().__init__(n, eta)

    @property
    def identifier(self):
        return f"{self.kind}(n={self.n})"

    def phi(self, x):
        return -np.asarray(x, dtype=float)[..., -1]

    def _project(self, x):
        p = np.array(x, dtype=float)
        p[..., -1] = 0.0
        nu = np.zeros_like(p)
        nu[..., -1] = 1.0
        return p, nu

    @property
    def bounding_box(self):
        raise ValueError("a half-space has no bounding box")

    @property
    def inradius(self):
        return math.inf

    def segment_crossing(self, p, q, iters: int = 60):
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        return p[:, -1] / (p[:, -1] - q[:, -1])


class SignedDistanceDomain(Domain):
    """Domain given by a signed-distance callable (negative inside).

    Normals come from central differences of the distance.
    """

    kind = "signed-distance-callable"

    def __init__(self, sdf: Callable, bounding_box, inradius: float, eta: float | None = None,
                 reflections: Sequence[Reflection] = (), fd_step: float = 1e-6,
                 axisymmetric: bool = False, name: str = "sdf"):
        self._sdf = sdf
        self._bbox = (np.asarray(bounding_box[0], float), np.asarray(bounding_box[1], float))
        self._inradius = float(inradius)
        self.fd_step = fd_step
        self._axisym = axisymmetric
        self.name = name
        super().__init__(self._bbox[0].size, eta, reflections)

    @property
    def identifier(self):
        return f"{self.kind}({self.name})"

    def phi(self, x):
        return np.asarray(self._sdf(np.asarray(x, dtype=float)), dtype=float)

    def _gradient(self, x):
        g = np.empty_like(x)
        for i in range(self.n):
            e = np.zeros(self.n)
            e[i] = self.fd_step
            g[:, i] = (self.phi(x + e) - self.phi(x - e)) / (2 * self.fd_step)
        return g / np.linalg.norm(g, axis=-1, keepdims=True)

    def _project(self, x):
        g = self._gradient(x)
        p = x - self.phi(x)[:, None] * g
        return p, -self._gradient(p)

    @property
    def bounding_box(self):
        return self._bbox[0].copy(), self._bbox[1].copy()

    @property
    def inradius(self):
        return self._inradius

    @property
    def is_axisymmetric(self):
        return self._axisym


# ---------------------------------------------------------------------------
# symmetry reduction

@dataclass(frozen=True)
class SymmetrySpec:
    k_list: tuple
    N: int

    def __post_init__(self):
        ks = tuple(int(k) for k in self.k_list)
        object.__setattr__(self, "k_list", ks)
        if not ks or any(k < 1 for k in ks):
            raise ValueError("k_list must be a nonempty list of positive integers")
        if sum(ks) > self.N - 3:
            raise InvalidCodimension(f"k = {sum(ks)} exceeds N - 3 = {self.N - 3}")
        if self.N - sum(ks) < len(ks):
            raise InvalidCodimension("cross-section has fewer coordinates than symmetry blocks")

    @property
    def m(self) -> int:
        return len(self.k_list)

    @property
    def k(self) -> int:
        return sum(self.k_list)

    @property
    def n(self) -> int:
        return self.N - self.k


def critical_exponent(N: int, k: int) -> float:
    if N - k < 3:
        raise InvalidCodimension(f"N - k must be >= 3, got {N - k}")
    return 2.0 * (N - k) / (N - k - 2.0)


def sphere_area(k: int) -> float:
    """Surface measure of the unit sphere S^k in R^{k+1}."""
    return 2.0 * math.pi ** ((k + 1) / 2) / math.gamma((k + 1) / 2)


@dataclass(frozen=True)
class WeightField:
    value: Callable
    gradient: Callable
    hessian: Callable
    identifier: str = "weight"
    axisymmetric: bool = False  # depends only on (x_1, |x'|)

    def __call__(self, x):
        return self.value(x)


def constant_weight(n: int, c: float = 1.0) -> WeightField:
    def val(x):
        return np.full(np.shape(x)[:-1], c, dtype=float)

    def grad(x):
        return np.zeros(np.shape(x), dtype=float)

    def hess(x):
        return np.zeros(np.shape(x) + (n,), dtype=float)

    return WeightField(val, grad, hess, identifier=f"const({c:g})", axisymmetric=True)


def monomial_weight(spec: SymmetrySpec, domain: Domain | None = None) -> WeightField:
    """``a(x) = x_1^{k_1} ... x_m^{k_m}`` with exact derivatives."""
    ks = np.asarray(spec.k_list, dtype=float)
    m = spec.m
    if domain is not None:
        for i in range(m):
            if domain.min_coordinate(i) <= 0:
                raise WeightDegenerate(f"domain reaches the hyperplane x_{i + 1} <= 0")

    def val(x):
        x = np.asarray(x, dtype=float)
        return np.prod(x[..., :m] ** ks, axis=-1)

    def grad(x):
        x = np.asarray(x, dtype=float)
        g = np.zeros(x.shape)
        a = val(x)
        for i in range(m):
            g[..., i] = ks[i] * a / x[..., i]
        return g

    def hess(x):
        x = np.asarray(x, dtype=float)
        n = x.shape[-1]
        h = np.zeros(x.shape + (n,))
        a = val(x)
        for i in range(m):
            for j in range(m):
                if i == j:
                    h[..., i, i] = ks[i] * (ks[i] - 1) * a / x[..., i] ** 2
                else:
                    h[..., i, j] = ks[i] * ks[j] * a / (x[..., i] * x[..., j])
        return h

    name = "*".join(f"x{i + 1}^{k}" for i, k in enumerate(spec.k_list))
    return WeightField(val, grad, hess, identifier=name, axisymmetric=(m == 1))


def profile_point(y, spec: SymmetrySpec) -> np.ndarray:
    """Map ``(y^1, ..., y^m, z)`` in R^N to ``(|y^1|, ..., |y^m|, z)`` in R^n."""
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != spec.N:
        raise InvalidDimension(f"expected points in R^{spec.N}")
    parts = []
    start = 0
    for k in spec.k_list:
        parts.append(np.linalg.norm(y[..., start:start + k + 1], axis=-1)[..., None])
        start += k + 1
    parts.append(y[..., start:])
    return np.concatenate(parts, axis=-1)


def lift_to_invariant(u: Callable, y, spec: SymmetrySpec, domain: Domain | None = None):
    """Evaluate the Gamma-invariant lift ``v(y) = u(|y^1|, ..., |y^m|, z)``."""
    x = profile_point(y, spec)
    if domain is not None:
        inside = domain.phi(np.atleast_2d(x)) <= 0
        if not np.all(inside):
            raise OutsideDomain("profile point lies outside the cross-section domain")
    return u(x)


def integrate_lifted(u: Callable, spec: SymmetrySpec, domain: Domain, samples: int,
                     rng: np.random.Generator) -> tuple[float, float]:
    """Monte-Carlo estimate (and standard error) of the integral of the lift
    over the revolution domain in R^N.  ``u`` may return anything outside the
    cross-section; those samples are counted as zero."""
    lo, hi = domain.bounding_box
    blo, bhi = [], []
    for i, k in enumerate(spec.k_list):
        r = max(abs(lo[i]), abs(hi[i]))
        blo += [-r] * (k + 1)
        bhi += [r] * (k + 1)
    blo += list(lo[spec.m:])
    bhi += list(hi[spec.m:])
    blo, bhi = np.asarray(blo), np.asarray(bhi)
    vol = float(np.prod(bhi - blo))
    y = rng.uniform(blo, bhi, size=(samples, spec.N))
    x = profile_point(y, spec)
    inside = domain.contains(x)
    vals = np.zeros(samples)
    vals[inside] = u(x[inside])
    return vol * float(vals.mean()), vol * float(vals.std(ddof=1)) / math.sqrt(samples)


def boundary_critical_point(domain: Domain, weight: WeightField, start, steps: int = 200,
                            lr: float = 0.05, tol: float = 1e-12) -> np.ndarray:
    """Critical point of ``a`` restricted to the boundary, by projected gradient
    descent from ``start`` (minimises a along the boundary)."""
    s = domain.project(np.asarray(start, dtype=float))[0]
    for _ in range(steps):
        nu = domain.inward_normal(s)
        g = weight.gradient(s[None])[0]
        gt = g - (g @ nu) * nu
        if np.linalg.norm(gt) < tol:
            break
        s = domain.project(s - lr * gt)[0]
    return s

"""Weighted elliptic operator, the solution map i*, bubble projections and the
Newton solver for ``-div(a grad u) = a |u|^{p-2-eps} u`` with zero Dirichlet data.

Discrete conventions (shared by every module):

* ``A`` is the symmetric stiffness matrix of ``-div(a grad .)`` and ``M`` the
  diagonal matrix of dual-cell volumes, so ``(u, v) = u^T A v``.
* The residual of the equation is the load vector ``A u - M a f(u)``; its dual
  norm ``sqrt(r^T A^{-1} r)`` is the energy norm of its Riesz representative.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .bubble import BubbleParams, bubble_derivative, bubble_value, critical_power
from .errors import NoConvergence, OutsideDomain, SolverFailure
from .geometry import Reflection
from .grid import Discretization, GridField
from .linalg import SPDSolver, solve_symmetric_indefinite

ISTAR_RTOL = 1e-10


# ---------------------------------------------------------------- nonlinearity

def exponent(n: int, eps: float) -> float:
    """Power ``p - 2 - eps`` in ``f(s) = |s|^{p-2-eps} s``."""
    return critical_power(n) - 2.0 - eps


def nonlinearity(u, n: int, eps: float):
    q = exponent(n, eps)
    return np.abs(u) ** q * u


def nonlinearity_prime(u, n: int, eps: float):
    q = exponent(n, eps)
    return (q + 1.0) * np.abs(u) ** q


def primitive(u, n: int, eps: float):
    """``F(s) = |s|^{p-eps} / (p-eps)``."""
    r = critical_power(n) - eps
    return np.abs(u) ** r / r


# ---------------------------------------------------------------- linear pieces

def assemble_operator(disc: Discretization, coef: str = "a") -> sp.csr_matrix:
    return disc.stiffness(coef)


def mass_matrix(disc: Discretization) -> sp.dia_matrix:
    return sp.diags(disc.volumes)


def apply_operator(disc: Discretization, u: GridField, coef: str = "a") -> np.ndarray:
    """Load vector ``A u`` (integrated against the nodal hat functions)."""
    return disc.stiffness(coef) @ u.values


def i_star(disc: Discretization, rhs: GridField) -> GridField:
    """Solve ``-div(a grad v) = a u`` with ``v = 0`` on the boundary."""
    load = disc.volumes * disc.node_weight * rhs.values
    return GridField(_checked_solve(disc, load, "a"), disc)


def riesz(disc: Discretization, load: np.ndarray) -> np.ndarray:
    """Riesz representative of a load vector in the weighted energy product."""
    return _checked_solve(disc, np.asarray(load, dtype=float), "a")


def _checked_solve(disc, load, coef):
    A = disc.stiffness(coef)
    nb = np.linalg.norm(load)
    if nb == 0:
        return np.zeros(disc.N)
    solver = disc.solver(coef)
    x = solver.solve(load)
    r = load - A @ x
    # one sweep of iterative refinement: strongly graded grids make the
    # direct factorisation lose a couple of digits
    if np.linalg.norm(r) > 1e-14 * nb:
        x = x + solver.solve(r)
        r = load - A @ x
    # backward error: strongly graded grids give A a wide dynamic range, so the
    # residual is compared with the size of the terms that produce it
    rel = np.linalg.norm(r) / np.linalg.norm(abs(A) @ np.abs(x) + np.abs(load))
    if not rel < ISTAR_RTOL:
        raise SolverFailure(f"linear solve residual {rel:.2e} above {ISTAR_RTOL:g}")
    return x


def dual_norm(disc: Discretization, load: np.ndarray) -> float:
    load = np.asarray(load, dtype=float)
    return float(np.sqrt(max(load @ riesz(disc, load), 0.0)))


def harmonic_extension(disc: Discretization, trace: Callable) -> GridField:
    """Discrete harmonic function (plain Laplacian) with boundary values ``trace``."""
    load = disc.boundary_load(trace, coef="one")
    if not np.any(load):
        return GridField(np.zeros(disc.N), disc)
    return GridField(disc.solver("one").solve(load), disc)


def project(disc: Discretization, func: Callable) -> GridField:
    """``P W = W - (harmonic extension of the trace of W)``, on the nodes."""
    raw = func(disc.points)
    w = harmonic_extension(disc, func)
    return GridField(raw - w.values, disc)


def _check_center(disc, b: BubbleParams):
    if not bool(disc.domain.contains(b.center[None])[0]):
        raise OutsideDomain(f"bubble center {b.xi} is not inside the domain")


def project_bubble(disc: Discretization, b: BubbleParams) -> GridField:
    _check_center(disc, b)
    return project(disc, lambda x: bubble_value(b, x))


def project_bubble_derivative(disc: Discretization, b: BubbleParams, j: int) -> GridField:
    _check_center(disc, b)
    return project(disc, lambda x: bubble_derivative(b, x, j))


# ---------------------------------------------------------------- Newton

@dataclass
class NewtonResult:
    u: GridField
    iterations: int
    residual_history: list = field(default_factory=list)
    converged: bool = True
    trivial: bool = False


def equation_residual(disc: Discretization, u: np.ndarray, eps: float) -> np.ndarray:
    A = disc.stiffness("a")
    return A @ u - disc.volumes * disc.node_weight * nonlinearity(u, disc.n, eps)


def jacobian(disc: Discretization, u: np.ndarray, eps: float) -> sp.csr_matrix:
    A = disc.stiffness("a")
    q = disc.volumes * disc.node_weight * nonlinearity_prime(u, disc.n, eps)
    return (A - sp.diags(q)).tocsr()


def symmetrizer(disc: Discretization, reflections: Sequence[Reflection] | None):
    if not reflections:
        return lambda v: v
    perms = [disc.reflection_permutation(r) for r in reflections]
    perms = [p for p in perms if np.any(p != np.arange(disc.N))]

    def apply(v):
        for p in perms:
            v = 0.5 * (v + v[p])
        return v

    return apply


def newton_solve(disc: Discretization, eps: float, u0: GridField,
                 symmetrize: Sequence[Reflection] | None = None, tol: float = 1e-9,
                 max_iter: int = 60, max_halvings: int = 8, trivial_tol: float = 1e-10) -> NewtonResult:
    """Damped Newton iteration; the residual is measured in the dual energy norm."""
    n = disc.n
    if not 0 <= eps < 4.0 / (n - 2):
        raise ValueError(f"eps must lie in [0, {4.0 / (n - 2)}), got {eps}")
    sym = symmetrizer(disc, symmetrize)
    u = sym(np.array(u0.values, dtype=float))
    if not np.all(np.isfinite(u)):
        raise ValueError("initial guess is not finite")
    F = equation_residual(disc, u, eps)
    res = dual_norm(disc, F)
    history = [res]
    it = 0
    while res >= tol:
        if it >= max_iter:
            raise NoConvergence(f"Newton stalled at residual {res:.3e} after {it} iterations")
        J = jacobian(disc, u, eps)
        du = solve_symmetric_indefinite(J, -F, disc.grid_dim, precond=disc.solver("a"))
        du = sym(du)
        step = 1.0
        for _ in range(max_halvings + 1):
            trial = u + step * du
            Ft = equation_residual(disc, trial, eps)
            rt = dual_norm(disc, Ft)
            if rt < res or rt < tol:
                break
            step *= 0.5
        else:
            raise NoConvergence(f"line search failed at residual {res:.3e}")
        u, F, res = trial, Ft, rt
        history.append(res)
        it += 1
    unorm = float(np.sqrt(max(u @ (disc.stiffness("a") @ u), 0.0)))
    return NewtonResult(GridField(u, disc), it, history, True, unorm < trivial_tol)


# ---------------------------------------------------------------- spectra

def linearized_operator(disc: Discretization, u: GridField, eps: float) -> sp.csr_matrix:
    """Stiffness form of ``v -> -div(a grad v) - (p-1-eps) a |u|^{p-2-eps} v``."""
    return jacobian(disc, u.values, eps)


def linearized_spectrum(disc: Discretization, u: GridField, eps: float, count: int = 1,
                        seed: int = 0) -> np.ndarray:
    """Smallest eigenvalues of the linearisation (generalised pencil with the mass)."""
    K = linearized_operator(disc, u, eps)
    V = disc.volumes
    M = sp.diags(V)
    pot = disc.node_weight * nonlinearity_prime(u.values, disc.n, eps)
    shift = -1.01 * float(pot.max(initial=0.0)) - 1.0
    try:
        if disc.grid_dim <= 2 or disc.N <= 40_000:
            lam = spla.eigsh(K, k=count, M=M, sigma=shift, which="LA",
                             return_eigenvectors=False, tol=1e-10)
        else:
            rng = np.random.default_rng(seed)
            X = rng.standard_normal((disc.N, count + 2))
            shifted = (K - shift * M).tocsr()
            pre = SPDSolver(shifted, grid_dim=disc.grid_dim).preconditioner
            lam, _ = spla.lobpcg(shifted, X, B=M, M=pre, largest=False, tol=1e-7, maxiter=500)
            lam = np.sort(lam)[:count] + shift
    except (spla.ArpackNoConvergence, np.linalg.LinAlgError) as exc:
        raise SolverFailure(f"eigensolver failed: {exc}") from exc
    return np.sort(np.asarray(lam, dtype=float))[:count]


# ---------------------------------------------------------------- energies

def energy_functional(disc: Discretization, u: GridField, eps: float) -> float:
    """``(1/2) int a|grad u|^2 - (1/(p-eps)) int a |u|^{p-eps}``."""
    v = u.values
    kinetic = 0.5 * float(v @ (disc.stiffness("a") @ v))
    return kinetic - disc.integrate(primitive(v, disc.n, eps), weighted=True)


# ---------------------------------------------------------------- output

def save_field(path, u: GridField, extra: dict | None = None) -> None:
    """Length-prefixed JSON header followed by the full tensor array as float64."""
    disc = u.disc
    header = {
        "format": "concentra-field/1",
        "shape": list(disc.shape),
        "layout": disc.layout,
        "h_min": disc.h_min,
        "h_max": disc.h_max,
        "axes": [a.tolist() for a in disc.axes],
        "domain": disc.domain.identifier,
        "weight": disc.weight.identifier,
        "dtype": "<f8",
        "order": "C",
    }
    if extra:
        header["meta"] = extra
    blob = json.dumps(header, sort_keys=True).encode()
    data = disc.full_array(u.values).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(data.tobytes(order="C"))


def load_field(path) -> tuple[dict, np.ndarray]:
    with open(path, "rb") as fh:
        (size,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(size).decode())
        data = np.frombuffer(fh.read(), dtype="<f8")
    return header, data.reshape(header["shape"])


def line_profile(u: GridField, start, end, samples: int = 201) -> np.ndarray:
    """Rows ``(s, x_1..x_n, u)`` sampled on the segment from ``start`` to ``end``."""
    start = np.asarray(start, float)
    end = np.asarray(end, float)
    s = np.linspace(0.0, 1.0, samples)
    pts = start + s[:, None] * (end - start)
    vals = u.disc.interpolate(u.values, pts)
    return np.column_stack([s * np.linalg.norm(end - start), pts, vals])


def write_profile_csv(path, rows: np.ndarray, n: int) -> None:
    cols = ["s"] + [f"x{i + 1}" for i in range(n)] + ["u"]
    np.savetxt(path, rows, delimiter=",", header=",".join(cols), comments="", fmt="%.17g")

"""Multi-bubble ansatz, the approximate kernel and the finite-dimensional reduction.

For a configuration ``(s, d, t)`` and a small ``eps`` the ansatz is a signed sum
of projected bubbles ``V = sum sign_i P U_i`` with

    delta_i = eps^{(n-1)/(n-2)} d_i,      xi_i = s_i + eps t_i nu(s_i).

The approximate kernel ``K`` is spanned by the projected derivatives of the
bubbles in their parameters.  Everything is measured in the weighted energy
product ``(u, v) = u^T A v``.  Writing ``F(u) = A u - M a f(u)``, the projected
equation ``Pi_perp(V + phi - i*[f(V + phi)]) = 0`` with ``phi`` in ``K_perp``
is equivalent to the bordered system

    F(V + phi) = A Z c,        (A Z)^T phi = 0,

whose Jacobian ``[[J, -A Z], [-(A Z)^T, 0]]`` is symmetric and, unlike ``J``
itself, uniformly invertible as ``eps -> 0``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import elliptic as ell
from .bubble import BubbleParams
from .errors import (CorrectionFailure, InvalidConfiguration, NearDegenerateKernel,
                     SolverFailure)
from .grid import Discretization, GridField
from .linalg import factorize, solve_symmetric_indefinite

GRAM_LIMIT = 1e12

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConcentrationConfig:
    mode: str                      # "separated" or "tower"
    anchors: tuple                 # boundary points s_i (separated) or (xi_0,) (tower)
    d: tuple
    t: tuple
    signs: tuple = ()              # lambda_i in {0, 1}; ignored for towers

    def __post_init__(self):
        anchors = tuple(tuple(float(c) for c in np.ravel(a)) for a in self.anchors)
        object.__setattr__(self, "anchors", anchors)
        object.__setattr__(self, "d", tuple(float(x) for x in self.d))
        object.__setattr__(self, "t", tuple(float(x) for x in self.t))
        if self.mode not in ("separated", "tower"):
            raise InvalidConfiguration(f"unknown mode {self.mode!r}")
        k = len(self.d)
        if k == 0 or len(self.t) != k:
            raise InvalidConfiguration("d and t must be non-empty and of equal length")
        if any(x <= 0 for x in self.d + self.t):
            raise InvalidConfiguration("all d_i and t_i must be positive")
        if self.mode == "separated":
            if len(anchors) != k:
                raise InvalidConfiguration("one anchor per bubble is required")
            for i in range(k):
                for j in range(i):
                    if np.allclose(anchors[i], anchors[j]):
                        raise InvalidConfiguration("anchors must be pairwise distinct")
            signs = tuple(int(s) for s in self.signs) if self.signs else (0,) * k
            if len(signs) != k or any(s not in (0, 1) for s in signs):
                raise InvalidConfiguration("signs must be a list of 0/1 of the same length")
            object.__setattr__(self, "signs", signs)
        else:
            if len(anchors) != 1:
                raise InvalidConfiguration("a tower has exactly one anchor")
            if any(b <= a for a, b in zip(self.t, self.t[1:])):
                raise InvalidConfiguration("tower offsets must be strictly increasing")
            object.__setattr__(self, "signs", tuple(i % 2 for i in range(k)))

    @property
    def size(self) -> int:
        return len(self.d)

    @property
    def sign_factors(self) -> np.ndarray:
        return np.array([(-1.0) ** s for s in self.signs])

    def anchor(self, i: int) -> np.ndarray:
        return np.asarray(self.anchors[0 if self.mode == "tower" else i])

    def with_parameters(self, d, t) -> "ConcentrationConfig":
        return ConcentrationConfig(self.mode, self.anchors, tuple(d), tuple(t), self.signs)


def scale_exponent(n: int) -> float:
    return (n - 1.0) / (n - 2.0)


def bubble_parameters(domain, config: ConcentrationConfig, eps: float) -> list[BubbleParams]:
    n = domain.n
    out = []
    for i in range(config.size):
        s = config.anchor(i)
        nu = domain.inward_normal(s)
        xi = s + eps * config.t[i] * nu
        out.append(BubbleParams(eps ** scale_exponent(n) * config.d[i], xi, n))
    return out


def kernel_directions(disc: Discretization) -> list[int]:
    """Derivative indices spanning the kernel in the discrete function space.

    In the meridian layout only rotation-invariant functions are represented,
    so the derivatives across the symmetry axis drop out."""
    if disc.layout == "axisymmetric":
        return [0, 1]
    return list(range(disc.n + 1))


@dataclass
class AnsatzState:
    disc: Discretization
    config: ConcentrationConfig
    eps: float
    bubbles: list
    V: GridField
    kernel_basis: list
    _gram: np.ndarray = field(default=None, repr=False)
    _AZ: np.ndarray = field(default=None, repr=False)

    @property
    def Z(self) -> np.ndarray:
        if not self.kernel_basis:
            return np.zeros((self.disc.N, 0))
        return np.column_stack([z.values for z in self.kernel_basis])

    @property
    def AZ(self) -> np.ndarray:
        if self._AZ is None:
            self._AZ = self.disc.stiffness("a") @ self.Z
        return self._AZ

    @property
    def gram(self) -> np.ndarray:
        if self._gram is None:
            self._gram = self.Z.T @ self.AZ
            self._gram = 0.5 * (self._gram + self._gram.T)
        return self._gram


def build_ansatz(disc: Discretization, config: ConcentrationConfig, eps: float,
                 with_kernel: bool = True) -> AnsatzState:
    if not eps > 0:
        raise InvalidConfiguration("eps must be positive")
    bubbles = bubble_parameters(disc.domain, config, eps)
    inside = disc.domain.contains(np.array([b.center for b in bubbles]))
    if not np.all(inside):
        raise InvalidConfiguration("a bubble center falls outside the domain; eps too large")
    V = np.zeros(disc.N)
    basis = []
    for s, b in zip(config.sign_factors, bubbles):
        V += s * ell.project_bubble(disc, b).values
        if with_kernel:
            for j in kernel_directions(disc):
                basis.append(ell.project_bubble_derivative(disc, b, j))
    state = AnsatzState(disc, config, eps, bubbles, GridField(V, disc), basis)
    if with_kernel:
        _check_gram(state)
    return state


def _check_gram(state: AnsatzState) -> float:
    G = state.gram
    if G.size == 0:
        return 1.0
    s = 1.0 / np.sqrt(np.diag(G))
    cond = float(np.linalg.cond(G * np.outer(s, s)))
    if not cond < GRAM_LIMIT:
        raise NearDegenerateKernel(f"kernel Gram matrix condition number {cond:.2e}")
    return cond


def gram_condition(state: AnsatzState) -> float:
    return _check_gram(state)


def project_kernel(state: AnsatzState, w: np.ndarray) -> np.ndarray:
    """Component of ``w`` in ``K`` (the weighted-orthogonal projection Pi)."""
    if not state.kernel_basis:
        return np.zeros_like(w)
    coef = np.linalg.solve(state.gram, state.AZ.T @ w)
    return state.Z @ coef


def project_out_kernel(state: AnsatzState, w: GridField) -> GridField:
    v = np.asarray(w.values, dtype=float)
    out = v - project_kernel(state, v)
    # one refinement sweep keeps orthogonality at round-off level
    out = out - project_kernel(state, out)
    return GridField(out, state.disc)


def _energy(disc, v):
    return float(np.sqrt(max(v @ (disc.stiffness("a") @ v), 0.0)))


def residual_norm(state: AnsatzState, u: np.ndarray | None = None) -> float:
    """``|| Pi_perp(V - i*[f_eps(V)]) ||`` (``u`` replaces ``V`` when given)."""
    disc = state.disc
    v = state.V.values if u is None else u
    w = ell.riesz(disc, ell.equation_residual(disc, v, state.eps))
    return _energy(disc, project_out_kernel(state, GridField(w, disc)).values)


class _Bordered:
    """Solver for ``[[J, -A Z], [-(A Z)^T, 0]] (x, c) = (r, g)``."""

    def __init__(self, J, AZ, grid_dim):
        self.N, self.m = AZ.shape
        self.grid_dim = grid_dim
        self.J = J
        self.AZ = AZ
        # Schur complement in c: the coupling columns A Z are dense, which
        # ruins the fill-reducing ordering of a factorisation of the full block
        try:
            lu = factorize(J, grid_dim)
            self._Jsolve = lu.solve
        except SolverFailure:
            self._Jsolve = lambda v: solve_symmetric_indefinite(J, v, grid_dim)
        self._JinvAZ = np.column_stack([self._Jsolve(AZ[:, i]) for i in range(self.m)]) \
            if self.m else np.zeros((self.N, 0))
        self._schur = AZ.T @ self._JinvAZ

    def solve(self, r, g=None):
        g = np.zeros(self.m) if g is None else g
        y = self._Jsolve(r)
        if self.m == 0:
            return y, np.zeros(0)
        c = np.linalg.solve(self._schur, -g - self.AZ.T @ y)
        return y + self._JinvAZ @ c, c


@dataclass
class CorrectionResult:
    phi: GridField
    norm: float
    iterations: int
    history: list
    orthogonality: list


def solve_correction(state: AnsatzState, tol: float = 1e-8, max_iter: int = 40,
                     phi0: np.ndarray | None = None) -> CorrectionResult:
    """Find ``phi`` in ``K_perp`` with ``Pi_perp(V + phi - i*[f(V + phi)]) = 0``.

    A Picard sweep ``phi <- Pi_perp(i*[f(V + phi)] - V)`` (accepted only if it
    halves the residual) is followed by damped Newton steps on the bordered
    system.  The stopping test is on the energy norm of
    the projected equation, relative to ``||V||``.
    """
    disc, eps = state.disc, state.eps
    V = state.V.values
    AZ = state.AZ
    scale = max(_energy(disc, V), 1e-300)

    def projected(phi):
        w = ell.riesz(disc, ell.equation_residual(disc, V + phi, eps))
        return project_out_kernel(state, GridField(w, disc)).values

    def ortho(phi):
        if AZ.shape[1] == 0:
            return 0.0
        nz = np.sqrt(np.diag(state.gram))
        return float(np.max(np.abs(AZ.T @ phi) / nz) / max(_energy(disc, phi), 1e-300))

    phi = np.zeros(disc.N) if phi0 is None else project_out_kernel(state, GridField(phi0, disc)).values
    history, orth = [], []
    res = _energy(disc, projected(phi))
    # Picard sweep, kept only when it contracts: the amplitude mode of the
    # fixed-point map is repelling, so far from the solution it drifts to zero
    trial = project_out_kernel(state, GridField(phi - projected(phi), disc)).values
    rt = _energy(disc, projected(trial))
    if rt < 0.5 * res:
        phi, res = trial, rt
    history.append(res)
    orth.append(ortho(phi))
    it = 0
    while res > tol * scale:
        if it >= max_iter or not np.isfinite(res):
            raise CorrectionFailure(f"correction stalled at relative residual {res / scale:.2e}")
        F = ell.equation_residual(disc, V + phi, eps)
        J = ell.jacobian(disc, V + phi, eps)
        bord = _Bordered(J, AZ, disc.grid_dim)
        # enforce F + J dphi = AZ (c + dc) and AZ^T (phi + dphi) = 0
        dphi, _ = bord.solve(-F, AZ.T @ phi)
        step = 1.0
        for _ in range(9):
            trial = project_out_kernel(state, GridField(phi + step * dphi, disc)).values
            rt = _energy(disc, projected(trial))
            if rt < res:
                break
            step *= 0.5
        else:
            raise CorrectionFailure(f"correction line search failed at {res / scale:.2e}")
        phi, res = trial, rt
        it += 1
        history.append(res)
        orth.append(ortho(phi))
    return CorrectionResult(GridField(phi, disc), _energy(disc, phi), it, history, orth)


def coercivity_estimate(state: AnsatzState, project: bool = True, u: np.ndarray | None = None,
                        k: int = 3, eps: float = 0.0) -> float:
    """Smallest singular value of ``L = Pi_perp (I - i*[f'(V) .])`` on ``K_perp``.

    ``f'`` is the derivative of the critical nonlinearity (``eps = 0``) unless
    another exponent shift is passed.

    ``L`` is self-adjoint in the energy product, so its singular values are the
    moduli of its eigenvalues.  They are obtained from the largest eigenvalues
    of the inverse, which the bordered system applies directly.  With
    ``project=False`` the kernel constraint is dropped (full space)."""
    disc = state.disc
    v = state.V.values if u is None else u
    A = disc.stiffness("a")
    J = ell.jacobian(disc, v, eps)
    AZ = state.AZ if project else np.zeros((disc.N, 0))
    bord = _Bordered(J, AZ, disc.grid_dim)

    def apply_inverse(r):
        # r in K_perp; L phi = r  <=>  J phi - A Z c = A r, (A Z)^T phi = 0
        if project:
            r = project_out_kernel(state, GridField(r, disc)).values
        x, _ = bord.solve(A @ r)
        return x

    op = spla.LinearOperator((disc.N, disc.N), matvec=apply_inverse, dtype=float)
    rng = np.random.default_rng(0)
    v0 = rng.standard_normal(disc.N)
    if project:
        v0 = project_out_kernel(state, GridField(v0, disc)).values
    try:
        lam = spla.eigs(op, k=k, which="LM", v0=v0, tol=1e-8, maxiter=5000,
                        return_eigenvectors=False)
    except spla.ArpackNoConvergence as exc:
        raise SolverFailure(f"coercivity eigensolver did not converge: {exc}") from exc
    return float(1.0 / np.max(np.abs(lam)))


def reduced_energy_numeric(state: AnsatzState, phi: GridField | None = None) -> float:
    u = state.V.values if phi is None else state.V.values + phi.values
    return ell.energy_functional(state.disc, GridField(u, state.disc), state.eps)


def ladder_rows(records) -> list[dict]:
    """Normalise ladder records to the CSV column set."""
    cols = ("eps", "residual", "phi_norm", "coercivity", "J_reduced")
    return [{c: r.get(c, float("nan")) for c in cols} for r in records]


# ---------------------------------------------------------------- reduced solve

def _parameter_map(state: AnsatzState) -> np.ndarray:
    """Chain rule from kernel coefficients to ``(log d_1.., log t_1..)``."""
    cfg, eps = state.config, state.eps
    dirs = kernel_directions(state.disc)
    k = cfg.size
    B = np.zeros((len(dirs) * k, 2 * k))
    for i, (b, sgn) in enumerate(zip(state.bubbles, cfg.sign_factors)):
        nu = state.disc.domain.inward_normal(cfg.anchor(i))
        base = i * len(dirs)
        for col, j in enumerate(dirs):
            if j == 0:
                B[base + col, i] = sgn * b.delta
            else:
                B[base + col, k + i] = sgn * eps * cfg.t[i] * nu[j - 1]
    return B


def reduced_equations(state: AnsatzState, phi: np.ndarray) -> np.ndarray:
    """Residual of ``V + phi`` tested against the parameter derivatives of ``V``.

    With ``F(V + phi) = A Z c`` this is ``B^T G c`` (``B`` the chain rule,
    ``G`` the Gram matrix), scaled so that each entry is the multiplier of a
    unit-norm direction.  Its zeros are the critical points of the reduced
    energy."""
    F = ell.equation_residual(state.disc, state.V.values + phi, state.eps)
    B = _parameter_map(state)
    ZB = state.Z @ B
    norms = np.sqrt(np.einsum("ij,ij->j", ZB, state.disc.stiffness("a") @ ZB))
    return (ZB.T @ F) / norms


@dataclass
class ReducedSolveResult:
    config: ConcentrationConfig
    state: AnsatzState
    correction: CorrectionResult
    equations: np.ndarray
    iterations: int
    history: list


def solve_reduced(grid, config: ConcentrationConfig, eps: float,
                  tol: float = 1e-9, max_iter: int = 20, step: float = 1e-4,
                  correction_tol: float = 1e-12) -> ReducedSolveResult:
    """Zero of ``reduced_equations`` in ``(log d, log t)``.

    ``grid`` is either a fixed ``Discretization`` or a callable mapping a
    configuration to one.  A fixed grid pins the bubbles: the translation
    multipliers then carry a ripple with the period of the local spacing,
    which is larger than their true size once ``h`` is a fixed fraction of
    ``delta``.  A grid that moves with the bubble centres removes the ripple.

    Forward differences in log coordinates use a step of ``1e-4``, which
    balances truncation against the correction tolerance.
    """
    k = config.size
    make_grid = grid if callable(grid) else (lambda cfg: grid)

    def evaluate(z, warm):
        cfg = config.with_parameters(np.exp(z[:k]), np.exp(z[k:]))
        disc = make_grid(cfg)
        st = build_ansatz(disc, cfg, eps)
        phi0 = None
        if warm is not None:
            prev = warm.phi
            phi0 = prev.values if prev.disc is disc else \
                prev.disc.interpolate(prev.values, disc.points)
        try:
            cr = solve_correction(st, tol=correction_tol, phi0=phi0)
        except CorrectionFailure:
            if phi0 is None:
                raise
            cr = solve_correction(st, tol=correction_tol)
        return reduced_equations(st, cr.phi.values), st, cr

    z = np.log(np.concatenate([config.d, config.t]))
    g, st, cr = evaluate(z, None)
    history = [float(np.linalg.norm(g))]
    it = 0
    while history[-1] > tol:
        if it >= max_iter:
            raise CorrectionFailure(f"reduced solve stalled at |c| = {history[-1]:.2e}")
        jac = np.zeros((2 * k, 2 * k))
        for m in range(2 * k):
            zm = z.copy()
            zm[m] += step
            jac[:, m] = (evaluate(zm, cr)[0] - g) / step
        dz = -np.linalg.lstsq(jac, g, rcond=None)[0]
        log.debug("reduced it=%d |c|=%.3e z=%s dz=%s", it, history[-1], np.exp(z), dz)
        # keep each step inside a factor e of the current parameters
        dz *= min(1.0, 1.0 / max(np.max(np.abs(dz)), 1e-300))
        lam = 1.0
        while True:
            try:
                zt = z + lam * dz
                if config.mode == "tower" and np.any(np.diff(np.exp(zt[k:])) <= 0):
                    raise InvalidConfiguration("tower offsets lost their order")
                gt, stt, crt = evaluate(zt, cr)
                log.debug("  lam=%.3g |c|=%.3e", lam, np.linalg.norm(gt))
                if np.linalg.norm(gt) < history[-1]:
                    break
            except (CorrectionFailure, InvalidConfiguration, NearDegenerateKernel):
                pass
            lam *= 0.5
            if lam < 1e-3:
                raise CorrectionFailure(f"reduced line search failed at |c| = {history[-1]:.2e}")
        z, g, st, cr = zt, gt, stt, crt
        it += 1
        history.append(float(np.linalg.norm(g)))
    return ReducedSolveResult(st.config, st, cr, g, it, history)

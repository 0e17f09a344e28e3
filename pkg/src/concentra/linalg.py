"""Sparse solver selection: direct LU for 2-D and small problems, AMG-preconditioned
Krylov methods for large 3-D grids."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import JacobianSingular, SolverFailure

DIRECT_LIMIT_3D = 40_000
DIRECT_LIMIT_2D = 600_000


def _use_direct(n_unknowns: int, grid_dim: int) -> bool:
    limit = DIRECT_LIMIT_2D if grid_dim <= 2 else DIRECT_LIMIT_3D
    return n_unknowns <= limit


def _lu(A, symmetric_pattern=True):
    A = sp.csc_matrix(A)
    try:
        if symmetric_pattern:
            return spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.1,
                             options=dict(SymmetricMode=True))
        return spla.splu(A)
    except RuntimeError as exc:  # "Factor is exactly singular"
        raise JacobianSingular(str(exc)) from exc


class SPDSolver:
    """Solves ``A x = b`` for a symmetric positive definite ``A``."""

    def __init__(self, A, grid_dim: int = 3, rtol: float = 1e-12, direct: bool | None = None):
        self.A = sp.csr_matrix(A)
        self.rtol = rtol
        if direct is None:
            direct = _use_direct(self.A.shape[0], grid_dim)
        self.direct = direct
        if direct:
            self._lu = _lu(self.A)
            self._ml = None
        else:
            import pyamg

            self._lu = None
            self._ml = pyamg.smoothed_aggregation_solver(self.A, symmetry="symmetric")
            self._prec = self._ml.aspreconditioner(cycle="V")

    @property
    def preconditioner(self):
        """Approximate inverse usable inside other Krylov solves."""
        if self.direct:
            return spla.LinearOperator(self.A.shape, matvec=self._lu.solve)
        return self._prec

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if self.direct:
            x = self._lu.solve(b)
        else:
            if b.ndim == 2:
                return np.column_stack([self.solve(b[:, i]) for i in range(b.shape[1])])
            nb = np.linalg.norm(b)
            if nb == 0:
                return np.zeros_like(b)
            x, info = spla.cg(self.A, b, rtol=self.rtol, maxiter=2000, M=self._prec)
            if info != 0:
                raise SolverFailure(f"CG did not converge (info={info})")
        if not np.all(np.isfinite(x)):
            raise SolverFailure("linear solve produced non-finite values")
        return x


def solve_symmetric_indefinite(J, b, grid_dim: int, precond: SPDSolver | None = None,
                               rtol: float = 1e-12):
    """Solve a symmetric (possibly indefinite) system such as a Newton Jacobian."""
    b = np.asarray(b, dtype=float)
    if _use_direct(J.shape[0], grid_dim):
        lu = _lu(J)
        x = lu.solve(b)
    else:
        M = precond.preconditioner if precond is not None else None
        x, info = spla.minres(sp.csr_matrix(J), b, rtol=rtol, maxiter=3000, M=M)
        if info != 0:
            raise SolverFailure(f"MINRES did not converge (info={info})")
    if not np.all(np.isfinite(x)):
        raise JacobianSingular("Jacobian solve produced non-finite values")
    return x


def factorize(J, grid_dim: int):
    """LU factorisation object with ``solve``; only for direct-sized problems."""
    if not _use_direct(J.shape[0], grid_dim):
        raise SolverFailure("problem too large for a direct factorisation")
    return _lu(J)

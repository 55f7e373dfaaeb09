"""Saddle-point solve of the block-constrained quadratic energy.

    [2K  C^T] [v]   [ b ]
    [C    0 ] [q] = [-c0]
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import assemble
from .errors import DomainError, SolverError

log = logging.getLogger(__name__)

PRIMAL_TOL = 1e-8
CONSTRAINT_TOL = 1e-10


class KKTFactorization:
    """Owns one factorization of a system's KKT matrix.

    The factored matrix is the quasi-definite ``[[2K, C^T], [C, -delta I]]``
    with a tiny ``delta``. Quasi-definite matrices factor stably in any
    symmetric order, so SuperLU can keep its fill-reducing ordering and skip
    pivoting. Iterative refinement against the exact KKT matrix removes the
    perturbation. If refinement stalls, the exact matrix is factored with
    threshold pivoting instead.

    Forward and adjoint solves share the factorization; the matrix is
    symmetric, so the adjoint needs no transpose solve. Not safe for
    concurrent use.
    """

    delta_rel = 1e-10
    max_refine = 8

    def __init__(self, system):
        self.system = system
        n, m = system.n_free, system.C.shape[0]
        self.n, self.m = n, m
        self._lu = None
        self.pivoting = False
        if n == 0:
            self.matrix = sp.csc_matrix((m, m))
            return
        A = sp.bmat([[2.0 * system.K, system.C.T], [system.C, None]], format="csc")
        if not np.all(np.isfinite(A.data)):
            raise DomainError("KKT matrix has non-finite entries")
        self.matrix = A
        self.delta = 0.0
        if m:
            kmax = float(abs(system.K).max())
            cmax = float(abs(system.C).max())
            self.delta = self.delta_rel * cmax**2 / max(kmax, 1e-300)
        reg = sp.bmat([[2.0 * system.K, system.C.T], [system.C, -self.delta * sp.eye(m)]], format="csc")
        try:
            self._lu = spla.splu(reg, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                                 options=dict(SymmetricMode=True))
        except RuntimeError:
            self._factor_pivoting()

    def _factor_pivoting(self):
        log.info("falling back to a pivoting LU of the KKT matrix")
        self.pivoting = True
        try:
            self._lu = spla.splu(self.matrix, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.1)
        except RuntimeError as exc:
            raise SolverError(
                f"KKT matrix is singular ({exc}); a region may be unconstrained by friction "
                "or Dirichlet support, or block rows are degenerate"
            ) from exc

    def _refined(self, rhs):
        x = self._lu.solve(rhs)
        target = 1e-14 * (1 + np.max(np.abs(rhs)))
        prev = np.inf
        for _ in range(self.max_refine):
            r = rhs - self.matrix @ x
            err = np.max(np.abs(r))
            if err <= target or err > 0.5 * prev or not np.isfinite(err):
                break
            prev = err
            x += self._lu.solve(r)
        r = rhs - self.matrix @ x
        return x, float(np.max(np.abs(r)))

    def solve(self, top, bottom=None):
        top = np.asarray(top, dtype=float)
        bottom = np.zeros(self.m) if bottom is None else np.asarray(bottom, dtype=float)
        if top.shape != (self.n,) or bottom.shape != (self.m,):
            raise DomainError("right-hand side does not match the factorized system")
        if not (np.all(np.isfinite(top)) and np.all(np.isfinite(bottom))):
            raise DomainError("non-finite right-hand side")
        if self.n == 0:
            return np.zeros(0), np.zeros(self.m)
        rhs = np.concatenate([top, bottom])
        x, err = self._refined(rhs)
        if not (np.isfinite(err) and err <= 1e-11 * (1 + np.max(np.abs(rhs)))) and not self.pivoting:
            self._factor_pivoting()
            x, err = self._refined(rhs)
        if not np.all(np.isfinite(x)):
            raise SolverError("KKT solve produced non-finite values (singular system)")
        return x[: self.n], x[self.n :]


@dataclass
class FlowState:
    v: np.ndarray  # full nodal DOF vector, Dirichlet values filled in
    multipliers: np.ndarray
    v_free: np.ndarray
    residuals: dict = field(default_factory=dict)
    factorization: KKTFactorization = None

    def velocity(self, dim):
        return self.v.reshape(-1, dim)


def check_residuals(state, system):
    """Recompute both KKT residual rows and flag violations."""
    v, q = state.v_free, state.multipliers
    if system.n_free:
        primal = 2.0 * (system.K @ v) + system.C.T @ q - system.b
        cons = system.C @ v + system.c0
    else:
        primal, cons = np.zeros(0), system.c0.copy()
    rp = float(np.max(np.abs(primal))) if primal.size else 0.0
    rc = float(np.max(np.abs(cons))) if cons.size else 0.0
    bnorm = float(np.max(np.abs(system.b))) if system.b.size else 0.0
    dir_err = float(np.max(np.abs(state.v[system.dirichlet.dofs] - system.dirichlet.values))) if len(
        system.dirichlet
    ) else 0.0
    return {
        "primal": rp,
        "constraint": rc,
        "primal_tol": PRIMAL_TOL * (1 + bnorm),
        "constraint_tol": CONSTRAINT_TOL,
        "dirichlet": dir_err,
        "ok": rp <= PRIMAL_TOL * (1 + bnorm) and rc <= CONSTRAINT_TOL and dir_err == 0.0,
    }


def solve_kkt(system, factorization=None):
    fac = factorization if factorization is not None else KKTFactorization(system)
    if fac.system is not system:
        raise DomainError("factorization belongs to a different system")
    v_free, q = fac.solve(system.b, -system.c0)
    state = FlowState(v=system.full_field(v_free), multipliers=q, v_free=v_free, factorization=fac)
    state.residuals = check_residuals(state, system)
    if not state.residuals["ok"]:
        log.warning("KKT residuals above tolerance: %s", state.residuals)
    return state


def simulate(design, task, extra_dirichlet=None, material=None, use_blocks=None):
    """Forward simulation ``v = F(theta)`` for a task's boundary conditions.

    Returns ``(state, system)``. ``material`` overrides the tensors built from
    ``design`` (used by ablations that swap in isotropic tensors).
    """
    from .material import build_tensors

    grid = task.grid
    if material is None:
        design.validate(grid.n_cells)
        material = build_tensors(design, task.hyper)
    dirichlet = task.dirichlet()
    if extra_dirichlet is not None:
        dirichlet = dirichlet.union(extra_dirichlet)
    blocks = task.use_blocks if use_blocks is None else use_blocks
    system = assemble(grid, material, dirichlet, mu=task.hyper.mu, use_blocks=blocks)
    return solve_kkt(system), system

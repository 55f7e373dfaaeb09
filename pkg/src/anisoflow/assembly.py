"""Element matrices, global assembly with Dirichlet condensation, block constraints.

The discrete energy of a nodal velocity vector ``v`` is ``v^T K v`` where ``K``
is the sum of per-cell element matrices for the three energy terms:

* viscosity: 2x2(x2) Gauss quadrature of ``mu tr(grad v Km grad v^T)``,
* divergence: ``lam Flux(C)^2 / W_C`` with the exact cell net flux,
* friction: vertex quadrature ``W_C / 2^d sum_I v_I^T Kf v_I``.

``K`` here is half the Hessian; the solver applies the factor 2.
"""

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from . import kernels
from .errors import ConfigurationError, DomainError
from .grid import GridSpec

log = logging.getLogger(__name__)


@dataclass
class DirichletSet:
    """Prescribed values for a set of global velocity DOFs."""

    dofs: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.dofs = np.asarray(self.dofs, dtype=np.int64).ravel()
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.dofs.shape != self.values.shape:
            raise DomainError("Dirichlet dofs and values differ in length")
        if len(np.unique(self.dofs)) != len(self.dofs):
            raise DomainError("a DOF appears more than once in the Dirichlet set")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("non-finite Dirichlet value")
        order = np.argsort(self.dofs, kind="stable")
        self.dofs, self.values = self.dofs[order], self.values[order]

    @classmethod
    def empty(cls):
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0))

    @classmethod
    def from_mapping(cls, mapping):
        items = sorted(mapping.items())
        return cls([k for k, _ in items], [v for _, v in items])

    def __len__(self):
        return len(self.dofs)

    def union(self, other):
        """Union of two disjoint sets; overlapping DOFs must agree exactly."""
        common, ia, ib = np.intersect1d(self.dofs, other.dofs, return_indices=True)
        if len(common) and np.any(self.values[ia] != other.values[ib]):
            raise ConfigurationError("conflicting Dirichlet values on shared DOFs")
        keep = np.setdiff1d(np.arange(len(other)), ib)
        return DirichletSet(
            np.concatenate([self.dofs, other.dofs[keep]]), np.concatenate([self.values, other.values[keep]])
        )

    def full_vector(self, n_dofs):
        out = np.zeros(n_dofs)
        out[self.dofs] = self.values
        return out


# -- element matrices (single cell) -----------------------------------------------


def element_viscosity(Km, mu, grid):
    K = np.asarray(Km, dtype=float)[None]
    d = grid.dim
    return kernels.element_values_numpy(K, np.zeros(1), np.zeros((1, d, d)), mu, grid.h)[0]


def cell_flux_coefficients(grid):
    """Linear functional ``f`` with ``f @ v_e`` equal to the cell net flux."""
    _, fref = kernels.reference_operators(grid.dim)
    return grid.h ** (grid.dim - 1) * fref.ravel()


def element_divergence(lam_c, grid):
    if lam_c < 0:
        raise DomainError("lambda must be nonnegative")
    f = cell_flux_coefficients(grid)
    return (lam_c / grid.cell_volume) * np.outer(f, f)


def element_friction(Kf, grid):
    nn = grid.n_corners
    return (grid.cell_volume / nn) * np.kron(np.eye(nn), np.asarray(Kf, dtype=float))


# -- global assembly ------------------------------------------------------------------


@dataclass(frozen=True)
class _Pattern:
    inverse: np.ndarray  # COO entry -> CSR slot
    indptr: np.ndarray
    indices: np.ndarray
    nnz: int


@lru_cache(maxsize=16)
def _pattern(grid: GridSpec):
    dofs = grid.cell_dof_table
    ne = dofs.shape[1]
    rows = np.repeat(dofs, ne, axis=1).ravel()
    cols = np.tile(dofs, (1, ne)).ravel()
    keys = rows.astype(np.int64) * grid.n_dofs + cols
    uniq, inverse = np.unique(keys, return_inverse=True)
    urows = uniq // grid.n_dofs
    indices = (uniq % grid.n_dofs).astype(np.int32)
    indptr = np.zeros(grid.n_dofs + 1, dtype=np.int64)
    np.add.at(indptr, urows + 1, 1)
    indptr = np.cumsum(indptr).astype(np.int32)
    return _Pattern(inverse=inverse, indptr=indptr, indices=indices, nnz=len(uniq))


def scatter(grid, element_values):
    """Sum per-cell element matrices into a CSR matrix with a fixed pattern.

    The reduction runs in a fixed order (``np.bincount``), so results are
    bitwise reproducible.
    """
    pat = _pattern(grid)
    data = np.bincount(pat.inverse, weights=np.asarray(element_values).ravel(), minlength=pat.nnz)
    return sp.csr_matrix((data, pat.indices, pat.indptr), shape=(grid.n_dofs, grid.n_dofs))


def assemble_full(grid, material, mu=1.0):
    """Global energy matrix over all nodal DOFs (no boundary conditions)."""
    vals = kernels.element_values(material.Km, material.lam, material.Kf, mu, grid.h)
    return scatter(grid, vals)


@dataclass
class StokesSystem:
    K: sp.csr_matrix  # free x free
    b: np.ndarray
    e0: float
    C: sp.csr_matrix  # retained block rows x free
    c0: np.ndarray
    free: np.ndarray
    dirichlet: DirichletSet
    grid: GridSpec
    block_ids: np.ndarray
    K_full: sp.csr_matrix
    material: object = None
    mu: float = 1.0

    @property
    def n_free(self):
        return len(self.free)

    def full_field(self, v_free):
        v = self.dirichlet.full_vector(self.grid.n_dofs)
        v[self.free] = v_free
        return v

    def energy(self, v_free):
        """Full quadratic energy ``v^T K_full v`` of the reconstructed field."""
        return float(v_free @ (self.K @ v_free) - self.b @ v_free + self.e0)


@lru_cache(maxsize=16)
def _block_matrix(grid: GridSpec):
    f = cell_flux_coefficients(grid)
    dofs = grid.cell_dof_table
    rows = np.repeat(grid.cell_block_table, dofs.shape[1])
    C = sp.coo_matrix((np.tile(f, grid.n_cells), (rows, dofs.ravel())), shape=(grid.n_blocks, grid.n_dofs))
    C = C.tocsr()
    C.sum_duplicates()
    C.eliminate_zeros()
    return C


def block_constraint_matrix(grid):
    """All-DOF block flux matrix: row ``b`` dotted with ``v`` is Flux(block b)."""
    return _block_matrix(grid)


def _independent_rows(C, tol=1e-10):
    """Indices of a maximal linearly independent subset of C's rows."""
    n = C.shape[0]
    if n == 0:
        return np.arange(0)
    G = (C @ C.T).toarray()
    _, R, piv = scipy.linalg.qr(G, pivoting=True, mode="economic")
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > tol * max(diag[0], 1e-300)))
    return np.sort(piv[:rank])


def assemble_block_constraints(grid, dirichlet, free=None):
    """Block rows restricted to free DOFs and their Dirichlet offset.

    Returns ``(C_free, c0, block_ids)`` such that the constraint reads
    ``C_free @ v_free + c0 = 0``. Rows with no free coefficients, and rows
    linearly dependent on others, are dropped.
    """
    if free is None:
        free = np.setdiff1d(np.arange(grid.n_dofs), dirichlet.dofs)
    C = block_constraint_matrix(grid)
    Cf = C[:, free]
    c0 = C[:, dirichlet.dofs] @ dirichlet.values
    scale = grid.h ** (grid.dim - 1)
    rownorm = np.sqrt(np.asarray(Cf.multiply(Cf).sum(axis=1)).ravel())
    keep = np.flatnonzero(rownorm > 1e-12 * scale)
    dropped = np.setdiff1d(np.arange(C.shape[0]), keep)
    if len(dropped):
        bad = dropped[np.abs(c0[dropped]) > 1e-12 * scale]
        if len(bad):
            log.warning("blocks %s are fully prescribed with nonzero net flux; dropped", bad.tolist())
    Cf, c0 = Cf[keep], c0[keep]
    ind = _independent_rows(Cf)
    if len(ind) < len(keep):
        log.info("dropping %d linearly dependent block constraint rows", len(keep) - len(ind))
    return Cf[ind].tocsr(), c0[ind], keep[ind]


def assemble(grid, material, dirichlet, mu=1.0, use_blocks=True):
    """Condensed quadratic form ``E = v^T K v - b^T v + e0`` over free DOFs."""
    if dirichlet is None:
        dirichlet = DirichletSet.empty()
    if len(dirichlet) and (dirichlet.dofs.min() < 0 or dirichlet.dofs.max() >= grid.n_dofs):
        raise DomainError("Dirichlet DOF out of range")
    if material.Km.shape[0] != grid.n_cells:
        raise DomainError(f"material has {material.Km.shape[0]} cells, grid has {grid.n_cells}")
    K_full = assemble_full(grid, material, mu)
    free = np.setdiff1d(np.arange(grid.n_dofs), dirichlet.dofs)
    dd, vd = dirichlet.dofs, dirichlet.values
    rows_free = K_full[free]
    K = rows_free[:, free].tocsr()
    b = -2.0 * (rows_free[:, dd] @ vd)
    e0 = float(vd @ (K_full[dd][:, dd] @ vd))
    if use_blocks and len(free):
        C, c0, block_ids = assemble_block_constraints(grid, dirichlet, free)
    else:
        C, c0, block_ids = sp.csr_matrix((0, len(free))), np.zeros(0), np.zeros(0, dtype=np.int64)
    return StokesSystem(
        K=K, b=b, e0=e0, C=C, c0=c0, free=free, dirichlet=dirichlet, grid=grid,
        block_ids=block_ids, K_full=K_full, material=material, mu=mu,
    )

"""Regular-grid topology, bi/trilinear shape functions and Gauss quadrature.

Conventions used everywhere in the package:

* cells and nodes are numbered x-fastest lexicographically,
* a cell's 2^d corner nodes are listed in the same x-fastest order, so local
  corner ``a`` sits at offset ``(a & 1, (a >> 1) & 1, (a >> 2) & 1)``,
* velocity degrees of freedom are node-major: ``dof = node * dim + component``.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DomainError


def corner_offsets(dim):
    """(2^d, d) integer offsets of the cell corners in x-fastest order."""
    a = np.arange(2**dim)
    return np.stack([(a >> k) & 1 for k in range(dim)], axis=1)


@dataclass(frozen=True)
class GridSpec:
    dim: int
    cells: tuple
    block_size: int = 8

    def __post_init__(self):
        cells = tuple(int(c) for c in self.cells)
        object.__setattr__(self, "cells", cells)
        if self.dim not in (2, 3):
            raise DomainError(f"dim must be 2 or 3, got {self.dim}")
        if len(cells) != self.dim:
            raise DomainError(f"expected {self.dim} cell counts, got {len(cells)}")
        if any(c < 1 for c in cells):
            raise DomainError(f"cell counts must be positive, got {cells}")
        if int(self.block_size) < 1:
            raise DomainError(f"block size must be positive, got {self.block_size}")
        object.__setattr__(self, "block_size", int(self.block_size))

    @property
    def h(self):
        return 1.0 / max(self.cells)

    @property
    def cell_volume(self):
        return self.h**self.dim

    @property
    def nodes_per_axis(self):
        return tuple(c + 1 for c in self.cells)

    @property
    def n_cells(self):
        return int(np.prod(self.cells))

    @property
    def n_nodes(self):
        return int(np.prod(self.nodes_per_axis))

    @property
    def n_dofs(self):
        return self.n_nodes * self.dim

    @property
    def n_corners(self):
        return 2**self.dim

    @property
    def blocks_per_axis(self):
        B = self.block_size
        return tuple(-(-c // B) for c in self.cells)

    @property
    def n_blocks(self):
        return int(np.prod(self.blocks_per_axis))

    # -- index conversions -------------------------------------------------

    def _linearize(self, coords, shape, what):
        coords = tuple(int(c) for c in coords)
        if len(coords) != self.dim:
            raise DomainError(f"{what} index needs {self.dim} coordinates, got {coords}")
        for c, n in zip(coords, shape):
            if not 0 <= c < n:
                raise DomainError(f"{what} index {coords} out of range for shape {shape}")
        idx, stride = 0, 1
        for c, n in zip(coords, shape):
            idx += c * stride
            stride *= n
        return idx

    def _delinearize(self, idx, shape, what):
        total = int(np.prod(shape))
        idx = int(idx)
        if not 0 <= idx < total:
            raise DomainError(f"{what} index {idx} out of range [0, {total})")
        out = []
        for n in shape:
            out.append(idx % n)
            idx //= n
        return tuple(out)

    def cell_index(self, coords):
        return self._linearize(coords, self.cells, "cell")

    def cell_coords(self, idx):
        return self._delinearize(idx, self.cells, "cell")

    def node_index(self, coords):
        return self._linearize(coords, self.nodes_per_axis, "node")

    def node_coords(self, idx):
        return self._delinearize(idx, self.nodes_per_axis, "node")

    def _as_cell_coords(self, cell):
        if np.ndim(cell) == 0:
            return self.cell_coords(cell)
        return self.cell_coords(self.cell_index(cell))

    def cell_nodes(self, cell):
        """Linear node indices of a cell's corners, x-fastest."""
        base = np.asarray(self._as_cell_coords(cell))
        return np.array([self.node_index(base + off) for off in corner_offsets(self.dim)])

    def block_of(self, cell):
        """Block coordinates containing ``cell`` (floor division per axis)."""
        return tuple(c // self.block_size for c in self._as_cell_coords(cell))

    def block_index(self, block_coords):
        return self._linearize(block_coords, self.blocks_per_axis, "block")

    # -- vectorized tables ---------------------------------------------------

    @cached_property
    def cell_coord_table(self):
        """(n_cells, dim) integer coordinates of every cell."""
        grids = np.meshgrid(*[np.arange(n) for n in self.cells], indexing="ij")
        return np.stack([g.ravel(order="F") for g in grids], axis=1)

    @cached_property
    def node_coord_table(self):
        grids = np.meshgrid(*[np.arange(n) for n in self.nodes_per_axis], indexing="ij")
        return np.stack([g.ravel(order="F") for g in grids], axis=1)

    @cached_property
    def node_strides(self):
        return np.cumprod((1,) + self.nodes_per_axis[:-1])

    @cached_property
    def cell_node_table(self):
        """(n_cells, 2^d) node indices of all cells."""
        corners = self.cell_coord_table[:, None, :] + corner_offsets(self.dim)[None, :, :]
        return corners @ self.node_strides

    @cached_property
    def cell_dof_table(self):
        """(n_cells, 2^d * dim) velocity DOFs per cell, node-major."""
        nodes = self.cell_node_table
        d = self.dim
        return (nodes[:, :, None] * d + np.arange(d)[None, None, :]).reshape(self.n_cells, -1)

    @cached_property
    def cell_block_table(self):
        bcoords = self.cell_coord_table // self.block_size
        strides = np.cumprod((1,) + self.blocks_per_axis[:-1])
        return bcoords @ strides

    def node_positions(self):
        return self.node_coord_table * self.h

    def cell_centers(self):
        return (self.cell_coord_table + 0.5) * self.h

    def cell_array(self, values):
        """Reshape a per-cell vector into an array indexed ``[i, j(, k)]``."""
        return np.asarray(values).reshape(self.cells, order="F")

    def node_array(self, values):
        values = np.asarray(values)
        if values.ndim == 1:
            return values.reshape(self.nodes_per_axis, order="F")
        return np.stack(
            [values[:, k].reshape(self.nodes_per_axis, order="F") for k in range(values.shape[1])], axis=-1
        )


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray


def gauss_rule(dim):
    """Tensor-product 2-point Gauss-Legendre rule on the unit reference cell."""
    g = np.array([(1 - 1 / np.sqrt(3)) / 2, (1 + 1 / np.sqrt(3)) / 2])
    mesh = np.meshgrid(*([g] * dim), indexing="ij")
    pts = np.stack([m.ravel(order="F") for m in mesh], axis=1)
    return QuadratureRule(points=pts, weights=np.full(len(pts), 1.0 / len(pts)))


def shape_values_and_gradients(point, h=1.0):
    """Multilinear basis values and physical gradients at a reference point.

    Returns ``(values, grads)`` with shapes (2^d,) and (2^d, d); gradients are
    scaled by ``1/h``. No clamping is done for points outside the cell.
    """
    xi = np.asarray(point, dtype=float)
    d = xi.shape[0]
    offs = corner_offsets(d)
    # per-axis factor: xi if the corner sits at 1, else 1 - xi
    fac = np.where(offs == 1, xi[None, :], 1.0 - xi[None, :])
    dfac = np.where(offs == 1, 1.0, -1.0)
    values = np.prod(fac, axis=1)
    grads = np.empty((len(offs), d))
    for k in range(d):
        others = np.prod(np.delete(fac, k, axis=1), axis=1)
        grads[:, k] = dfac[:, k] * others / h
    return values, grads

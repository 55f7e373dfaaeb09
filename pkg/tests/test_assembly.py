import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anisoflow import kernels
from anisoflow.assembly import (DirichletSet, assemble, assemble_block_constraints, assemble_full,
                                block_constraint_matrix, cell_flux_coefficients, element_divergence,
                                element_friction, element_viscosity)
from anisoflow.errors import ConfigurationError, DomainError
from anisoflow.grid import GridSpec
from anisoflow.material import DesignField, MaterialHyperparams, MaterialTensors, build_tensors

from conftest import random_design
from oracles import dense_assembly, element_matrix


def random_spd(rng, d, scale=1.0):
    A = rng.standard_normal((d, d))
    return scale * (A @ A.T) / d


def field_on_cell(grid, fn, cell=0):
    """Nodal values of a vector function on one cell, node-major."""
    nodes = grid.cell_nodes(cell)
    pos = grid.node_positions()[nodes]
    return np.concatenate([fn(p) for p in pos])


def field(grid, fn):
    return np.concatenate([fn(p) for p in grid.node_positions()])


@pytest.mark.parametrize("dim", [2, 3])
def test_element_matrices_match_oracle(dim, rng):
    for h in (1.0, 0.125):
        for _ in range(5):
            Km, Kf = random_spd(rng, dim), random_spd(rng, dim, 50.0)
            lam, mu = rng.uniform(0.1, 100), rng.uniform(0.5, 2)
            ref, _ = element_matrix(Km, lam, Kf, mu, h, dim)
            for fn in (kernels.element_values_numpy, kernels.element_values_numba):
                got = fn(Km[None], np.array([lam]), Kf[None], mu, h)[0]
                assert np.max(np.abs(got - ref)) <= 1e-12 * max(1.0, np.max(np.abs(ref)))


@pytest.mark.parametrize("dim", [2, 3])
def test_single_term_element_matrices(dim, rng):
    g = GridSpec(dim, (4,) * dim)
    Km, Kf = random_spd(rng, dim), random_spd(rng, dim)
    zero = np.zeros((dim, dim))
    ref_m, flux = element_matrix(Km, 0.0, zero, 1.3, g.h, dim)
    assert np.allclose(element_viscosity(Km, 1.3, g), ref_m, rtol=0, atol=1e-12)
    assert np.allclose(cell_flux_coefficients(g), flux, rtol=0, atol=1e-15)
    ref_d, _ = element_matrix(zero, 2.5, zero, 1.0, g.h, dim)
    assert np.allclose(element_divergence(2.5, g), ref_d, rtol=0, atol=1e-12)
    ref_f, _ = element_matrix(zero, 0.0, Kf, 1.0, g.h, dim)
    assert np.allclose(element_friction(Kf, g), ref_f, rtol=0, atol=1e-12)


def test_viscosity_examples():
    g = GridSpec(2, (1, 1))
    assert np.all(element_viscosity(np.zeros((2, 2)), 1.0, g) == 0)
    L = element_viscosity(np.eye(2), 1.0, g)
    const = field_on_cell(g, lambda p: np.array([0.3, -1.2]))
    assert abs(const @ L @ const) < 1e-14
    vx = field_on_cell(g, lambda p: np.array([p[0], 0.0]))
    assert vx @ L @ vx == pytest.approx(1.0, abs=1e-14)


def test_flux_examples():
    g = GridSpec(2, (1, 1))
    f = cell_flux_coefficients(g)
    assert abs(f @ field_on_cell(g, lambda p: np.array([2.0, 5.0]))) < 1e-15
    assert f @ field_on_cell(g, lambda p: np.array([p[0], 0.0])) == pytest.approx(1.0, abs=1e-15)
    assert abs(f @ field_on_cell(g, lambda p: np.array([p[1], 0.0]))) < 1e-15
    # the hand formula: h(1/2(u10+u11) + 1/2(v01+v11) - 1/2(u00+u01) - 1/2(v00+v10))
    v = np.random.default_rng(0).standard_normal(8)
    u, w = v[0::2], v[1::2]  # corners ordered 00, 10, 01, 11
    hand = 0.5 * (u[1] + u[3]) + 0.5 * (w[2] + w[3]) - 0.5 * (u[0] + u[2]) - 0.5 * (w[0] + w[1])
    assert f @ v == pytest.approx(hand, abs=1e-15)


def test_divergence_examples():
    g = GridSpec(2, (1, 1))
    assert np.all(element_divergence(0.0, g) == 0)
    M = element_divergence(2.0, g)
    vx = field_on_cell(g, lambda p: np.array([p[0], 0.0]))
    assert vx @ M @ vx == pytest.approx(2.0, abs=1e-14)
    rot = field_on_cell(g, lambda p: np.array([p[1], -p[0]]))
    assert abs(rot @ M @ rot) < 1e-14
    assert np.linalg.matrix_rank(M) == 1
    with pytest.raises(DomainError):
        element_divergence(-1.0, g)


def test_friction_examples():
    g = GridSpec(2, (1, 1))
    assert np.all(element_friction(np.zeros((2, 2)), g) == 0)
    v = np.tile([1.0, 0.0], 4)
    assert v @ element_friction(np.eye(2), g) @ v == pytest.approx(1.0)
    n = np.array([0.6, 0.8])
    t = np.tile([-0.8, 0.6], 4)
    assert abs(t @ element_friction(7.0 * np.outer(n, n), g) @ t) < 1e-13


def _material(grid, rng):
    return build_tensors(random_design(grid.n_cells, grid.dim, rng), MaterialHyperparams(kf_max=1e3))


@pytest.mark.parametrize("dim,cells", [(2, (3, 3)), (3, (2, 2, 2))])
def test_global_assembly_matches_dense_scatter(dim, cells, rng):
    g = GridSpec(dim, cells)
    mat = _material(g, rng)
    K = assemble_full(g, mat, mu=1.7).toarray()
    ref = dense_assembly(g, mat, mu=1.7)
    assert np.max(np.abs(K - ref)) <= 1e-12 * np.max(np.abs(ref))
    assert np.array_equal(K, K.T)


def test_assembly_is_deterministic_and_pattern_fixed(rng):
    g = GridSpec(2, (5, 4))
    m1, m2 = _material(g, rng), _material(g, rng)
    d = DirichletSet(np.arange(6), np.linspace(0, 1, 6))
    s1, s1b, s2 = assemble(g, m1, d), assemble(g, m1, d), assemble(g, m2, d)
    assert np.array_equal(s1.K.data, s1b.K.data)
    assert np.array_equal(s1.K.indices, s2.K.indices) and np.array_equal(s1.K.indptr, s2.K.indptr)


def test_condensation_one_cell():
    g = GridSpec(2, (1, 1))
    mat = build_tensors(DesignField([0.7], [0.4], [[0.3]]), MaterialHyperparams())
    Kfull = assemble_full(g, mat).toarray()
    d = DirichletSet([0, 1], [0.5, -0.25])
    s = assemble(g, mat, d, use_blocks=False)
    free = np.arange(2, 8)
    assert np.allclose(s.b, -2 * Kfull[np.ix_(free, [0, 1])] @ [0.5, -0.25], rtol=1e-14, atol=1e-14)
    assert np.allclose(s.K.toarray(), Kfull[np.ix_(free, free)])
    vf = np.random.default_rng(2).standard_normal(6)
    full = s.full_field(vf)
    assert s.energy(vf) == pytest.approx(full @ Kfull @ full, rel=1e-12)


def test_all_dirichlet_and_unloaded():
    g = GridSpec(2, (2, 2))
    mat = build_tensors(DesignField.uniform(4, 2), MaterialHyperparams())
    vals = np.random.default_rng(0).standard_normal(g.n_dofs)
    s = assemble(g, mat, DirichletSet(np.arange(g.n_dofs), vals))
    assert s.n_free == 0 and s.C.shape == (0, 0)
    assert s.e0 == pytest.approx(vals @ assemble_full(g, mat).toarray() @ vals, rel=1e-12)
    s = assemble(g, mat, DirichletSet.empty())
    assert np.all(s.b == 0)


def test_dirichlet_set_validation():
    with pytest.raises(DomainError):
        DirichletSet([1, 1], [0.0, 0.0])
    with pytest.raises(DomainError):
        DirichletSet([1], [np.inf])
    a = DirichletSet([0, 1], [1.0, 2.0])
    with pytest.raises(ConfigurationError):
        a.union(DirichletSet([1], [3.0]))
    assert len(a.union(DirichletSet([1, 4], [2.0, 5.0]))) == 3


def test_isotropic_stokes_reduction():
    # eps = 1 and Kf = 0: energy of a linear field is mu |grad v|^2 + lam0 (div v)^2 over the unit box
    g = GridSpec(2, (6, 6))
    n = g.n_cells
    mat = MaterialTensors(Km=np.tile(np.eye(2), (n, 1, 1)), Kf=np.zeros((n, 2, 2)), lam=np.full(n, 3.0))
    a, b, c, e = 0.7, -1.1, 0.4, 2.0
    v = field(g, lambda p: np.array([a * p[0] + b * p[1], c * p[0] + e * p[1]]))
    K = assemble_full(g, mat, mu=1.5)
    assert v @ (K @ v) == pytest.approx(1.5 * (a * a + b * b + c * c + e * e) + 3.0 * (a + e) ** 2, rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 3))
def test_energy_psd(seed, dim):
    rng = np.random.default_rng(seed)
    g = GridSpec(dim, (3,) * dim)
    z = DesignField(rng.uniform(0, 1, g.n_cells), rng.uniform(0, 1, g.n_cells),
                    rng.uniform(-4, 4, (g.n_cells, dim - 1)))
    K = assemble_full(g, build_tensors(z, MaterialHyperparams()))
    for _ in range(5):
        v = rng.standard_normal(g.n_dofs)
        assert v @ (K @ v) >= -1e-9 * np.linalg.norm(v) ** 2


def test_block_constraint_examples():
    g = GridSpec(2, (2, 1), block_size=2)
    C = block_constraint_matrix(g).toarray()
    assert C.shape[0] == 1
    vx = field(g, lambda p: np.array([p[0], 0.0]))
    # h = 1/2 here; two cells of unit divergence give total flux 2 h^2
    assert C @ vx == pytest.approx([2 * g.h**2])
    g1 = GridSpec(2, (2, 1), block_size=2)
    g1 = GridSpec(2, (2, 2), block_size=2)
    assert abs(block_constraint_matrix(g1).toarray() @ field(g1, lambda p: np.array([1.0, -3.0])))[0] < 1e-15


def test_block_flux_unit_spacing():
    # rescale a 2x1 block to h = 1: flux of v = (x, 0) is the sum of two unit cell fluxes
    g = GridSpec(2, (2, 1), block_size=2)
    v = field(g, lambda p: np.array([p[0] / g.h, 0.0]))
    # each unit cell contributes h^(d-1) * (1/h) * h = h
    assert (block_constraint_matrix(g) @ v)[0] / g.h == pytest.approx(2.0, abs=1e-14)


def test_single_block_is_global_conservation():
    g = GridSpec(2, (4, 4), block_size=4)
    C = block_constraint_matrix(g).toarray()[0]
    v = np.random.default_rng(3).standard_normal(g.n_dofs)
    # only boundary nodes carry coefficients, each with its outward normal weight
    coords = g.node_coord_table
    interior = np.all((coords > 0) & (coords < 4), axis=1)
    assert np.all(np.abs(C.reshape(-1, 2)[interior]) <= 1e-14)
    xs = np.flatnonzero(coords[:, 0] == 4)
    assert np.all(C.reshape(-1, 2)[xs, 0] > 0)


@pytest.mark.parametrize("dim,cells,B", [(2, (9, 7), 4), (3, (5, 4, 3), 2)])
def test_interior_face_cancellation(dim, cells, B):
    g = GridSpec(dim, cells, block_size=B)
    C = block_constraint_matrix(g).tocsr()
    coords = g.cell_coord_table
    for b in range(g.n_blocks):
        row = np.zeros(g.n_dofs)
        row[C[b].indices] = C[b].data
        cells_b = np.flatnonzero(g.cell_block_table == b)
        lo, hi = coords[cells_b].min(axis=0), coords[cells_b].max(axis=0) + 1
        nc = g.node_coord_table
        inside = np.all((nc > lo) & (nc < hi), axis=1)
        assert np.max(np.abs(row.reshape(-1, dim)[inside]), initial=0) <= 1e-14


def test_constraints_with_dirichlet_offset():
    g = GridSpec(2, (4, 4), block_size=2)
    vals = np.random.default_rng(4).standard_normal(10)
    d = DirichletSet(np.arange(10), vals)
    Cf, c0, ids = assemble_block_constraints(g, d)
    full = block_constraint_matrix(g)
    v = np.random.default_rng(5).standard_normal(g.n_dofs)
    v[:10] = vals
    free = np.arange(10, g.n_dofs)
    assert np.allclose(Cf @ v[free] + c0, (full @ v)[ids], atol=1e-14)


def test_dependent_rows_dropped():
    # closed box: the sum of all block rows vanishes on free DOFs, so one row is dependent
    g = GridSpec(2, (4, 4), block_size=2)
    bnd = np.flatnonzero(np.any((g.node_coord_table == 0) | (g.node_coord_table == 4), axis=1))
    dofs = (bnd[:, None] * 2 + np.arange(2)).ravel()
    Cf, c0, ids = assemble_block_constraints(g, DirichletSet(dofs, np.zeros(len(dofs))))
    assert Cf.shape[0] == 3
    assert np.linalg.matrix_rank(Cf.toarray()) == 3

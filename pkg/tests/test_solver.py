import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from anisoflow.assembly import DirichletSet, StokesSystem, assemble, block_constraint_matrix
from anisoflow.errors import DomainError, SolverError
from anisoflow.grid import GridSpec
from anisoflow.gradients import adjoint_solve
from anisoflow.material import DesignField, MaterialHyperparams, build_tensors
from anisoflow.solver import KKTFactorization, check_residuals, simulate, solve_kkt

from conftest import free_slip_channel, random_design, small_task


def hand_system(K, C=None, b=None, c0=None):
    K = sp.csr_matrix(np.atleast_2d(K))
    n = K.shape[0]
    C = sp.csr_matrix((0, n)) if C is None else sp.csr_matrix(np.atleast_2d(C))
    grid = GridSpec(2, (1, 1))
    return StokesSystem(
        K=K, b=np.asarray(b, float), e0=0.0, C=C, c0=np.zeros(C.shape[0]) if c0 is None else np.asarray(c0, float),
        free=np.arange(n), dirichlet=DirichletSet.empty(), grid=grid, block_ids=np.arange(C.shape[0]),
        K_full=K,
    )


def test_unconstrained_hand_example():
    s = solve_kkt(hand_system(np.eye(2), b=[2, 4]))
    assert np.allclose(s.v_free, [1, 2], rtol=0, atol=1e-14)


def test_constrained_hand_example():
    s = solve_kkt(hand_system(np.eye(2), C=[[1, 1]], b=[2, 4]))
    assert np.allclose(s.v_free, [-0.5, 0.5], atol=1e-12)
    assert s.multipliers == pytest.approx([3.0], abs=1e-12)


def test_zero_rhs_gives_zero():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((5, 5))
    s = solve_kkt(hand_system(A @ A.T + np.eye(5), C=rng.standard_normal((2, 5)), b=np.zeros(5)))
    assert np.all(np.abs(s.v_free) < 1e-15)


def test_adjoint_hand_examples():
    sysu = hand_system(np.eye(2), b=[0, 0])
    fac = KKTFactorization(sysu)
    w, _ = adjoint_solve(sysu, fac, np.zeros(2))
    assert np.all(w == 0)
    w, _ = adjoint_solve(sysu, fac, np.array([2.0, 0.0]))
    assert np.allclose(w, [1, 0], atol=1e-14)
    sysc = hand_system(np.eye(2), C=[[1, 1]], b=[0, 0])
    w, _ = adjoint_solve(sysc, KKTFactorization(sysc), np.array([2.0, 0.0]))
    assert np.allclose(w, [0.5, -0.5], atol=1e-12)
    with pytest.raises(DomainError):
        adjoint_solve(sysc, fac, np.zeros(2))


def test_factorization_mismatch_and_bad_rhs():
    a, b = hand_system(np.eye(2), b=[1, 1]), hand_system(np.eye(2), b=[1, 1])
    with pytest.raises(DomainError):
        solve_kkt(a, KKTFactorization(b))
    with pytest.raises(DomainError):
        KKTFactorization(a).solve(np.array([np.nan, 0.0]))
    with pytest.raises(DomainError):
        KKTFactorization(a).solve(np.zeros(3))


def test_nonfinite_matrix_rejected():
    with pytest.raises(DomainError):
        KKTFactorization(hand_system([[1.0, 0], [0, np.inf]], b=[0, 0]))


def test_singular_system_raises():
    with pytest.raises(SolverError):
        solve_kkt(hand_system(np.zeros((2, 2)), b=[1, 0]))


def test_check_residuals_reports_perturbations():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((4, 4))
    system = hand_system(A @ A.T + np.eye(4), C=rng.standard_normal((1, 4)), b=rng.standard_normal(4))
    st_ = solve_kkt(system)
    assert st_.residuals["ok"]
    st_.v_free = st_.v_free + 1e-3
    assert check_residuals(st_, system)["primal"] > 1e-6
    st2 = solve_kkt(system)
    before = check_residuals(st2, system)["constraint"]
    st2.multipliers = st2.multipliers + 1.0
    rep = check_residuals(st2, system)
    assert rep["constraint"] == before and rep["primal"] > 0.1


def test_uniform_solid_gives_zero_flow():
    g = GridSpec(2, (6, 6))
    mat = build_tensors(DesignField.uniform(36, 2, rho=0.0), MaterialHyperparams())
    bnd = np.flatnonzero(np.any((g.node_coord_table == 0) | (g.node_coord_table == 6), axis=1))
    dofs = (bnd[:, None] * 2 + np.arange(2)).ravel()
    s = solve_kkt(assemble(g, mat, DirichletSet(dofs, np.zeros(len(dofs)))))
    assert np.max(np.abs(s.v)) < 1e-15


def _invariants(state, system):
    rep = check_residuals(state, system)
    assert rep["primal"] <= 1e-8 * (1 + np.max(np.abs(system.b), initial=0))
    assert rep["constraint"] <= 1e-10
    assert rep["dirichlet"] == 0.0
    assert np.array_equal(state.v[system.dirichlet.dofs], system.dirichlet.values)
    if len(system.block_ids):
        flux = block_constraint_matrix(system.grid) @ state.v
        assert np.max(np.abs(flux[system.block_ids])) <= 1e-8


@settings(max_examples=12, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([2, 4, 8]))
def test_invariants_on_random_designs(seed, B):
    rng = np.random.default_rng(seed)
    task = small_task(12, block_size=B)
    design = random_design(task.grid.n_cells, 2, rng, margin=0.0)
    state, system = simulate(design, task)
    _invariants(state, system)


def test_energy_optimality(task8, rng):
    design = random_design(task8.grid.n_cells, 2, rng)
    state, system = simulate(design, task8)
    C = system.C.toarray()
    # null space of C
    _, s, vt = np.linalg.svd(C)
    null = vt[len(s[s > 1e-12]):]
    E0 = system.energy(state.v_free)
    for _ in range(10):
        dv = null.T @ rng.standard_normal(null.shape[0]) * 1e-2
        assert system.energy(state.v_free + dv) >= E0 - 1e-10


def test_deterministic(task8, rng):
    design = random_design(task8.grid.n_cells, 2, rng)
    a, _ = simulate(design, task8)
    b, _ = simulate(design, task8)
    assert a.v.tobytes() == b.v.tobytes()
    assert a.multipliers.tobytes() == b.multipliers.tobytes()


def test_without_blocks_flux_leaks():
    from anisoflow.experiments import two_port_doc
    from anisoflow.task import task_from_dict

    task = task_from_dict(two_port_doc(n=20))
    design = task.initial_design()
    design.rho[:] = 1.0
    ratios = {}
    for blocks in (True, False):
        state, system = simulate(design, task, use_blocks=blocks)
        _invariants(state, system)
        i, o = task.fluxes(state.v)
        ratios[blocks] = o / i
    assert ratios[True] == pytest.approx(1.0, abs=1e-6)
    assert ratios[False] < 0.95


def test_straight_channel_plug_flow():
    # free-slip walls along a horizontal channel carry the inlet velocity unchanged
    task, design = free_slip_channel(16)
    g = task.grid
    state, _ = simulate(design, task)
    vel = state.v.reshape(-1, 2)
    ny = g.node_coord_table[:, 1] * g.h
    mid = (np.abs(ny - 0.5) < 0.25 - 1e-9) & (g.node_coord_table[:, 0] == 8)
    assert np.allclose(vel[mid, 0], 1.0, atol=0.05)

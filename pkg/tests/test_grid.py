import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anisoflow.errors import DomainError
from anisoflow.grid import GridSpec, gauss_rule, shape_values_and_gradients


def node(grid, *c):
    return grid.node_index(c)


def test_cell_nodes_2x2():
    g = GridSpec(2, (2, 2))
    assert list(g.cell_nodes((0, 0))) == [node(g, 0, 0), node(g, 1, 0), node(g, 0, 1), node(g, 1, 1)]
    assert list(g.cell_nodes((1, 1))) == [node(g, 1, 1), node(g, 2, 1), node(g, 1, 2), node(g, 2, 2)]


def test_cell_nodes_unit_cube():
    g = GridSpec(3, (1, 1, 1))
    coords = [g.node_coords(i) for i in g.cell_nodes(0)]
    assert coords == [(0, 0, 0), (1, 0, 0), (0, 1, 0), (1, 1, 0), (0, 0, 1), (1, 0, 1), (0, 1, 1), (1, 1, 1)]


def test_cell_nodes_out_of_range():
    g = GridSpec(2, (2, 2))
    with pytest.raises(DomainError):
        g.cell_nodes(4)
    with pytest.raises(DomainError):
        g.cell_nodes((2, 0))


def test_sizes_and_spacing():
    g = GridSpec(2, (30, 20), block_size=8)
    assert g.h == pytest.approx(1 / 30)
    assert g.nodes_per_axis == (31, 21)
    assert g.n_blocks == 4 * 3
    assert GridSpec(3, (4, 4, 4)).n_dofs == 125 * 3


@pytest.mark.parametrize("bad", [dict(dim=1, cells=(3,)), dict(dim=2, cells=(3,)), dict(dim=2, cells=(0, 3)),
                                 dict(dim=2, cells=(3, 3), block_size=0)])
def test_invalid_grid(bad):
    with pytest.raises(DomainError):
        GridSpec(**bad)


def test_block_of_examples():
    g = GridSpec(2, (16, 16), block_size=8)
    assert g.block_of((7, 0)) == (0, 0)
    assert g.block_of((8, 0)) == (1, 0)
    g30 = GridSpec(2, (30, 30), block_size=4)
    assert g30.block_of((29, 29)) == (7, 7)
    assert g30.n_blocks == 64


def test_gauss_rule():
    for d, count in ((2, 4), (3, 8)):
        rule = gauss_rule(d)
        assert rule.points.shape == (count, d)
        assert np.allclose(rule.weights, 1 / count)
        assert rule.weights.sum() == pytest.approx(1.0, abs=1e-15)
        a = (1 - 1 / np.sqrt(3)) / 2
        assert set(np.round(rule.points.ravel(), 14)) == {round(a, 14), round(1 - a, 14)}
    # exact for cubic polynomials per axis
    rule = gauss_rule(2)
    x, y = rule.points.T
    assert np.sum(rule.weights * x**3 * y**2) == pytest.approx(1 / 12, abs=1e-15)


def test_shape_functions_examples():
    v, _ = shape_values_and_gradients(np.array([0.5, 0.5]))
    assert np.allclose(v, 0.25)
    v, _ = shape_values_and_gradients(np.array([0.0, 0.0]))
    assert np.array_equal(v, [1, 0, 0, 0])
    _, g = shape_values_and_gradients(np.array([0.5, 0.5]), 1.0)
    assert np.allclose(g[0], [-0.5, -0.5], atol=1e-15)


def test_shape_gradients_scale_with_h():
    _, g1 = shape_values_and_gradients(np.array([0.3, 0.8, 0.1]), 1.0)
    _, g2 = shape_values_and_gradients(np.array([0.3, 0.8, 0.1]), 0.25)
    assert np.allclose(g2, 4 * g1)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 3), st.lists(st.floats(0, 1), min_size=3, max_size=3), st.floats(0.01, 2))
def test_partition_of_unity(dim, pt, h):
    v, g = shape_values_and_gradients(np.array(pt[:dim]), h)
    assert abs(v.sum() - 1) <= 1e-14
    assert np.max(np.abs(g.sum(axis=0))) <= 1e-14 / h


def test_partition_at_quadrature_points():
    for d in (2, 3):
        for p in gauss_rule(d).points:
            v, g = shape_values_and_gradients(p, 0.1)
            assert abs(v.sum() - 1) <= 1e-14
            assert np.max(np.abs(g.sum(axis=0))) <= 1e-13


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 3), st.lists(st.integers(1, 7), min_size=3, max_size=3), st.integers(1, 5))
def test_blocks_partition_cells(dim, cells, B):
    g = GridSpec(dim, cells[:dim], block_size=B)
    table = g.cell_block_table
    assert table.shape == (g.n_cells,)
    counts = np.bincount(table, minlength=g.n_blocks)
    assert counts.sum() == g.n_cells
    assert np.all(counts > 0)
    for c in range(0, g.n_cells, max(1, g.n_cells // 7)):
        assert table[c] == g.block_index(g.block_of(c))


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 3), st.lists(st.integers(1, 6), min_size=3, max_size=3), st.data())
def test_index_round_trip(dim, cells, data):
    g = GridSpec(dim, cells[:dim])
    i = data.draw(st.integers(0, g.n_cells - 1))
    assert g.cell_index(g.cell_coords(i)) == i
    j = data.draw(st.integers(0, g.n_nodes - 1))
    assert g.node_index(g.node_coords(j)) == j
    assert tuple(g.node_coord_table[j]) == g.node_coords(j)
    assert np.array_equal(g.cell_node_table[i], g.cell_nodes(i))

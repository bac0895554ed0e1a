import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from peridyn.core import DomainError
from peridyn.geometry import (
    InputMesh,
    break_initial_bonds,
    brute_force_family,
    build_family,
    correction_factor,
    crosses_plane,
    full_horizon_volume,
    grid_mesh,
    hexahedron_volumes,
    intersects_box,
    lump_volumes,
    neighborhood_volumes,
    nodes_in_box,
    regular_grid,
    surface_correction_factors,
    tetrahedron_volumes,
)


def test_regular_grid_layout():
    x = regular_grid((2, 3, 4), 0.5, (1.0, 0.0, 0.0))
    assert x.shape == (24, 3)
    np.testing.assert_allclose(x[0], [1.0, 0.0, 0.0])
    np.testing.assert_allclose(x[-1], [1.5, 1.0, 1.5])
    # x varies slowest
    assert x[1, 2] == 0.5 and x[1, 0] == 1.0


@given(st.integers(2, 60), st.floats(0.05, 0.6), st.integers(0, 2 ** 31 - 1))
def test_family_matches_brute_force(n, radius, seed):
    pts = np.random.default_rng(seed).random((n, 3))
    a = build_family(pts, radius)
    b = brute_force_family(pts, radius, group_size=a.group_size)
    np.testing.assert_array_equal(a.entries, b.entries)
    np.testing.assert_array_equal(a.n_neigh, b.n_neigh)


def test_family_is_symmetric_and_sorted():
    pts = np.random.default_rng(1).random((300, 3))
    fam = build_family(pts, 0.2)
    fam.validate()
    for i in range(fam.n):
        row = fam.entries[i, :fam.n_neigh[i]]
        assert np.all(np.diff(row) > 0)
        for j in row:
            assert i in fam.entries[j]


def test_horizon_boundary_is_inclusive():
    fam = build_family(regular_grid((3, 1, 1), 1.0), 1.0)
    np.testing.assert_array_equal(fam.n_neigh, [1, 2, 1])
    assert fam.group_size == 2


def test_lattice_interior_family_is_122():
    x = regular_grid((11, 11, 11), 1.0)
    fam = build_family(x, math.pi)
    centre = 5 * 121 + 5 * 11 + 5
    assert fam.n_neigh[centre] == 122
    assert fam.group_size == 128


def test_explicit_group_size_and_coincident_nodes():
    pts = regular_grid((2, 2, 2), 1.0)
    assert build_family(pts, 1.1, group_size=16).group_size == 16
    with pytest.raises(DomainError):
        build_family(pts, 1.8, group_size=2)
    with pytest.raises(DomainError):
        build_family(np.zeros((2, 3)), 1.0)


def test_single_isolated_node():
    fam = build_family(np.zeros((1, 3)), 1.0)
    assert fam.n == 1 and fam.n_neigh[0] == 0


def test_cell_volumes():
    v = regular_grid((2, 2, 2), 2.0)
    assert hexahedron_volumes(v, np.array([[0, 4, 6, 2, 1, 5, 7, 3]]))[0] == pytest.approx(8.0)
    tet = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]])
    assert tetrahedron_volumes(tet, np.array([[0, 1, 2, 3]]))[0] == pytest.approx(1 / 6)


def test_lumped_volumes_conserve_total():
    tet = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0], [1, 1, 1.0]])
    cells = np.array([[0, 1, 2, 3], [1, 2, 3, 4]])
    mesh = InputMesh(tet, tetrahedra=cells)
    vol = lump_volumes(mesh)
    assert vol.sum() == pytest.approx(tetrahedron_volumes(tet, cells).sum())
    assert lump_volumes(grid_mesh((2, 2, 2), 0.5)) == pytest.approx(np.full(8, 0.125))


def test_mesh_rejects_bad_cells():
    with pytest.raises(DomainError):
        InputMesh(np.zeros((3, 3)), tetrahedra=np.array([[0, 1, 2, 3]]))


def test_surface_correction_bulk_and_surface():
    x = regular_grid((9, 9, 9), 1.0)
    fam = build_family(x, 2.0)
    vol = np.ones(len(x))
    lam = surface_correction_factors(vol, fam, v0="max")
    centre = 4 * 81 + 4 * 9 + 4
    k = fam.n_neigh[centre]
    np.testing.assert_allclose(lam[centre, :k], 1.0)
    assert lam[0, 0] > 1.0
    assert np.all(lam[fam.entries < 0] == 1.0)
    hood = neighborhood_volumes(vol, fam)
    i, j = 0, fam.entries[0, 0]
    assert lam[0, 0] == pytest.approx(correction_factor(hood[i], hood[j], hood.max()))
    assert full_horizon_volume(1.0) == pytest.approx(4 * math.pi / 3)


def test_correction_factor():
    assert correction_factor(1.0, 1.0, 1.0) == 1.0
    assert correction_factor(0.5, 0.5, 1.0) == 2.0
    with pytest.raises(DomainError):
        correction_factor(1.0, 1.0, 0.0)


def test_break_plane_and_box():
    x = regular_grid((4, 1, 1), 1.0)
    fam = build_family(x, 1.5)
    cut = break_initial_bonds(fam, x, crosses_plane(0, 1.5))
    np.testing.assert_array_equal(cut.n_neigh, [1, 1, 1, 1])
    assert fam.n_neigh.sum() == 6  # original untouched
    boxed = break_initial_bonds(fam, x, intersects_box((0.4, -1, -1), (0.6, 1, 1)))
    np.testing.assert_array_equal(boxed.n_neigh, [0, 1, 2, 1])


def test_box_predicate_segment_cases():
    pred = intersects_box((0, 0, 0), (1, 1, 1))
    a = np.array([[-1, 0.5, 0.5], [2, 2, 2], [-1, 2, 0.5], [0.5, 0.5, 0.5]])
    b = np.array([[2, 0.5, 0.5], [3, 3, 3], [2, 2, 0.5], [0.6, 0.6, 0.6]])
    np.testing.assert_array_equal(pred(a, b), [True, False, False, True])


def test_nodes_in_box():
    x = regular_grid((3, 3, 1), 1.0)
    np.testing.assert_array_equal(nodes_in_box(x, (0, 0, 0), (1, 0, 0)), [0, 3])

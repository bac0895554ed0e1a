import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from peridyn.core import SimulationState
from peridyn.geometry import InputMesh, build_family, regular_grid
from peridyn.io import (
    FormatError,
    Snapshot,
    format_snapshot,
    load_cache,
    load_state,
    read_curve,
    read_mesh,
    read_snapshot,
    save_cache,
    save_state,
    write_curve,
    write_grid,
    write_mesh,
    write_snapshot,
    write_vtk,
)

tmp_settings = settings(suppress_health_check=[HealthCheck.function_scoped_fixture], max_examples=25)


def test_grid_descriptor(tmp_path):
    p = tmp_path / "block.grid"
    write_grid(p, (2, 2, 2), 0.5, (1.0, 0.0, 0.0))
    mesh = read_mesh(p)
    assert mesh.n == 8 and mesh.grid_spacing == 0.5
    np.testing.assert_allclose(mesh.vertices[-1], [1.5, 0.5, 0.5])


def test_text_mesh_round_trip(tmp_path):
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]])
    mesh = InputMesh(v, tetrahedra=np.array([[0, 1, 2, 3]]), explicit_volumes=np.full(4, 0.25))
    p = tmp_path / "tet.pdmesh"
    write_mesh(p, mesh)
    back = read_mesh(p)
    np.testing.assert_array_equal(back.vertices, v)
    np.testing.assert_array_equal(back.tetrahedra, mesh.tetrahedra)
    np.testing.assert_array_equal(back.explicit_volumes, mesh.explicit_volumes)


@pytest.mark.parametrize("text,message", [
    ("vertices 2\n0 0 0\n1 0 0\ntetrahedra 1\n0 1 2 3\n", ":5: vertex index 2"),
    ("vertices 2\n0 0 0\n1 0 x\n", ":3: not a number"),
    ("tetrahedra 1\n0 1 2 3\n", ":1: the vertices section must come first"),
    ("vertices 3\n0 0 0\n", "ends after 1 of 3"),
    ("vertices 1\n0 0 0\nvolumes 1\n-1\n", ":4: volume must be positive"),
    ("# header\n\nvertices 1 2\n", ":3: expected a section header"),
])
def test_text_mesh_errors_name_the_line(tmp_path, text, message):
    p = tmp_path / "bad.pdmesh"
    p.write_text(text)
    with pytest.raises(FormatError, match=message):
        read_mesh(p)


def test_unknown_mesh_extension(tmp_path):
    p = tmp_path / "mesh.vtk"
    p.write_text("")
    with pytest.raises(FormatError, match="unknown mesh extension"):
        read_mesh(p)


def test_single_node_snapshot_layout():
    snap = Snapshot(7, np.zeros((1, 3)), np.ones((1, 3)), np.zeros((1, 3)), np.array([0.5]))
    lines = format_snapshot(snap).splitlines()
    assert lines[0] == "PDSNAP 1 step 7 points 1"
    assert lines[1] == "x y z ux uy uz vx vy vz phi"
    assert len(lines) == 3


@given(st.integers(1, 30), st.integers(0, 10 ** 6), st.integers(0, 2 ** 31 - 1))
@tmp_settings
def test_snapshot_round_trip_is_exact(tmp_path, n, step, seed):
    rng = np.random.default_rng(seed)
    snap = Snapshot(step, rng.standard_normal((n, 3)), rng.standard_normal((n, 3)) * 1e-9,
                    rng.standard_normal((n, 3)), rng.random(n))
    p = tmp_path / "s.pdsnap"
    write_snapshot(p, snap)
    back = read_snapshot(p)
    assert back.step == step
    for name in ("coords", "u", "ud", "damage"):
        np.testing.assert_array_equal(getattr(back, name), getattr(snap, name))


def test_snapshot_rejects_bad_files(tmp_path):
    p = tmp_path / "s.pdsnap"
    p.write_text("PDSNAP 2 step 0 points 0\nx y z ux uy uz vx vy vz phi\n")
    with pytest.raises(FormatError, match="version"):
        read_snapshot(p)
    with pytest.raises(OSError, match="step 3"):
        write_snapshot(tmp_path / "missing" / "s.pdsnap",
                       Snapshot(3, np.zeros((1, 3)), np.zeros((1, 3)), np.zeros((1, 3)), np.zeros(1)))


def test_vtk_point_cloud(tmp_path):
    snap = Snapshot(0, regular_grid((2, 1, 1), 1.0), np.zeros((2, 3)), np.zeros((2, 3)), np.zeros(2))
    p = tmp_path / "s.vtk"
    write_vtk(p, snap)
    text = p.read_text()
    assert text.startswith("# vtk DataFile Version 3.0") and "POINTS 2 double" in text
    assert "SCALARS damage double 1" in text


def _family(seed, n=60):
    x = np.random.default_rng(seed).random((n, 3))
    return build_family(x, 0.3)


@given(st.integers(0, 2 ** 31 - 1), st.booleans())
@tmp_settings
def test_cache_round_trip(tmp_path, seed, with_lam):
    fam = _family(seed)
    lam = np.random.default_rng(seed).random(fam.entries.shape) if with_lam else None
    p = tmp_path / "f.pdnl"
    save_cache(p, fam, lam)
    back, back_lam = load_cache(p)
    np.testing.assert_array_equal(back.entries, fam.entries)
    np.testing.assert_array_equal(back.n_neigh, fam.n_neigh)
    assert back.horizon == fam.horizon and back.group_size == fam.group_size
    if with_lam:
        np.testing.assert_array_equal(back_lam, lam)
    else:
        assert back_lam is None


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_state_round_trip(tmp_path, dtype):
    fam = _family(3)
    state = SimulationState.initial(fam, dtype)
    rng = np.random.default_rng(0)
    state.u[...] = rng.standard_normal(state.u.shape)
    state.bond_history[...] = rng.random(state.bond_history.shape)
    state.step = 123
    p = tmp_path / "s.pdst"
    save_state(p, state)
    back = load_state(p)
    assert back.step == 123 and back.u.dtype == dtype
    np.testing.assert_array_equal(back.u, state.u)
    np.testing.assert_array_equal(back.bond_history, state.bond_history)
    np.testing.assert_array_equal(back.connectivity.entries, fam.entries)


def test_truncated_and_corrupt_binaries(tmp_path):
    fam = _family(5)
    p = tmp_path / "f.pdnl"
    save_cache(p, fam)
    data = p.read_bytes()
    for bad in (data[:-3], data + b"\0", b"XXXX" + data[4:], data[:4] + b"\x09" + data[5:]):
        p.write_bytes(bad)
        with pytest.raises(FormatError):
            load_cache(p)
    save_state(tmp_path / "s.pdst", SimulationState.initial(fam))
    with pytest.raises(FormatError):
        load_cache(tmp_path / "s.pdst")


def test_curve_files(tmp_path):
    p = tmp_path / "c.csv"
    write_curve(p, [0.0, 1.0, 2.0], [0.0, 5.0, 3.0])
    x, f = read_curve(p)
    np.testing.assert_array_equal(x, [0, 1, 2])
    np.testing.assert_array_equal(f, [0, 5, 3])
    p.write_text("0,1\n1,2\n")
    assert read_curve(p)[1].tolist() == [1.0, 2.0]
    p.write_text("0,1,2\n")
    with pytest.raises(FormatError):
        read_curve(p)

"""Mesh ingestion, nodal volumes, families and correction factors."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
from numba import njit

from .core import DomainError, NeighborList, next_power_of_two

COINCIDENT_TOL = 1e-12

BondPredicate = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass
class InputMesh:
    """Vertices plus whatever is known about nodal volumes.

    Exactly one volume source is used, in order of preference:
    ``explicit_volumes``, ``grid_spacing`` (regular cuboid grid), cells.
    """

    vertices: np.ndarray
    tetrahedra: Optional[np.ndarray] = None
    hexahedra: Optional[np.ndarray] = None
    explicit_volumes: Optional[np.ndarray] = None
    grid_spacing: Optional[float] = None

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        n = len(self.vertices)
        if not np.all(np.isfinite(self.vertices)):
            raise DomainError("vertex coordinates must be finite")
        for name, width in (("tetrahedra", 4), ("hexahedra", 8)):
            cells = getattr(self, name)
            if cells is None:
                continue
            cells = np.asarray(cells, dtype=np.int64).reshape(-1, width)
            if len(cells) and (cells.min() < 0 or cells.max() >= n):
                raise DomainError(f"{name} reference vertices outside [0, {n})")
            setattr(self, name, cells)
        if self.explicit_volumes is not None:
            self.explicit_volumes = np.asarray(self.explicit_volumes, dtype=np.float64)
            if self.explicit_volumes.shape != (n,):
                raise DomainError("explicit_volumes must match the vertex count")

    @property
    def n(self) -> int:
        return len(self.vertices)


def regular_grid(counts, spacing: float, origin=(0.0, 0.0, 0.0), jitter: float = 0.0,
                 seed: Optional[int] = None) -> np.ndarray:
    """Node coordinates of an nx x ny x nz tensor grid, x varying slowest.

    ``jitter`` perturbs every coordinate uniformly in +/- jitter * spacing.
    """
    nx, ny, nz = (int(c) for c in counts)
    axes = [origin[a] + spacing * np.arange(c) for a, c in enumerate((nx, ny, nz))]
    coords = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    if jitter:
        rng = np.random.default_rng(seed)
        coords = coords + rng.uniform(-jitter * spacing, jitter * spacing, coords.shape)
    return np.ascontiguousarray(coords)


def grid_mesh(counts, spacing: float, origin=(0.0, 0.0, 0.0)) -> InputMesh:
    return InputMesh(regular_grid(counts, spacing, origin), grid_spacing=float(spacing))


def tetrahedron_volumes(vertices: np.ndarray, tets: np.ndarray) -> np.ndarray:
    """Unsigned volumes |(b - a) . ((c - a) x (d - a))| / 6."""
    a, b, c, d = (vertices[tets[:, k]] for k in range(4))
    return np.abs(np.einsum("ij,ij->i", b - a, np.cross(c - a, d - a))) / 6.0


# corner order: bottom face 0-1-2-3, top face 4-5-6-7 above it
_HEX_TETS = np.array([[0, 1, 2, 6], [0, 2, 3, 6], [0, 3, 7, 6],
                      [0, 7, 4, 6], [0, 4, 5, 6], [0, 5, 1, 6]])


def hexahedron_volumes(vertices: np.ndarray, hexes: np.ndarray) -> np.ndarray:
    total = np.zeros(len(hexes))
    for tet in _HEX_TETS:
        total += tetrahedron_volumes(vertices, hexes[:, tet])
    return total


def lump_volumes(mesh: InputMesh) -> np.ndarray:
    """Nodal volumes for a mesh.

    Tetrahedra hand a quarter of their volume to each vertex, hexahedra an
    eighth, so the total equals the mesh volume.
    """
    n = mesh.n
    if mesh.explicit_volumes is not None:
        return mesh.explicit_volumes.copy()
    if mesh.grid_spacing is not None:
        return np.full(n, float(mesh.grid_spacing) ** 3)
    cells = [(mesh.tetrahedra, tetrahedron_volumes, 4), (mesh.hexahedra, hexahedron_volumes, 8)]
    if all(c is None or len(c) == 0 for c, _, _ in cells):
        raise DomainError("no volume source: mesh has no cells, explicit volumes or grid spacing")
    volume = np.zeros(n)
    for cell_array, measure, corners in cells:
        if cell_array is None or len(cell_array) == 0:
            continue
        v = measure(mesh.vertices, cell_array)
        bad = np.flatnonzero(v <= 0.0)
        if len(bad):
            raise DomainError(f"degenerate cell {int(bad[0])} has zero volume")
        np.add.at(volume, cell_array.ravel(), np.repeat(v / corners, corners))
    if np.any(volume <= 0):
        raise DomainError(f"{int(np.sum(volume <= 0))} vertices belong to no cell")
    return volume


# ------------------------------------------------------------- families


@njit(cache=True)
def _search_cells(coords, horizon, cells, uniq, order, start, counts_only, N, entries, counts):
    n = coords.shape[0]
    buf = np.empty(max(N, 1) if not counts_only else 1, np.int64)
    coincident = -1
    for i in range(n):
        cx, cy, cz = cells[i, 0], cells[i, 1], cells[i, 2]
        m = 0
        for ox in range(-1, 2):
            for oy in range(-1, 2):
                for oz in range(-1, 2):
                    key = ((cx + ox) * 2097152 + (cy + oy)) * 2097152 + (cz + oz)
                    pos = np.searchsorted(uniq, key)
                    if pos >= uniq.shape[0] or uniq[pos] != key:
                        continue
                    for q in range(start[pos], start[pos + 1]):
                        j = order[q]
                        if j == i:
                            continue
                        dx = coords[j, 0] - coords[i, 0]
                        dy = coords[j, 1] - coords[i, 1]
                        dz = coords[j, 2] - coords[i, 2]
                        d = np.sqrt(dx * dx + dy * dy + dz * dz)
                        if d < 1e-12 and coincident < 0:
                            coincident = i
                        if d <= horizon:
                            if not counts_only:
                                buf[m] = j
                            m += 1
        counts[i] = m
        if not counts_only:
            row = np.sort(buf[:m])
            for k in range(m):
                entries[i, k] = row[k]
    return coincident


def _cell_keys(cells: np.ndarray) -> np.ndarray:
    return (cells[:, 0] * 2097152 + cells[:, 1]) * 2097152 + cells[:, 2]


def _finish(entries, counts, horizon, group_size):
    need = next_power_of_two(int(counts.max()) if len(counts) else 0)
    N = need if group_size is None else int(group_size)
    if N < need or N & (N - 1):
        raise DomainError(f"group size {N} must be a power of two >= {need}")
    if entries.shape[1] < N:
        entries = np.hstack([entries, np.full((len(entries), N - entries.shape[1]), -1, np.int32)])
    return NeighborList(np.ascontiguousarray(entries[:, :N]), counts.astype(np.int32), N, horizon)


def build_family(coords, horizon: float, group_size: Optional[int] = None) -> NeighborList:
    """Padded neighbour list of every node within ``horizon`` (inclusive).

    Uses a uniform cell grid of side ``horizon``. Rows are sorted ascending
    and padded with -1 up to the smallest power of two that holds the
    largest family, or to ``group_size`` when given.
    """
    coords = np.ascontiguousarray(coords, dtype=np.float64)
    if not horizon > 0:
        raise DomainError("horizon must be positive")
    n = len(coords)
    if n < 1:
        raise DomainError("need at least one node")
    cells = np.floor((coords - coords.min(axis=0)) / horizon).astype(np.int64)
    if cells.max() >= 2097151:
        raise DomainError("domain spans too many horizons for the cell grid")
    keys = _cell_keys(cells)
    order = np.argsort(keys, kind="stable")
    uniq, start = np.unique(keys[order], return_index=True)
    start = np.append(start, n).astype(np.int64)
    counts = np.zeros(n, np.int64)
    dummy = np.zeros((1, 1), np.int32)
    bad = _search_cells(coords, horizon, cells, uniq, order, start, True, 0, dummy, counts)
    if bad >= 0:
        raise DomainError(f"node {bad} coincides with another node")
    N = next_power_of_two(int(counts.max()))
    entries = np.full((n, N), -1, np.int32)
    _search_cells(coords, horizon, cells, uniq, order, start, False, N, entries, counts)
    return _finish(entries, counts, horizon, group_size)


def brute_force_family(coords, horizon: float, group_size: Optional[int] = None,
                       chunk: int = 512) -> NeighborList:
    """O(n^2) reference for :func:`build_family`."""
    coords = np.ascontiguousarray(coords, dtype=np.float64)
    if not horizon > 0:
        raise DomainError("horizon must be positive")
    n = len(coords)
    rows = []
    for lo in range(0, n, chunk):
        d = coords[None, :, :] - coords[lo:lo + chunk, None, :]
        dist = np.sqrt(d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2])
        idx = np.arange(lo, min(n, lo + chunk))
        dist[np.arange(len(idx)), idx] = np.inf
        if np.any(dist < COINCIDENT_TOL):
            raise DomainError("coincident nodes")
        rows.extend(np.flatnonzero(r <= horizon) for r in dist)
    counts = np.array([len(r) for r in rows], np.int64)
    width = max(1, int(counts.max()))
    entries = np.full((n, width), -1, np.int32)
    for i, r in enumerate(rows):
        entries[i, :len(r)] = r
    return _finish(entries, counts, horizon, group_size)


def family_sizes(family: NeighborList) -> np.ndarray:
    return np.asarray(family.n_neigh)


# ---------------------------------------------------------- corrections


def correction_factor(v_i: float, v_j: float, v0: float) -> float:
    """Volume-method stiffness correction 2 V0 / (V_i + V_j)."""
    if not v0 > 0:
        raise DomainError("reference volume must be positive")
    if v_i + v_j == 0:
        raise DomainError("neighbourhood volumes sum to zero")
    return 2.0 * v0 / (v_i + v_j)


def neighborhood_volumes(volumes, family: NeighborList) -> np.ndarray:
    """Sum of the nodal volumes of each node's live family members."""
    vol = np.asarray(volumes, dtype=np.float64)
    e = family.entries
    return np.where(e >= 0, vol[np.where(e >= 0, e, 0)], 0.0).sum(axis=1)


def full_horizon_volume(horizon: float, packing: float = 1.0) -> float:
    return 4.0 / 3.0 * math.pi * horizon ** 3 * packing


def surface_correction_factors(volumes, family: NeighborList,
                               v0: Union[float, str, None] = None,
                               packing: float = 1.0) -> np.ndarray:
    """Per-bond stiffness corrections aligned with ``family.entries``.

    ``v0`` is the bulk neighbourhood volume: a number, ``None`` for the
    analytic sphere volume times ``packing``, or ``"max"`` for the largest
    observed neighbourhood volume. Padding slots carry 1.
    """
    hood = neighborhood_volumes(volumes, family)
    if v0 is None:
        v0 = full_horizon_volume(family.horizon, packing)
    elif v0 == "max":
        v0 = float(hood.max())
    v0 = float(v0)
    if not v0 > 0:
        raise DomainError("reference volume must be positive")
    e = family.entries
    live = e >= 0
    denom = hood[:, None] + hood[np.where(live, e, 0)]
    if np.any(live & (denom == 0)):
        raise DomainError("neighbourhood volumes sum to zero for a live bond")
    lam = np.ones(e.shape)
    lam[live] = 2.0 * v0 / denom[live]
    return lam


# -------------------------------------------------------- initial cracks


def break_initial_bonds(family: NeighborList, coords, predicate: BondPredicate) -> NeighborList:
    """Copy of ``family`` with every bond matching ``predicate`` removed.

    ``predicate(a, b)`` receives the (m, 3) endpoint coordinates of m bonds
    and returns a boolean mask.
    """
    coords = np.asarray(coords, dtype=np.float64)
    out = family.copy()
    i, k = np.nonzero(out.entries >= 0)
    if len(i) == 0:
        return out
    j = out.entries[i, k]
    hit = np.asarray(predicate(coords[i], coords[j]), dtype=bool)
    out.entries[i[hit], k[hit]] = -1
    out.n_neigh = (out.entries >= 0).sum(axis=1).astype(np.int32)
    return out


def crosses_plane(axis: int, value: float) -> BondPredicate:
    """Bonds whose endpoints lie strictly on opposite sides of a plane."""

    def predicate(a, b):
        return (a[:, axis] - value) * (b[:, axis] - value) < 0

    return predicate


def intersects_box(lo, hi) -> BondPredicate:
    """Bonds whose segment meets the closed axis-aligned box [lo, hi]."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)

    def predicate(a, b):
        d = b - a
        t0 = np.zeros(len(a))
        t1 = np.ones(len(a))
        ok = np.ones(len(a), bool)
        for ax in range(3):
            da = d[:, ax]
            flat = da == 0
            inside = (a[:, ax] >= lo[ax]) & (a[:, ax] <= hi[ax])
            ok &= ~flat | inside
            with np.errstate(divide="ignore", invalid="ignore"):
                ta = (lo[ax] - a[:, ax]) / da
                tb = (hi[ax] - a[:, ax]) / da
            near = np.where(flat, -np.inf, np.minimum(ta, tb))
            far = np.where(flat, np.inf, np.maximum(ta, tb))
            t0 = np.maximum(t0, near)
            t1 = np.minimum(t1, far)
        return ok & (t0 <= t1)

    return predicate


def nodes_in_box(coords, lo, hi) -> np.ndarray:
    coords = np.asarray(coords)
    lo = np.asarray(lo)
    hi = np.asarray(hi)
    return np.flatnonzero(np.all((coords >= lo) & (coords <= hi), axis=1))

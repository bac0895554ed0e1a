"""File formats: meshes, field snapshots, neighbour-list cache and restart state.

Text mesh (``.pdmesh``)::

    # comments and blank lines are ignored
    vertices <n>
    <x> <y> <z>            (n lines)
    tetrahedra <m>         (optional)
    <a> <b> <c> <d>        (m lines, 0-based vertex indices)
    hexahedra <m>          (optional)
    <8 vertex indices>     (m lines)
    volumes <n>            (optional explicit nodal volumes)
    <v>                    (n lines)

Grid descriptor (``.grid``)::

    origin <x> <y> <z>
    spacing <dx>
    counts <nx> <ny> <nz>

Snapshots are ASCII with one point per line. The neighbour-list cache
(magic ``PDNL``) and the restart state (magic ``PDST``) are little-endian
binary containers in which every array section is preceded by its byte
length as a u64.
"""
from __future__ import annotations

import io as _io
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .core import DomainError, NeighborList, PeridynError, SimulationState
from .geometry import InputMesh, grid_mesh

FORMAT_VERSION = 1
SNAPSHOT_COLUMNS = ("x", "y", "z", "ux", "uy", "uz", "vx", "vy", "vz", "phi")


class FormatError(PeridynError, ValueError):
    """A file could not be parsed or fails validation."""


# ------------------------------------------------------------------ meshes


def _lines(path):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            text = raw.split("#", 1)[0].strip()
            if text:
                yield lineno, text.split()


def _floats(tokens, count, where):
    if len(tokens) != count:
        raise FormatError(f"{where}: expected {count} values, found {len(tokens)}")
    try:
        vals = [float(t) for t in tokens]
    except ValueError:
        raise FormatError(f"{where}: not a number in {' '.join(tokens)!r}") from None
    if not all(math.isfinite(v) for v in vals):
        raise FormatError(f"{where}: non-finite value")
    return vals


def _ints(tokens, count, where):
    if len(tokens) != count:
        raise FormatError(f"{where}: expected {count} values, found {len(tokens)}")
    try:
        return [int(t) for t in tokens]
    except ValueError:
        raise FormatError(f"{where}: not an integer in {' '.join(tokens)!r}") from None


def _read_text_mesh(path) -> InputMesh:
    sections = {"vertices": 3, "tetrahedra": 4, "hexahedra": 8, "volumes": 1}
    data = {}
    it = _lines(path)
    n = None
    for lineno, tokens in it:
        where = f"{path}:{lineno}"
        name = tokens[0]
        if name not in sections or len(tokens) != 2:
            raise FormatError(f"{where}: expected a section header '<name> <count>' with name in {sorted(sections)}")
        if name in data:
            raise FormatError(f"{where}: duplicate section {name!r}")
        if name != "vertices" and n is None:
            raise FormatError(f"{where}: the vertices section must come first")
        count = _ints(tokens[1:], 1, where)[0]
        if count < 0:
            raise FormatError(f"{where}: negative count")
        width = sections[name]
        rows = []
        for _ in range(count):
            try:
                lineno, tokens = next(it)
            except StopIteration:
                raise FormatError(f"{path}: section {name!r} ends after {len(rows)} of {count} rows") from None
            where = f"{path}:{lineno}"
            if name in ("vertices", "volumes"):
                row = _floats(tokens, width, where)
                if name == "volumes" and row[0] <= 0:
                    raise FormatError(f"{where}: volume must be positive")
            else:
                row = _ints(tokens, width, where)
                bad = [v for v in row if not 0 <= v < n]
                if bad:
                    raise FormatError(f"{where}: vertex index {bad[0]} outside [0, {n})")
            rows.append(row)
        if name == "vertices":
            n = count
            if n < 1:
                raise FormatError(f"{path}: a mesh needs at least one vertex")
        elif name == "volumes" and count != n:
            raise FormatError(f"{where}: volumes section has {count} rows for {n} vertices")
        data[name] = rows
    if n is None:
        raise FormatError(f"{path}: no vertices section")
    vols = data.get("volumes")
    return InputMesh(
        np.array(data["vertices"], dtype=np.float64).reshape(-1, 3),
        tetrahedra=np.array(data["tetrahedra"], np.int64).reshape(-1, 4) if "tetrahedra" in data else None,
        hexahedra=np.array(data["hexahedra"], np.int64).reshape(-1, 8) if "hexahedra" in data else None,
        explicit_volumes=np.array(vols, np.float64).ravel() if vols is not None else None,
    )


def _read_grid(path) -> InputMesh:
    spec = {"origin": (3, float), "spacing": (1, float), "counts": (3, int)}
    found = {}
    for lineno, tokens in _lines(path):
        where = f"{path}:{lineno}"
        key = tokens[0]
        if key not in spec:
            raise FormatError(f"{where}: unknown key {key!r}; expected one of {sorted(spec)}")
        width, kind = spec[key]
        vals = _floats(tokens[1:], width, where) if kind is float else _ints(tokens[1:], width, where)
        if key == "spacing" and vals[0] <= 0:
            raise FormatError(f"{where}: spacing must be positive")
        if key == "counts" and min(vals) < 1:
            raise FormatError(f"{where}: counts must be at least 1")
        found[key] = vals
    missing = [k for k in ("spacing", "counts") if k not in found]
    if missing:
        raise FormatError(f"{path}: missing {', '.join(missing)}")
    return grid_mesh(found["counts"], found["spacing"][0], found.get("origin", (0.0, 0.0, 0.0)))


def read_mesh(path) -> InputMesh:
    """Read a ``.pdmesh`` text mesh or a ``.grid`` descriptor."""
    suffix = Path(path).suffix.lower()
    if suffix == ".pdmesh":
        return _read_text_mesh(path)
    if suffix == ".grid":
        return _read_grid(path)
    raise FormatError(f"{path}: unknown mesh extension {suffix!r} (expected .pdmesh or .grid)")


def write_mesh(path, mesh: InputMesh) -> None:
    out = [f"vertices {mesh.n}"]
    out += ["%.17g %.17g %.17g" % tuple(v) for v in mesh.vertices]
    for name, cells in (("tetrahedra", mesh.tetrahedra), ("hexahedra", mesh.hexahedra)):
        if cells is not None:
            out.append(f"{name} {len(cells)}")
            out += [" ".join(str(int(k)) for k in c) for c in cells]
    if mesh.explicit_volumes is not None:
        out.append(f"volumes {mesh.n}")
        out += ["%.17g" % v for v in mesh.explicit_volumes]
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def write_grid(path, counts, spacing, origin=(0.0, 0.0, 0.0)) -> None:
    Path(path).write_text(
        "origin %.17g %.17g %.17g\nspacing %.17g\ncounts %d %d %d\n" % (*origin, spacing, *counts),
        encoding="utf-8")


# --------------------------------------------------------------- snapshots


@dataclass
class Snapshot:
    step: int
    coords: np.ndarray
    u: np.ndarray
    ud: np.ndarray
    damage: np.ndarray
    version: int = FORMAT_VERSION

    def __post_init__(self):
        n = len(self.coords)
        for name in ("coords", "u", "ud"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (n, 3):
                raise DomainError(f"snapshot field {name} must have shape ({n}, 3)")
            setattr(self, name, arr)
        self.damage = np.asarray(self.damage, dtype=np.float64)
        if self.damage.shape != (n,):
            raise DomainError("snapshot damage must have one value per node")
        if np.any((self.damage < 0) | (self.damage > 1)):
            raise DomainError("damage must lie in [0, 1]")

    @property
    def n(self) -> int:
        return len(self.coords)


def format_snapshot(snap: Snapshot) -> str:
    table = np.column_stack([snap.coords, snap.u, snap.ud, snap.damage])
    buf = _io.StringIO()
    buf.write(f"PDSNAP {snap.version} step {snap.step} points {snap.n}\n")
    buf.write(" ".join(SNAPSHOT_COLUMNS) + "\n")
    np.savetxt(buf, table, fmt="%.17g")
    return buf.getvalue()


def write_snapshot(path, snap: Snapshot) -> None:
    """Write ``snap`` as text; raises OSError naming the path and step on failure."""
    text = format_snapshot(snap)
    try:
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write snapshot for step {snap.step} to {path}: {exc}") from exc


def read_snapshot(path) -> Snapshot:
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().split()
        if len(header) != 6 or header[0] != "PDSNAP" or header[2] != "step" or header[4] != "points":
            raise FormatError(f"{path}:1: not a snapshot header")
        version, step, n = int(header[1]), int(header[3]), int(header[5])
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: snapshot version {version} is not supported")
        columns = fh.readline().split()
        if tuple(columns) != SNAPSHOT_COLUMNS:
            raise FormatError(f"{path}:2: unexpected column line")
        table = np.loadtxt(fh, dtype=np.float64, ndmin=2)
    if table.shape != (n, len(SNAPSHOT_COLUMNS)):
        raise FormatError(f"{path}: expected {n} rows of {len(SNAPSHOT_COLUMNS)} values")
    return Snapshot(step, table[:, 0:3], table[:, 3:6], table[:, 6:9], table[:, 9])


def write_vtk(path, snap: Snapshot) -> None:
    """Legacy ASCII VTK point cloud for ParaView and similar viewers."""
    n = snap.n
    lines = ["# vtk DataFile Version 3.0", f"peridyn step {snap.step}", "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {n} double"]
    lines += ["%.17g %.17g %.17g" % tuple(p) for p in snap.coords]
    lines += [f"CELLS {n} {2 * n}"] + [f"1 {i}" for i in range(n)]
    lines += [f"CELL_TYPES {n}"] + ["1"] * n
    lines += [f"POINT_DATA {n}", "VECTORS displacement double"]
    lines += ["%.17g %.17g %.17g" % tuple(p) for p in snap.u]
    lines += ["VECTORS velocity double"] + ["%.17g %.17g %.17g" % tuple(p) for p in snap.ud]
    lines += ["SCALARS damage double 1", "LOOKUP_TABLE default"] + ["%.17g" % p for p in snap.damage]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


# ----------------------------------------------------------- binary caches

_FAMILY_MAGIC = b"PDNL"
_STATE_MAGIC = b"PDST"
_FLOAT_CODES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


def _section(arr, dtype) -> bytes:
    raw = np.ascontiguousarray(arr, dtype=dtype).tobytes()
    return struct.pack("<Q", len(raw)) + raw


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = memoryview(data)
        self.pos = 0
        self.path = path

    def take(self, size: int) -> memoryview:
        if size < 0 or self.pos + size > len(self.data):
            raise FormatError(f"{self.path}: truncated at byte {self.pos}")
        chunk = self.data[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def section(self, name: str, dtype, count: int, shape) -> np.ndarray:
        (size,) = self.unpack("<Q")
        dtype = np.dtype(dtype)
        if size != count * dtype.itemsize:
            raise FormatError(f"{self.path}: section {name!r} has {size} bytes, "
                              f"expected {count * dtype.itemsize}")
        return np.frombuffer(self.take(size), dtype=dtype).astype(dtype.newbyteorder("="), copy=True).reshape(shape)

    def header(self, magic: bytes):
        if bytes(self.take(4)) != magic:
            raise FormatError(f"{self.path}: bad magic (expected {magic.decode()})")
        (version,) = self.unpack("<I")
        if version != FORMAT_VERSION:
            raise FormatError(f"{self.path}: format version {version}, this reader supports {FORMAT_VERSION}")

    def finish(self):
        if self.pos != len(self.data):
            raise FormatError(f"{self.path}: {len(self.data) - self.pos} trailing bytes")


def _check_dims(path, n, N):
    if n < 1 or N < 1 or N & (N - 1) or n * N > 1 << 40:
        raise FormatError(f"{path}: implausible dimensions n={n}, N={N}")


def _rebuild_family(path, entries, n_neigh, N, horizon) -> NeighborList:
    try:
        fam = NeighborList(entries, n_neigh, N, horizon)
        fam.validate()
    except DomainError as exc:
        raise FormatError(f"{path}: invalid neighbour list: {exc}") from None
    return fam


def save_cache(path, family: NeighborList, corrections: Optional[np.ndarray] = None) -> None:
    """Write the neighbour list and optional per-bond stiffness corrections."""
    n, N = family.entries.shape
    if corrections is not None and np.shape(corrections) != (n, N):
        raise DomainError("corrections must align with the neighbour list")
    parts = [_FAMILY_MAGIC, struct.pack("<IQQdB", FORMAT_VERSION, n, N, family.horizon, corrections is not None),
             _section(family.entries, "<i4"), _section(family.n_neigh, "<i4")]
    if corrections is not None:
        parts.append(_section(corrections, "<f8"))
    Path(path).write_bytes(b"".join(parts))


def load_cache(path) -> Tuple[NeighborList, Optional[np.ndarray]]:
    r = _Reader(Path(path).read_bytes(), path)
    r.header(_FAMILY_MAGIC)
    n, N, horizon, has_lam = r.unpack("<QQdB")
    _check_dims(path, n, N)
    if has_lam not in (0, 1) or not horizon > 0:
        raise FormatError(f"{path}: corrupt header")
    entries = r.section("entries", "<i4", n * N, (n, N))
    n_neigh = r.section("n_neigh", "<i4", n, (n,))
    lam = r.section("corrections", "<f8", n * N, (n, N)) if has_lam else None
    r.finish()
    return _rebuild_family(path, entries, n_neigh, N, horizon), lam


def save_state(path, state: SimulationState) -> None:
    conn = state.connectivity
    n, N = conn.entries.shape
    width = state.u.dtype.itemsize
    if width not in _FLOAT_CODES:
        raise DomainError(f"unsupported state precision {state.u.dtype}")
    ft = _FLOAT_CODES[width]
    parts = [_STATE_MAGIC, struct.pack("<IQQQdB", FORMAT_VERSION, n, N, state.step, conn.horizon, width),
             _section(state.u, ft), _section(state.ud, ft), _section(state.udd, ft),
             _section(conn.entries, "<i4"), _section(conn.n_neigh, "<i4"),
             _section(state.bond_history, ft)]
    Path(path).write_bytes(b"".join(parts))


def load_state(path) -> SimulationState:
    r = _Reader(Path(path).read_bytes(), path)
    r.header(_STATE_MAGIC)
    n, N, step, horizon, width = r.unpack("<QQQdB")
    _check_dims(path, n, N)
    if width not in _FLOAT_CODES or not horizon > 0:
        raise FormatError(f"{path}: corrupt header")
    ft = _FLOAT_CODES[width]
    u, ud, udd = (r.section(name, ft, 3 * n, (n, 3)) for name in ("u", "ud", "udd"))
    entries = r.section("entries", "<i4", n * N, (n, N))
    n_neigh = r.section("n_neigh", "<i4", n, (n,))
    history = r.section("bond_history", ft, n * N, (n, N))
    r.finish()
    return SimulationState(u, ud, udd, int(step), _rebuild_family(path, entries, n_neigh, N, horizon), history)


# ------------------------------------------------------------ experiment curves


def read_curve(path) -> Tuple[np.ndarray, np.ndarray]:
    """Two-column CSV (control, force); a non-numeric first line is a header."""
    xs: List[float] = []
    ys: List[float] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            text = raw.strip()
            if not text or text.startswith("#"):
                continue
            tokens = [t.strip() for t in text.split(",")]
            if lineno == 1 and not xs and not any(_is_number(t) for t in tokens):
                continue
            x, y = _floats(tokens, 2, f"{path}:{lineno}")
            xs.append(x)
            ys.append(y)
    if not xs:
        raise FormatError(f"{path}: no data rows")
    return np.array(xs), np.array(ys)


def _is_number(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


def write_curve(path, control, force, header=("control", "force")) -> None:
    lines = [",".join(header)] + ["%.17g,%.17g" % (x, y) for x, y in zip(control, force)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

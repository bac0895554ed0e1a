"""Flat ``key = value`` run configuration and model assembly.

Scalar keys are listed in :data:`SCALAR_KEYS`. Regions are declared with
repeatable groups ``<group>.<name>.<field>`` where ``group`` is one of
``bc``, ``tip``, ``nofail``, ``notch`` or ``ic`` and every region is
selected by ``box = x0 y0 z0 x1 y1 z1`` or ``nodes = i j k ...``.
Blank lines and text after ``#`` are ignored. Relative paths are resolved
against the directory of the config file.
"""
from __future__ import annotations

import difflib
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .core import BoundaryConditions, DamageModel, DomainError, NeighborList, ParticleSet, critical_stretch, pmb_micromodulus
from .engine import Model, RampProfile, make_integrator, stable_timestep_hint
from .geometry import (
    break_initial_bonds,
    build_family,
    grid_mesh,
    intersects_box,
    lump_volumes,
    nodes_in_box,
    surface_correction_factors,
)

SCALAR_KEYS = {
    # geometry
    "mesh": "path to a .pdmesh or .grid file",
    "grid.counts": "nx ny nz of an inline regular grid",
    "grid.spacing": "node spacing of the inline grid (m)",
    "grid.origin": "origin of the inline grid (m)",
    "spacing": "nominal node spacing for horizon_ratio on non-grid meshes (m)",
    "horizon": "horizon delta (m)",
    "horizon_ratio": "delta / spacing when horizon is not given (default pi)",
    "density": "mass density (kg/m^3)",
    # constitutive law
    "model": "pmb, bilinear or trilinear",
    "c": "bond micromodulus (N/m^6)",
    "bulk_modulus": "K (Pa), used for c when c is absent",
    "youngs_modulus": "E (Pa)",
    "poisson": "Poisson ratio (default 0.25)",
    "fracture_energy": "G (J/m^2), used for sc when sc is absent",
    "regime": "3d, plane_stress or plane_strain",
    "s0": "end of the linear segment",
    "s1": "kink stretch of the trilinear law",
    "sc": "critical stretch",
    "kink": "force at s1 as a fraction of c s0 (default 0.25)",
    "damping": "viscous damping eta (kg/(m^3 s))",
    "surface_correction": "true to scale bond stiffness near free surfaces",
    "correction_volume": "analytic, max, or a number (m^3)",
    "packing": "packing factor on the analytic neighbourhood volume",
    # time stepping
    "dt": "time step (s) or auto",
    "dt_safety": "safety factor of the automatic time step (default 0.8)",
    "steps": "number of steps",
    "write_every": "snapshot and tip-record interval (default steps)",
    "integrator": "verlet, euler or euler_cromer",
    "precision": "f64 or f32",
    "variant": "bpr or node",
    "vtk": "true to also write .vtk snapshots",
    # outputs and caches
    "out": "output directory",
    "cache": "neighbour-list cache file",
    # bench
    "bench.sizes": "node counts",
    "bench.group_sizes": "group sizes N",
    "bench.variants": "kernel variants",
    "bench.steps": "timed steps per run",
    "bench.repeats": "repeats per configuration (median reported)",
    # calibrate
    "calibrate.target": "two-column CSV (control, force)",
    "calibrate.tip": "tip set providing control and reaction",
    "calibrate.axis": "x, y or z",
    "calibrate.force_sign": "sign applied to the summed bond force (default -1)",
    "calibrate.c": "bracket lo hi for c, omit to keep c fixed",
    "calibrate.s0": "bracket lo hi",
    "calibrate.s1": "bracket lo hi",
    "calibrate.sc": "bracket lo hi",
    "calibrate.order": "search order of s0 s1 sc",
    "calibrate.max_cycles": "cycle cap",
}

REGION_FIELDS = {
    "bc": ("box", "nodes", "type", "axis", "value", "ramp", "rise_steps"),
    "tip": ("box", "nodes"),
    "nofail": ("box", "nodes"),
    "notch": ("box",),
    "ic": ("box", "nodes", "velocity"),
}

AXES = {"x": 0, "y": 1, "z": 2, "0": 0, "1": 1, "2": 2}


class ConfigError(DomainError):
    """Invalid or inconsistent configuration."""


@dataclass
class Region:
    group: str
    name: str
    fields: Dict[str, str] = field(default_factory=dict)
    lines: Dict[str, int] = field(default_factory=dict)

    @property
    def label(self) -> str:
        return f"{self.group}.{self.name}"


@dataclass
class RunConfig:
    values: Dict[str, str]
    lines: Dict[str, int]
    regions: List[Region]
    base_dir: str = "."
    source: str = "<config>"

    # ---------------------------------------------------------- accessors

    def has(self, key: str) -> bool:
        return key in self.values

    def _where(self, key: str) -> str:
        return f"{self.source}:{self.lines[key]}" if key in self.lines else self.source

    def str(self, key: str, default: Optional[str] = None) -> Optional[str]:
        return self.values.get(key, default)

    def float(self, key: str, default: Optional[float] = None) -> Optional[float]:
        if key not in self.values:
            return default
        try:
            v = float(self.values[key])
        except ValueError:
            raise ConfigError(f"{self._where(key)}: {key} must be a number") from None
        if not math.isfinite(v):
            raise ConfigError(f"{self._where(key)}: {key} must be finite")
        return v

    def int(self, key: str, default: Optional[int] = None) -> Optional[int]:
        if key not in self.values:
            return default
        try:
            return int(self.values[key])
        except ValueError:
            raise ConfigError(f"{self._where(key)}: {key} must be an integer") from None

    def floats(self, key: str, count: Optional[int] = None) -> Optional[List[float]]:
        if key not in self.values:
            return None
        try:
            vals = [float(t) for t in self.values[key].split()]
        except ValueError:
            raise ConfigError(f"{self._where(key)}: {key} must be numbers") from None
        if count is not None and len(vals) != count:
            raise ConfigError(f"{self._where(key)}: {key} needs {count} values")
        return vals

    def ints(self, key: str) -> Optional[List[int]]:
        vals = self.floats(key)
        if vals is None:
            return None
        if any(v != int(v) for v in vals):
            raise ConfigError(f"{self._where(key)}: {key} must be integers")
        return [int(v) for v in vals]

    def bool(self, key: str, default: bool = False) -> bool:
        if key not in self.values:
            return default
        v = self.values[key].lower()
        if v in ("true", "yes", "1", "on"):
            return True
        if v in ("false", "no", "0", "off"):
            return False
        raise ConfigError(f"{self._where(key)}: {key} must be true or false")

    def path(self, key: str) -> Optional[str]:
        if key not in self.values:
            return None
        return os.path.join(self.base_dir, self.values[key])

    def group(self, name: str) -> List[Region]:
        return [r for r in self.regions if r.group == name]


def _suggest(key: str, region_names: Dict[str, set]) -> str:
    candidates = list(SCALAR_KEYS)
    parts = key.split(".")
    if len(parts) >= 3 and parts[0] in REGION_FIELDS:
        candidates += [f"{parts[0]}.{parts[1]}.{f}" for f in REGION_FIELDS[parts[0]]]
    for group, fields in REGION_FIELDS.items():
        candidates += [f"{group}.<name>.{f}" for f in fields]
    match = difflib.get_close_matches(key, candidates, n=1, cutoff=0.0)
    return match[0] if match else ""


def parse_config(text: str, source: str = "<config>", base_dir: str = ".") -> RunConfig:
    values: Dict[str, str] = {}
    lines: Dict[str, int] = {}
    regions: Dict[Tuple[str, str], Region] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        body = raw.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (t.strip() for t in body.split("=", 1))
        if not key or not value:
            raise ConfigError(f"{source}:{lineno}: empty key or value")
        parts = key.split(".")
        if parts[0] in REGION_FIELDS and len(parts) == 3 and parts[2] in REGION_FIELDS[parts[0]] and parts[1]:
            region = regions.setdefault((parts[0], parts[1]), Region(parts[0], parts[1]))
            if parts[2] in region.fields:
                raise ConfigError(f"{source}:{lineno}: duplicate key {key}")
            region.fields[parts[2]] = value
            region.lines[parts[2]] = lineno
            continue
        if key not in SCALAR_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}; nearest valid key is {_suggest(key, {})!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key}")
        values[key] = value
        lines[key] = lineno
    return RunConfig(values, lines, list(regions.values()), base_dir, source)


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return parse_config(text, str(path), os.path.dirname(os.path.abspath(path)))


# -------------------------------------------------------------- assembly


def _mesh(cfg: RunConfig):
    from .io import read_mesh

    if cfg.has("mesh") and cfg.has("grid.counts"):
        raise ConfigError(f"{cfg.source}: give either mesh or grid.counts, not both")
    if cfg.has("mesh"):
        return read_mesh(cfg.path("mesh"))
    if cfg.has("grid.counts"):
        counts = cfg.ints("grid.counts")
        spacing = cfg.float("grid.spacing")
        if len(counts) != 3 or min(counts) < 1:
            raise ConfigError(f"{cfg._where('grid.counts')}: grid.counts needs three positive integers")
        if spacing is None or spacing <= 0:
            raise ConfigError(f"{cfg.source}: grid.spacing must be positive")
        return grid_mesh(counts, spacing, cfg.floats("grid.origin", 3) or (0.0, 0.0, 0.0))
    raise ConfigError(f"{cfg.source}: no geometry; set mesh or grid.counts")


def _horizon(cfg: RunConfig, mesh) -> float:
    if cfg.has("horizon"):
        delta = cfg.float("horizon")
    else:
        spacing = mesh.grid_spacing if mesh.grid_spacing is not None else cfg.float("spacing")
        if spacing is None:
            raise ConfigError(f"{cfg.source}: set horizon, or spacing with horizon_ratio")
        delta = cfg.float("horizon_ratio", math.pi) * spacing
    if not delta > 0:
        raise ConfigError(f"{cfg.source}: horizon must be positive")
    return delta


def damage_model_from_config(cfg: RunConfig, horizon: float) -> DamageModel:
    kind = cfg.str("model", "pmb")
    poisson = cfg.float("poisson", 0.25)
    E = cfg.float("youngs_modulus")
    c = cfg.float("c")
    if c is None:
        K = cfg.float("bulk_modulus")
        if K is None and E is not None:
            K = E / (3.0 * (1.0 - 2.0 * poisson))
        if K is None:
            raise ConfigError(f"{cfg.source}: set c, bulk_modulus or youngs_modulus")
        c = pmb_micromodulus(K, horizon)
    sc = cfg.float("sc")
    if sc is None:
        G = cfg.float("fracture_energy")
        if G is None or E is None:
            raise ConfigError(f"{cfg.source}: set sc, or fracture_energy with youngs_modulus")
        sc = critical_stretch(G, E, horizon, cfg.str("regime", "3d"))
    damping = cfg.float("damping", 0.0)
    if kind == "pmb":
        return DamageModel.pmb(c, sc, damping=damping)
    need = ("s0",) if kind == "bilinear" else ("s0", "s1")
    if kind not in ("bilinear", "trilinear"):
        raise ConfigError(f"{cfg._where('model')}: model must be pmb, bilinear or trilinear")
    missing = [k for k in need if not cfg.has(k)]
    if missing:
        raise ConfigError(f"{cfg.source}: {kind} model needs {', '.join(missing)}")
    if kind == "bilinear":
        return DamageModel.bilinear(c, cfg.float("s0"), sc, damping=damping)
    return DamageModel.trilinear(c, cfg.float("s0"), cfg.float("s1"), sc, cfg.float("kink", 0.25), damping=damping)


def _select(region: Region, coords: np.ndarray) -> np.ndarray:
    has_box, has_nodes = "box" in region.fields, "nodes" in region.fields
    if has_box == has_nodes:
        raise ConfigError(f"region {region.label}: give exactly one of box or nodes")
    try:
        if has_box:
            vals = [float(t) for t in region.fields["box"].split()]
            if len(vals) != 6:
                raise ValueError
            idx = nodes_in_box(coords, vals[:3], vals[3:])
        else:
            idx = np.array([int(t) for t in region.fields["nodes"].split()], dtype=np.int64)
    except ValueError:
        raise ConfigError(f"region {region.label}: malformed {'box' if has_box else 'nodes'}") from None
    if len(idx) == 0:
        raise ConfigError(f"region {region.label} selects no nodes")
    if idx.min() < 0 or idx.max() >= len(coords):
        raise ConfigError(f"region {region.label}: node index out of range")
    return idx


def _axis(region: Region) -> int:
    a = region.fields.get("axis")
    if a not in AXES:
        raise ConfigError(f"region {region.label}: axis must be x, y or z")
    return AXES[a]


def boundary_from_config(cfg: RunConfig, coords: np.ndarray, steps: int) -> Tuple[BoundaryConditions, np.ndarray]:
    """Boundary conditions and the initial velocity field."""
    n = len(coords)
    bc = BoundaryConditions.free(n)
    for region in cfg.group("bc"):
        idx = _select(region, coords)
        kind = region.fields.get("type", "displacement")
        if kind not in ("displacement", "force"):
            raise ConfigError(f"region {region.label}: type must be displacement or force")
        try:
            value = float(region.fields.get("value", "0"))
            rise = int(region.fields.get("rise_steps", str(steps)))
            ramp = RampProfile(region.fields.get("ramp", "constant"), rise)
        except (ValueError, DomainError) as exc:
            raise ConfigError(f"region {region.label}: {exc}") from None
        setter = bc.set_displacement if kind == "displacement" else bc.set_force
        setter(idx, _axis(region), value, ramp)
    for region in cfg.group("tip"):
        bc.add_tip_set(region.name, _select(region, coords))
    for region in cfg.group("nofail"):
        bc.no_failure[_select(region, coords)] = True
    velocity = np.zeros((n, 3))
    for region in cfg.group("ic"):
        idx = _select(region, coords)
        try:
            v = [float(t) for t in region.fields.get("velocity", "").split()]
        except ValueError:
            v = []
        if len(v) != 3:
            raise ConfigError(f"region {region.label}: velocity needs three numbers")
        velocity[idx] = v
    return bc, velocity


@dataclass
class Assembly:
    model: Model
    initial_velocity: np.ndarray
    steps: int
    write_every: int
    corrections: Optional[np.ndarray]


def build_geometry(cfg: RunConfig):
    """Particles, family and optional stiffness corrections (the cacheable part)."""
    mesh = _mesh(cfg)
    horizon = _horizon(cfg, mesh)
    density = cfg.float("density")
    if density is None:
        raise ConfigError(f"{cfg.source}: density is required")
    particles = ParticleSet(mesh.vertices, lump_volumes(mesh), density)
    return particles, horizon


def corrections_for(cfg: RunConfig, particles: ParticleSet, family: NeighborList) -> Optional[np.ndarray]:
    if not cfg.bool("surface_correction"):
        return None
    v0 = cfg.str("correction_volume", "analytic")
    v0 = None if v0 == "analytic" else ("max" if v0 == "max" else cfg.float("correction_volume"))
    return surface_correction_factors(particles.volume, family, v0, cfg.float("packing", 1.0))


def assemble(cfg: RunConfig, family: Optional[NeighborList] = None,
             corrections: Optional[np.ndarray] = None, precision: Optional[str] = None,
             variant: Optional[str] = None, law: Optional[DamageModel] = None) -> Assembly:
    """Model, initial velocity and run lengths described by ``cfg``.

    ``family`` and ``corrections`` come from a neighbour-list cache when
    given. ``law`` overrides the configured damage model.
    """
    particles, horizon = build_geometry(cfg)
    if family is None:
        family = build_family(particles.coords, horizon)
        corrections = corrections_for(cfg, particles, family)
    elif family.n != particles.n or not math.isclose(family.horizon, horizon, rel_tol=1e-12):
        raise ConfigError("cached neighbour list does not match the configured mesh and horizon")
    if law is None:
        law = damage_model_from_config(cfg, horizon)
    steps = cfg.int("steps")
    if steps is None or steps < 1:
        raise ConfigError(f"{cfg.source}: steps must be a positive integer")
    write_every = cfg.int("write_every", steps)
    if write_every < 1:
        raise ConfigError(f"{cfg.source}: write_every must be positive")
    connectivity = family
    for region in cfg.group("notch"):
        try:
            vals = [float(t) for t in region.fields["box"].split()]
            if len(vals) != 6:
                raise ValueError
        except ValueError:
            raise ConfigError(f"region {region.label}: box needs six numbers") from None
        before = connectivity.bond_count()
        connectivity = break_initial_bonds(connectivity, particles.coords, intersects_box(vals[:3], vals[3:]))
        if connectivity.bond_count() == before:
            raise ConfigError(f"region {region.label} cuts no bonds")
    bc, velocity = boundary_from_config(cfg, particles.coords, steps)
    dt_text = cfg.str("dt", "auto")
    if dt_text == "auto":
        dt = stable_timestep_hint(particles, law, family, cfg.float("dt_safety", 0.8))
    else:
        dt = cfg.float("dt")
        if not dt > 0:
            raise ConfigError(f"{cfg._where('dt')}: dt must be positive")
    precision = precision or cfg.str("precision", "f64")
    dtypes = {"f64": np.float64, "f32": np.float32}
    if precision not in dtypes:
        raise ConfigError(f"precision must be f32 or f64, got {precision!r}")
    variant = variant or cfg.str("variant", "bpr")
    if variant not in ("bpr", "node"):
        raise ConfigError(f"variant must be bpr or node, got {variant!r}")
    model = Model(particles, family, law, make_integrator(cfg.str("integrator", "verlet"), dt), bc,
                  connectivity=connectivity, stiffness_corrections=corrections,
                  dtype=dtypes[precision], variant=variant)
    return Assembly(model, velocity, steps, write_every, corrections)

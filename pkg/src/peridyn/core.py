"""Domain types and closed-form constitutive relations.

Everything here is a pure function of its inputs. Arrays are numpy; the
containers are plain dataclasses so that they can be shared read-only
between the geometry pipeline, the engine and the file formats.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np

__all__ = [
    "PeridynError",
    "DomainError",
    "SimulationError",
    "ParticleSet",
    "NeighborList",
    "DamageModel",
    "SimulationState",
    "BoundaryConditions",
    "FREE",
    "DISPLACEMENT",
    "FORCE",
    "pmb_micromodulus",
    "critical_stretch",
    "bilinear_elastic_limit",
    "bond_stretch",
    "damage_force_scalar",
    "local_damage",
    "damage_field",
    "rayleigh_speed",
    "crack_speed",
    "next_power_of_two",
]

FREE, DISPLACEMENT, FORCE = 0, 1, 2


class PeridynError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(PeridynError, ValueError):
    """An argument lies outside the domain of a formula or contract."""


class SimulationError(PeridynError, RuntimeError):
    """A time-stepping run could not continue."""

    def __init__(self, message: str, step: Optional[int] = None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


def _positive(**values: float) -> None:
    for name, value in values.items():
        if not (value > 0 and math.isfinite(value)):
            raise DomainError(f"{name} must be positive and finite, got {value!r}")


def next_power_of_two(k: int) -> int:
    """Smallest power of two >= k (1 for k <= 1)."""
    n = 1
    while n < k:
        n *= 2
    return n


# ---------------------------------------------------------------- types


@dataclass(frozen=True)
class ParticleSet:
    """Reference configuration of the discretised body."""

    coords: np.ndarray
    volume: np.ndarray
    density: np.ndarray
    material_tag: np.ndarray = 0

    def __post_init__(self):
        coords = np.ascontiguousarray(self.coords, dtype=np.float64)
        if coords.ndim != 2 or coords.shape[1] != 3 or len(coords) < 1:
            raise DomainError("coords must be an (n, 3) array with n >= 1")
        n = len(coords)
        volume = np.ascontiguousarray(np.broadcast_to(self.volume, (n,)), dtype=np.float64)
        density = np.ascontiguousarray(np.broadcast_to(self.density, (n,)), dtype=np.float64)
        tag = np.ascontiguousarray(np.broadcast_to(self.material_tag, (n,)), dtype=np.int32)
        if not np.all(np.isfinite(coords)):
            raise DomainError("coords must be finite")
        if not np.all(volume > 0):
            raise DomainError("all volumes must be positive")
        if not np.all(density > 0):
            raise DomainError("all densities must be positive")
        if np.any(tag < 0):
            raise DomainError("material tags must be non-negative")
        for name, arr in (("coords", coords), ("volume", volume),
                          ("density", density), ("material_tag", tag)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return len(self.coords)

    @classmethod
    def uniform(cls, coords, volume, density, material_tag=0) -> "ParticleSet":
        return cls(np.asarray(coords, dtype=np.float64), volume, density, material_tag)


@dataclass
class NeighborList:
    """Padded n x N connectivity; ``-1`` marks padding and broken bonds.

    ``entries`` is a C-contiguous ``(n, N)`` int32 array, i.e. the flat
    row-major layout with ``entries.ravel()[i * N + k]`` the k-th slot of
    node i.
    """

    entries: np.ndarray
    n_neigh: np.ndarray
    group_size: int
    horizon: float

    def __post_init__(self):
        self.entries = np.ascontiguousarray(self.entries, dtype=np.int32)
        self.n_neigh = np.ascontiguousarray(self.n_neigh, dtype=np.int32)
        self.group_size = int(self.group_size)
        self.horizon = float(self.horizon)
        if self.entries.ndim != 2 or self.entries.shape[1] != self.group_size:
            raise DomainError("entries must have shape (n, group_size)")
        if self.group_size & (self.group_size - 1):
            raise DomainError(f"group size {self.group_size} is not a power of two")
        if self.n_neigh.shape != (len(self.entries),):
            raise DomainError("n_neigh must have one count per row")

    @property
    def n(self) -> int:
        return len(self.entries)

    def copy(self) -> "NeighborList":
        return NeighborList(self.entries.copy(), self.n_neigh.copy(), self.group_size, self.horizon)

    def validate(self) -> None:
        """Check the structural invariants; raise DomainError on failure."""
        e = self.entries
        n = len(e)
        if np.any((e < -1) | (e >= n)):
            raise DomainError("entries must be -1 or a valid node index")
        if not np.array_equal((e != -1).sum(axis=1), self.n_neigh):
            raise DomainError("n_neigh does not match the non-sentinel entry count")
        rows = np.arange(n)[:, None]
        if np.any(e == rows):
            raise DomainError("a node appears in its own family")
        s = np.sort(np.where(e == -1, -1 - np.arange(e.shape[1]), e), axis=1)
        if np.any(s[:, 1:] == s[:, :-1]):
            raise DomainError("duplicate entries within a row")

    def rows(self):
        """Yield the live neighbours of each node as arrays."""
        for row in self.entries:
            yield row[row != -1]

    def bond_count(self) -> int:
        return int(self.n_neigh.sum())


@dataclass(frozen=True)
class DamageModel:
    """Piecewise-linear bond force-stretch envelope, one per bond type.

    For bond type t the envelope runs through the origin and the points
    ``(breakpoints[t, m], forces[t, m])``; the last breakpoint is the
    critical stretch and carries zero force except for the one-segment
    (PMB) law, whose envelope is ``c * s`` right up to the critical stretch.
    Types with fewer segments are padded by repeating their last point.

    ``stiffness[t]`` is the micromodulus c (initial slope). ``damping`` is
    the dynamic-relaxation coefficient in kg/(m^3 s).
    """

    stiffness: np.ndarray
    breakpoints: np.ndarray
    forces: np.ndarray
    damping: float = 0.0
    surface_correction: bool = False
    partial_volume: bool = False

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.stiffness, dtype=np.float64)).copy()
        bp = np.atleast_2d(np.asarray(self.breakpoints, dtype=np.float64)).copy()
        fv = np.atleast_2d(np.asarray(self.forces, dtype=np.float64)).copy()
        if bp.shape != fv.shape or bp.shape[0] != len(c):
            raise DomainError("stiffness, breakpoints and forces disagree on bond-type count")
        if not np.all(c > 0):
            raise DomainError("stiffness must be positive")
        if not np.all(bp > 0):
            raise DomainError("breakpoints must be positive")
        if np.any(np.diff(bp, axis=1) < 0):
            raise DomainError("breakpoints must be increasing")
        for t in range(len(c)):
            _, first = np.unique(bp[t], return_index=True)
            live = np.sort(first)
            if not np.allclose(fv[t, 0], c[t] * bp[t, 0], rtol=1e-12, atol=0):
                raise DomainError(f"bond type {t}: envelope must have initial slope c")
            padded = np.ones(bp.shape[1], bool)
            padded[live] = False
            if np.any(fv[t][padded] != fv[t, -1]) or np.any(bp[t][padded] != bp[t, -1]):
                raise DomainError(f"bond type {t}: padding must repeat the final point")
            if len(live) > 1 and fv[t, -1] != 0.0:
                raise DomainError(f"bond type {t}: force at the critical stretch must be zero")
        if self.damping < 0:
            raise DomainError("damping must be non-negative")
        for name, arr in (("stiffness", c), ("breakpoints", bp), ("forces", fv)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "damping", float(self.damping))

    @property
    def n_types(self) -> int:
        return len(self.stiffness)

    @property
    def critical_stretch(self) -> np.ndarray:
        return self.breakpoints[:, -1]

    @property
    def is_linear(self) -> bool:
        """True when every bond type is a one-segment (PMB) law."""
        return bool(np.all(self.breakpoints == self.breakpoints[:, :1]))

    # constructors -----------------------------------------------------

    @classmethod
    def pmb(cls, c: float, s_c: float, damping: float = 0.0, **kw) -> "DamageModel":
        _positive(c=c, s_c=s_c)
        return cls([c], [[s_c]], [[c * s_c]], damping, **kw)

    @classmethod
    def bilinear(cls, c: float, s0: float, s_c: float, damping: float = 0.0, **kw) -> "DamageModel":
        _positive(c=c, s0=s0, s_c=s_c)
        if not s0 < s_c:
            raise DomainError("bilinear model needs s0 < s_c")
        return cls([c], [[s0, s_c]], [[c * s0, 0.0]], damping, **kw)

    @classmethod
    def trilinear(cls, c: float, s0: float, s1: float, s_c: float, kink: float = 0.25,
                  damping: float = 0.0, **kw) -> "DamageModel":
        """Trilinear softening law; the force at ``s1`` is ``kink * c * s0``."""
        _positive(c=c, s0=s0, s1=s1, s_c=s_c)
        if not s0 < s1 < s_c:
            raise DomainError("trilinear model needs s0 < s1 < s_c")
        if not 0 <= kink <= 1:
            raise DomainError("kink ratio must lie in [0, 1]")
        return cls([c], [[s0, s1, s_c]], [[c * s0, kink * c * s0, 0.0]], damping, **kw)

    @classmethod
    def stack(cls, models: Sequence["DamageModel"], damping: Optional[float] = None) -> "DamageModel":
        """Combine single-type models into one multi-type model."""
        width = max(m.breakpoints.shape[1] for m in models)
        c, bp, fv = [], [], []
        for m in models:
            for t in range(m.n_types):
                pad = width - m.breakpoints.shape[1]
                c.append(m.stiffness[t])
                bp.append(np.concatenate([m.breakpoints[t], np.repeat(m.breakpoints[t, -1], pad)]))
                fv.append(np.concatenate([m.forces[t], np.repeat(m.forces[t, -1], pad)]))
        if damping is None:
            damping = models[0].damping
        return cls(c, bp, fv, damping, models[0].surface_correction, models[0].partial_volume)

    def with_damping(self, damping: float) -> "DamageModel":
        return DamageModel(self.stiffness, self.breakpoints, self.forces, damping,
                           self.surface_correction, self.partial_volume)

    def envelope(self, s: float, bond_type: int = 0) -> float:
        """Force on the loading envelope at stretch ``s``."""
        return _envelope(self.stiffness[bond_type], self.breakpoints[bond_type],
                         self.forces[bond_type], float(s))


@dataclass
class SimulationState:
    """Mutable kinematic state of a run, including the live connectivity."""

    u: np.ndarray
    ud: np.ndarray
    udd: np.ndarray
    step: int
    connectivity: NeighborList
    bond_history: np.ndarray

    @property
    def n(self) -> int:
        return len(self.u)

    @classmethod
    def initial(cls, family: NeighborList, dtype=np.float64) -> "SimulationState":
        n = family.n
        return cls(
            np.zeros((n, 3), dtype),
            np.zeros((n, 3), dtype),
            np.zeros((n, 3), dtype),
            0,
            family.copy(),
            np.zeros(family.entries.shape, dtype),
        )

    def copy(self) -> "SimulationState":
        return SimulationState(self.u.copy(), self.ud.copy(), self.udd.copy(), self.step,
                               self.connectivity.copy(), self.bond_history.copy())


# ------------------------------------------------------------ formulas


def pmb_micromodulus(bulk_modulus: float, horizon: float) -> float:
    """Bond micromodulus c = 18 K / (pi delta^4) of the PMB material."""
    _positive(bulk_modulus=bulk_modulus, horizon=horizon)
    return 18.0 * bulk_modulus / (math.pi * horizon ** 4)


_REGIME_FACTOR = {
    "3d": 5.0 / 6.0,
    "plane_stress": 4.0 * math.pi / 9.0,
    "plane_strain": 5.0 * math.pi / 12.0,
}


def critical_stretch(fracture_energy: float, youngs_modulus: float, horizon: float,
                     regime: str = "3d") -> float:
    """Critical bond stretch from the energy release rate.

    ``regime`` is one of ``"3d"``, ``"plane_stress"`` or ``"plane_strain"``.
    """
    _positive(fracture_energy=fracture_energy, youngs_modulus=youngs_modulus, horizon=horizon)
    try:
        factor = _REGIME_FACTOR[regime.lower()]
    except KeyError:
        raise DomainError(f"unknown regime {regime!r}; expected one of {sorted(_REGIME_FACTOR)}")
    return math.sqrt(factor * fracture_energy / (youngs_modulus * horizon))


def bilinear_elastic_limit(initial_fracture_energy: float, youngs_modulus: float,
                           horizon: float) -> float:
    """Linear-elastic limit s0 of the bilinear law (same form as the 3D critical stretch)."""
    return critical_stretch(initial_fracture_energy, youngs_modulus, horizon, "3d")


def bond_stretch(xi, eta) -> float:
    """Relative elongation (|eta + xi| - |xi|) / |xi| of one bond."""
    xi = np.asarray(xi, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64)
    length = math.sqrt(float(xi @ xi))
    if length == 0.0:
        raise DomainError("zero-length reference bond")
    y = xi + eta
    return (math.sqrt(float(y @ y)) - length) / length


def _envelope(c: float, bp: np.ndarray, fv: np.ndarray, s: float) -> float:
    if s < bp[0]:
        return c * s
    if s >= bp[-1]:
        return 0.0
    m = 1
    while s >= bp[m]:
        m += 1
    return fv[m - 1] + (fv[m] - fv[m - 1]) * (s - bp[m - 1]) / (bp[m] - bp[m - 1])


def damage_force_scalar(model: DamageModel, bond_type: int, s: float,
                        history_max_s: float = 0.0):
    """Scalar bond force and updated history for one bond.

    Returns ``(f, history)``. Loading beyond the historical maximum follows
    the envelope; unloading follows the secant to the origin. A bond whose
    history reaches the critical stretch carries no force ever again.
    Compression (``s < 0``) is always linear elastic.
    """
    if not 0 <= bond_type < model.n_types:
        raise DomainError(f"unknown bond type {bond_type}")
    if not math.isfinite(s):
        raise DomainError(f"stretch must be finite, got {s!r}")
    c = model.stiffness[bond_type]
    bp = model.breakpoints[bond_type]
    fv = model.forces[bond_type]
    h = max(float(history_max_s), s, 0.0)
    if h >= bp[-1]:
        return 0.0, h
    if s < 0.0 or h < bp[0]:
        return c * s, h
    if s >= h:
        return _envelope(c, bp, fv, s), h
    return s * (_envelope(c, bp, fv, h) / h), h


def local_damage(n_neigh_current: int, n_neigh_initial: int) -> float:
    """Fraction of a node's original bonds that are broken."""
    if n_neigh_initial < 1:
        raise DomainError("isolated node: no initial bonds")
    if not 0 <= n_neigh_current <= n_neigh_initial:
        raise DomainError("current bond count must lie in [0, initial]")
    return 1.0 - n_neigh_current / n_neigh_initial


def damage_field(n_neigh_current, n_neigh_initial) -> np.ndarray:
    """Vectorised local damage; isolated nodes report zero."""
    cur = np.asarray(n_neigh_current, dtype=np.float64)
    ini = np.asarray(n_neigh_initial, dtype=np.float64)
    out = np.zeros(np.broadcast(cur, ini).shape)
    live = ini > 0
    out[live] = 1.0 - cur[live] / ini[live]
    return np.clip(out, 0.0, 1.0)


def rayleigh_speed(youngs_modulus: float, poisson_ratio: float, density: float) -> float:
    """Approximate Rayleigh wave speed c_s (0.87 + 1.12 nu) / (1 + nu)."""
    _positive(youngs_modulus=youngs_modulus, density=density)
    nu = poisson_ratio
    if not -1.0 < nu < 0.5:
        raise DomainError(f"Poisson ratio must lie in (-1, 0.5), got {nu!r}")
    shear = youngs_modulus / (2.0 * (1.0 + nu))
    cs = math.sqrt(shear / density)
    return cs * (0.87 + 1.12 * nu) / (1.0 + nu)


def crack_speed(tip_before, tip_after, dt: float) -> float:
    """Mean crack-tip speed between two tip positions ``dt`` apart."""
    if not dt > 0:
        raise DomainError("time increment must be positive")
    d = np.asarray(tip_after, dtype=np.float64) - np.asarray(tip_before, dtype=np.float64)
    return float(np.linalg.norm(d)) / dt


@dataclass
class BoundaryConditions:
    """Per node-axis boundary condition types, magnitudes and ramps.

    ``kind[i, a]`` is FREE, DISPLACEMENT or FORCE. ``magnitude`` holds the
    target displacement (m) or force density (N/m^3). ``ramp_id`` selects the
    time profile from ``ramps`` for each node-axis.
    """

    kind: np.ndarray
    magnitude: np.ndarray
    ramp_id: np.ndarray
    ramps: list
    no_failure: np.ndarray
    tip_sets: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def free(cls, n: int) -> "BoundaryConditions":
        from .engine.boundary import RampProfile

        return cls(
            np.zeros((n, 3), np.int8),
            np.zeros((n, 3)),
            np.zeros((n, 3), np.int32),
            [RampProfile("constant")],
            np.zeros(n, bool),
            {},
        )

    @property
    def n(self) -> int:
        return len(self.kind)

    def _ramp_index(self, ramp) -> int:
        for k, r in enumerate(self.ramps):
            if r == ramp:
                return k
        self.ramps.append(ramp)
        return len(self.ramps) - 1

    def set_displacement(self, nodes, axis: int, magnitude: float, ramp=None) -> None:
        self._set(nodes, axis, DISPLACEMENT, magnitude, ramp)

    def set_force(self, nodes, axis: int, magnitude: float, ramp=None) -> None:
        self._set(nodes, axis, FORCE, magnitude, ramp)

    def _set(self, nodes, axis, kind, magnitude, ramp):
        nodes = np.asarray(nodes, dtype=np.int64)
        if not 0 <= axis < 3:
            raise DomainError(f"axis must be 0, 1 or 2, got {axis}")
        self.kind[nodes, axis] = kind
        self.magnitude[nodes, axis] = magnitude
        self.ramp_id[nodes, axis] = 0 if ramp is None else self._ramp_index(ramp)

    def add_tip_set(self, name: str, nodes) -> None:
        self.tip_sets[name] = np.asarray(nodes, dtype=np.int64)

    def validate(self, n: int) -> None:
        if self.kind.shape != (n, 3) or self.magnitude.shape != (n, 3):
            raise DomainError("boundary arrays must have shape (n, 3)")
        if self.no_failure.shape != (n,):
            raise DomainError("no_failure must have one flag per node")
        if np.any((self.kind < 0) | (self.kind > 2)):
            raise DomainError("unknown boundary condition type")
        if np.any((self.ramp_id < 0) | (self.ramp_id >= len(self.ramps))):
            raise DomainError("ramp index out of range")
        for name, idx in self.tip_sets.items():
            if len(idx) and (idx.min() < 0 or idx.max() >= n):
                raise DomainError(f"tip set {name!r} has indices outside [0, {n})")


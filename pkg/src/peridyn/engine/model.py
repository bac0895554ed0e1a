"""Model bundle and the simulation driver."""
from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Optional, Sequence

import numpy as np

from ..core import (
    BoundaryConditions,
    DamageModel,
    DomainError,
    NeighborList,
    ParticleSet,
    SimulationError,
    SimulationState,
    damage_field,
)
from . import kernels
from .boundary import external_force, prescribe
from .integrators import Integrator

log = logging.getLogger(__name__)

VARIANTS = {"bpr": kernels.bond_parallel, "node": kernels.node_parallel}

Observer = Callable[["Model", SimulationState, np.ndarray], None]


def _empty(dtype):
    return np.zeros((0, 0), dtype)


@dataclass
class TipSeries:
    """Time series recorded for one named node set at every write."""

    step: list = field(default_factory=list)
    u: list = field(default_factory=list)
    ud: list = field(default_factory=list)
    udd: list = field(default_factory=list)
    body_force: list = field(default_factory=list)
    force: list = field(default_factory=list)

    def append(self, step, u, ud, udd, body_force, force):
        self.step.append(step)
        self.u.append(u)
        self.ud.append(ud)
        self.udd.append(udd)
        self.body_force.append(body_force)
        self.force.append(force)

    def extend(self, other: "TipSeries") -> None:
        for name in ("step", "u", "ud", "udd", "body_force", "force"):
            getattr(self, name).extend(getattr(other, name))

    def array(self, name: str) -> np.ndarray:
        return np.asarray(getattr(self, name))


class Model:
    """Everything a run needs besides the evolving state.

    ``family`` is the reference neighbour list used for damage; the run
    starts from ``connectivity`` (defaults to ``family``), which may have
    pre-broken notch bonds. ``stiffness_corrections`` and ``partial_volume``
    are optional per-bond factors aligned with the neighbour list.
    """

    def __init__(self, particles: ParticleSet, family: NeighborList, damage_model: DamageModel,
                 integrator: Integrator, bc: Optional[BoundaryConditions] = None,
                 connectivity: Optional[NeighborList] = None,
                 bond_type: Optional[np.ndarray] = None,
                 stiffness_corrections: Optional[np.ndarray] = None,
                 partial_volume: Optional[np.ndarray] = None,
                 dtype=np.float64, variant: str = "bpr"):
        n = particles.n
        if family.n != n:
            raise DomainError("family and particles disagree on node count")
        self.particles = particles
        self.family = family
        self.connectivity = family if connectivity is None else connectivity
        if self.connectivity.entries.shape != family.entries.shape:
            raise DomainError("connectivity must have the family's shape")
        self.damage_model = damage_model
        self.integrator = integrator
        self.bc = BoundaryConditions.free(n) if bc is None else bc
        self.bc.validate(n)
        self.dtype = np.dtype(dtype)
        if self.dtype not in (np.float32, np.float64):
            raise DomainError("precision must be float32 or float64")
        if variant not in VARIANTS:
            raise DomainError(f"unknown kernel variant {variant!r}")
        self.variant = variant
        shape = family.entries.shape
        for name, arr in (("bond_type", bond_type), ("stiffness_corrections", stiffness_corrections),
                          ("partial_volume", partial_volume)):
            if arr is not None and np.shape(arr) != shape:
                raise DomainError(f"{name} must have shape {shape}")
        if bond_type is not None and (np.min(bond_type) < 0 or np.max(bond_type) >= damage_model.n_types):
            raise DomainError("bond type outside the damage model's range")
        dt = self.dtype
        self.bond_type = None if bond_type is None else np.ascontiguousarray(bond_type, np.int32)
        self.stiffness_corrections = stiffness_corrections
        self.partial_volume = partial_volume
        self._coords = np.ascontiguousarray(particles.coords, dt)
        self._volume = np.ascontiguousarray(particles.volume, dt)
        self._density = np.ascontiguousarray(particles.density, dt)
        self._bond_type = self.bond_type if self.bond_type is not None else np.zeros((0, 0), np.int32)
        self._lam = _empty(dt) if stiffness_corrections is None else np.ascontiguousarray(stiffness_corrections, dt)
        self._beta = _empty(dt) if partial_volume is None else np.ascontiguousarray(partial_volume, dt)
        self._no_fail = np.ascontiguousarray(self.bc.no_failure, np.bool_)
        self._set_law(damage_model)

    def _set_law(self, damage_model: DamageModel) -> None:
        self.damage_model = damage_model
        self._stiffness = np.ascontiguousarray(damage_model.stiffness, self.dtype)
        self._bp = np.ascontiguousarray(damage_model.breakpoints, self.dtype)
        self._fv = np.ascontiguousarray(damage_model.forces, self.dtype)

    def with_damage_model(self, damage_model: DamageModel) -> "Model":
        """Shallow copy sharing geometry and boundary data, with a new law."""
        other = object.__new__(Model)
        other.__dict__.update(self.__dict__)
        other._set_law(damage_model)
        return other

    @property
    def n(self) -> int:
        return self.particles.n

    @property
    def dt(self) -> float:
        return self.integrator.dt

    # ------------------------------------------------------------ state

    def initial_state(self, u=None, ud=None) -> SimulationState:
        """Fresh state at step 0 with the initial acceleration filled in."""
        state = SimulationState.initial(self.connectivity, self.dtype)
        if u is not None:
            state.u[...] = u
        if ud is not None:
            state.ud[...] = ud
        prescribe(state, self.bc, 0, self.dt)
        force = self.compute_forces(state) + external_force(self.bc, 0, self.dtype)
        state.udd[...] = (force - self.damage_model.damping * state.ud) / self._density[:, None]
        prescribe(state, self.bc, 0, self.dt)
        return state

    def _check_state(self, state: SimulationState) -> None:
        if state.u.shape != (self.n, 3) or state.connectivity.entries.shape != self.family.entries.shape:
            raise DomainError("state does not match the model")
        if state.u.dtype != self.dtype:
            raise DomainError(f"state precision {state.u.dtype} differs from model precision {self.dtype}")

    # ----------------------------------------------------------- forces

    def compute_forces(self, state: SimulationState, variant: Optional[str] = None) -> np.ndarray:
        """Bond force density on every node; breaks bonds in ``state``."""
        kernel = VARIANTS[variant or self.variant]
        out = np.zeros((self.n, 3), self.dtype)
        conn = state.connectivity
        kernel(self._coords, state.u, self._volume, conn.entries, conn.n_neigh, state.bond_history,
               self._bond_type, self._stiffness, self._bp, self._fv, self._lam, self._beta,
               self._no_fail, out)
        return out

    def compute_forces_two_pass(self, state: SimulationState) -> np.ndarray:
        """Unfused reference: break check pass, then force pass."""
        conn = state.connectivity
        kernels.check_bonds(self._coords, state.u, conn.entries, conn.n_neigh, state.bond_history,
                            self._bond_type, self._bp, self._no_fail)
        out = np.zeros((self.n, 3), self.dtype)
        kernels.bond_forces_from_history(self._coords, state.u, self._volume, conn.entries,
                                         state.bond_history, self._bond_type, self._stiffness,
                                         self._bp, self._fv, self._lam, self._beta,
                                         self._no_fail, out)
        return out

    def damage(self, state: SimulationState) -> np.ndarray:
        return damage_field(state.connectivity.n_neigh, self.family.n_neigh)

    # ------------------------------------------------------------ driver

    def _record(self, series: Dict[str, TipSeries], state, body, ext):
        vol = self._volume[:, None]
        for name, idx in self.bc.tip_sets.items():
            series[name].append(
                state.step,
                state.u[idx].mean(axis=0),
                state.ud[idx].mean(axis=0),
                state.udd[idx].mean(axis=0),
                (body[idx] * vol[idx]).sum(axis=0),
                (ext[idx] * vol[idx]).sum(axis=0),
            )

    def simulate(self, steps: int, state: Optional[SimulationState] = None,
                 first_step: Optional[int] = None, write_every: Optional[int] = None,
                 out_dir: Optional[str] = None, observers: Sequence[Observer] = (),
                 variant: Optional[str] = None):
        """Run ``steps`` time steps.

        Returns ``(state, series)`` where ``series`` maps each tip-set name to
        a :class:`TipSeries` sampled whenever the step index is a multiple of
        ``write_every``. Snapshots go to ``out_dir`` when it is given.
        Passing a saved ``state`` with ``first_step`` resumes a run; the
        result is bitwise identical to an uninterrupted run.
        """
        if steps < 1:
            raise DomainError("steps must be at least 1")
        if state is None:
            state = self.initial_state()
        self._check_state(state)
        if first_step is not None:
            if first_step < 0:
                raise DomainError("first_step must be non-negative")
            state.step = int(first_step)
        write_every = write_every or steps
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)
        series = {name: TipSeries() for name in self.bc.tip_sets}
        kernel = variant or self.variant
        density = self._density
        damping = self.damage_model.damping
        bc = self.bc
        dt = self.dt
        last = {}

        def forces_at(st, step):
            prescribe(st, bc, step, dt, kinematics=False)
            ext = external_force(bc, step, self.dtype)
            body = self.compute_forces(st, kernel)
            last["body"], last["ext"] = body, ext
            return body + ext

        for _ in range(steps):
            force = self.integrator.step(state, density, damping, forces_at)
            prescribe(state, bc, state.step, dt)
            if not (np.isfinite(force).all() and np.isfinite(state.u).all()):
                raise SimulationError("non-finite value in the state", state.step)
            if state.step % write_every == 0:
                self._record(series, state, last["body"], last["ext"])
                if out_dir is not None:
                    self.write_snapshot(state, out_dir)
                for obs in observers:
                    obs(self, state, force)
        return state, series

    def write_snapshot(self, state: SimulationState, out_dir: str) -> str:
        from ..io import Snapshot, write_snapshot

        path = os.path.join(out_dir, f"snapshot_{state.step:07d}.pdsnap")
        snap = Snapshot(state.step, self.particles.coords, state.u, state.ud, self.damage(state))
        try:
            write_snapshot(path, snap)
        except OSError as exc:
            raise SimulationError(f"could not write snapshot {path}: {exc}", state.step) from exc
        return path


def stable_timestep_hint(particles: ParticleSet, damage_model: DamageModel, family: NeighborList,
                         safety: float = 0.8, bond_type=None, partial_volume=None) -> float:
    """Advisory explicit time step sqrt(2 rho_i / sum_j c beta_ij V_j / |xi_ij|), minimised over i.

    Nodes without bonds are ignored.
    """
    e = family.entries
    live = e >= 0
    if not live.any():
        raise DomainError("family has no bonds")
    jj = np.where(live, e, 0)
    x = particles.coords
    xi = np.linalg.norm(x[jj] - x[:, None, :], axis=-1)
    c = damage_model.stiffness[np.zeros_like(e) if bond_type is None else bond_type]
    beta = 1.0 if partial_volume is None else partial_volume
    terms = np.where(live, c * beta * particles.volume[jj] / np.where(live, xi, 1.0), 0.0)
    total = terms.sum(axis=1)
    ok = total > 0
    return safety * float(np.min(np.sqrt(2.0 * particles.density[ok] / total[ok])))

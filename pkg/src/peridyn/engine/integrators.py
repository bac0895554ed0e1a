"""Explicit time integrators.

Each integrator advances a :class:`SimulationState` by one step. Forces are
obtained through a callback ``forces_at(state, step)`` that imposes the
boundary conditions for ``step`` on the current displacements and returns
the resultant force density, so every integrator decides at which
configuration it samples the force.
"""
from __future__ import annotations

from abc import ABC, abstractmethod
from typing import Callable

import numpy as np

from ..core import DomainError, SimulationState

ForceCallback = Callable[[SimulationState, int], np.ndarray]


def _check(dt, density):
    if not dt > 0:
        raise DomainError("time step must be positive")
    if np.any(np.asarray(density) <= 0):
        raise DomainError("density must be positive")


class Integrator(ABC):
    """Base class for explicit schemes with a fixed time step."""

    name = "integrator"

    def __init__(self, dt: float):
        if not dt > 0:
            raise DomainError("time step must be positive")
        self.dt = float(dt)

    @abstractmethod
    def step(self, state: SimulationState, density, damping: float,
             forces_at: ForceCallback) -> np.ndarray:
        """Advance ``state`` in place by one step; return the force used."""

    def __repr__(self):
        return f"{type(self).__name__}(dt={self.dt!r})"


class VelocityVerlet(Integrator):
    """Velocity-Verlet with the half-step velocity in the damping term.

    The displacement is advanced first, the bond forces are evaluated on the
    new configuration, and the new acceleration is
    ``(F - eta * v_half) / rho`` with ``v_half = v + dt/2 * a``.
    """

    name = "verlet"

    def step(self, state, density, damping, forces_at):
        dt = self.dt
        rho = np.asarray(density)[:, None]
        v_half = state.ud + (0.5 * dt) * state.udd
        state.u += dt * state.ud + (0.5 * dt * dt) * state.udd
        force = forces_at(state, state.step + 1)
        acc = (force - damping * v_half) / rho
        state.ud += (0.5 * dt) * (state.udd + acc)
        state.udd[...] = acc
        state.step += 1
        return force


class Euler(Integrator):
    """Forward Euler: velocity and displacement both use time-t data."""

    name = "euler"
    _cromer = False

    def step(self, state, density, damping, forces_at):
        dt = self.dt
        rho = np.asarray(density)[:, None]
        force = forces_at(state, state.step)
        acc = (force - damping * state.ud) / rho
        v_old = state.ud.copy()
        state.ud += dt * acc
        state.u += dt * (state.ud if self._cromer else v_old)
        state.udd[...] = acc
        state.step += 1
        return force


class EulerCromer(Euler):
    """Semi-implicit Euler: the displacement update uses the new velocity."""

    name = "euler_cromer"
    _cromer = True


INTEGRATORS = {cls.name: cls for cls in (VelocityVerlet, Euler, EulerCromer)}


def make_integrator(name: str, dt: float) -> Integrator:
    try:
        return INTEGRATORS[name](dt)
    except KeyError:
        raise DomainError(f"unknown integrator {name!r}; expected one of {sorted(INTEGRATORS)}")


def step_velocity_verlet(state, forces_at, dt, damping, density):
    _check(dt, density)
    return VelocityVerlet(dt).step(state, density, damping, forces_at)


def step_euler(state, forces_at, dt, density, damping=0.0):
    _check(dt, density)
    return Euler(dt).step(state, density, damping, forces_at)


def step_euler_cromer(state, forces_at, dt, density, damping=0.0):
    _check(dt, density)
    return EulerCromer(dt).step(state, density, damping, forces_at)

"""Time profiles and boundary-condition application."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import DISPLACEMENT, FORCE, BoundaryConditions, DomainError, SimulationState

RAMP_KINDS = ("constant", "linear", "quintic_smooth")


@dataclass(frozen=True)
class RampProfile:
    """Dimensionless load scale as a function of the step index.

    ``linear`` and ``quintic_smooth`` rise from 0 at step 0 to
    ``target_scale`` at ``rise_steps`` and hold it afterwards. The quintic
    profile 10t^3 - 15t^4 + 6t^5 has zero first and second derivatives at
    both ends.
    """

    kind: str = "constant"
    rise_steps: int = 0
    target_scale: float = 1.0

    def __post_init__(self):
        kind = {"quintic": "quintic_smooth"}.get(self.kind, self.kind)
        if kind not in RAMP_KINDS:
            raise DomainError(f"unknown ramp kind {self.kind!r}; expected one of {RAMP_KINDS}")
        if self.rise_steps < 0:
            raise DomainError("rise_steps must be non-negative")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "rise_steps", int(self.rise_steps))

    def _tau(self, step: float) -> float:
        if self.rise_steps == 0:
            return 1.0
        return min(max(step / self.rise_steps, 0.0), 1.0)

    def scale(self, step: float) -> float:
        if self.kind == "constant":
            return self.target_scale
        t = self._tau(step)
        if self.kind == "linear":
            return self.target_scale * t
        return self.target_scale * t * t * t * (10.0 + t * (-15.0 + 6.0 * t))

    def rate(self, step: float) -> float:
        """d(scale)/d(step)."""
        if self.kind == "constant" or self.rise_steps == 0 or not 0 <= step <= self.rise_steps:
            return 0.0
        if self.kind == "linear":
            return self.target_scale / self.rise_steps if step < self.rise_steps else 0.0
        t = self._tau(step)
        return self.target_scale * 30.0 * t * t * (1.0 - t) ** 2 / self.rise_steps

    def curvature(self, step: float) -> float:
        """d^2(scale)/d(step)^2."""
        if self.kind != "quintic_smooth" or self.rise_steps == 0 or not 0 <= step <= self.rise_steps:
            return 0.0
        t = self._tau(step)
        return self.target_scale * 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t) / self.rise_steps ** 2


def _scales(bc: BoundaryConditions, step: int, which: str) -> np.ndarray:
    return np.array([getattr(r, which)(step) for r in bc.ramps])[bc.ramp_id]


def prescribe(state: SimulationState, bc: BoundaryConditions, step: int, dt: float,
              kinematics: bool = True) -> None:
    """Overwrite displacement-controlled node-axes with their prescribed trajectory.

    With ``kinematics`` the velocity and acceleration on those axes are set
    to the analytic time derivatives of the ramp.
    """
    mask = bc.kind == DISPLACEMENT
    if not mask.any():
        return
    state.u[mask] = (bc.magnitude * _scales(bc, step, "scale"))[mask]
    if kinematics:
        state.ud[mask] = (bc.magnitude * _scales(bc, step, "rate"))[mask] / dt
        state.udd[mask] = (bc.magnitude * _scales(bc, step, "curvature"))[mask] / (dt * dt)


def external_force(bc: BoundaryConditions, step: int, dtype=np.float64) -> np.ndarray:
    """Force density (N/m^3) from the force-controlled node-axes at ``step``."""
    mask = bc.kind == FORCE
    out = np.zeros(bc.kind.shape, dtype)
    if mask.any():
        out[mask] = (bc.magnitude * _scales(bc, step, "scale"))[mask]
    return out


def apply_boundary(state: SimulationState, bc: BoundaryConditions, step: int,
                   dt: float = 1.0) -> np.ndarray:
    """Impose displacement conditions at ``step`` and return the external force density.

    No-failure flags are honoured by the force kernels, which never break a
    bond touching a flagged node.
    """
    prescribe(state, bc, step, dt)
    return external_force(bc, step, state.u.dtype)

from .boundary import RampProfile, apply_boundary, external_force, prescribe
from .integrators import (
    Euler,
    EulerCromer,
    Integrator,
    VelocityVerlet,
    make_integrator,
    step_euler,
    step_euler_cromer,
    step_velocity_verlet,
)
from .kernels import reduce_group
from .model import VARIANTS, Model, TipSeries, stable_timestep_hint

__all__ = [
    "Euler",
    "EulerCromer",
    "Integrator",
    "Model",
    "RampProfile",
    "TipSeries",
    "VARIANTS",
    "VelocityVerlet",
    "apply_boundary",
    "external_force",
    "make_integrator",
    "prescribe",
    "reduce_group",
    "stable_timestep_hint",
    "step_euler",
    "step_euler_cromer",
    "step_velocity_verlet",
]

"""Bond-based peridynamic fracture simulation on CPU with numba kernels."""
from .core import (
    DISPLACEMENT,
    FORCE,
    FREE,
    BoundaryConditions,
    DamageModel,
    DomainError,
    NeighborList,
    ParticleSet,
    PeridynError,
    SimulationError,
    SimulationState,
    bilinear_elastic_limit,
    bond_stretch,
    crack_speed,
    critical_stretch,
    damage_field,
    damage_force_scalar,
    local_damage,
    pmb_micromodulus,
    rayleigh_speed,
)

__version__ = "0.1.0"

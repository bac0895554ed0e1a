"""Ready-made problems: the Kalthoff-Winkler plate and a tension bar for calibration."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from .calibrate import CurveProblem
from .core import BoundaryConditions, DamageModel, NeighborList, ParticleSet, critical_stretch, pmb_micromodulus
from .engine import Model, RampProfile, VelocityVerlet, stable_timestep_hint
from .geometry import break_initial_bonds, build_family, intersects_box, regular_grid

STEEL = {"E": 190e9, "nu": 0.25, "rho": 7800.0, "G": 6.9e4}
CONCRETE = {"E": 37e9, "nu": 0.25, "rho": 2400.0}


def bulk_modulus(E: float, nu: float) -> float:
    return E / (3.0 * (1.0 - 2.0 * nu))


@dataclass
class PlateSetup:
    model: Model
    initial_velocity: np.ndarray
    steps: int
    spacing: float
    notch_x: Tuple[float, float]
    notch_tip_y: float


def kalthoff_winkler(spacing: float = 1.5625e-3, layers: int = 4, horizon_ratio: float = math.pi,
                     v0: float = 22.0, duration: float = 100e-6, dt: Optional[float] = None,
                     length: float = 0.2, height: float = 0.1, notch_length: float = 0.05,
                     notch_gap: float = 0.05, variant: str = "bpr", sustained: bool = True,
                     no_failure_layers: int = 6) -> PlateSetup:
    """Double-notched steel plate struck between the notches.

    x runs along the 200 mm edge, y is the impact direction and z the
    thickness. The notches start at the struck edge y = 0, the three node
    layers nearest that edge between the notches start at ``v0`` in +y, and
    the bonds of ``no_failure_layers`` layers on the opposite edge never break. With
    ``sustained`` those layers keep moving at ``v0`` (a heavy projectile);
    otherwise they are released after the initial kick.
    """
    nx, ny = round(length / spacing), round(height / spacing)
    coords = regular_grid((nx, ny, layers), spacing, (0.5 * spacing, 0.5 * spacing, 0.5 * spacing))
    n = len(coords)
    horizon = horizon_ratio * spacing
    family = build_family(coords, horizon)
    mid = 0.5 * length
    notch_x = (mid - 0.5 * notch_gap, mid + 0.5 * notch_gap)
    connectivity = family
    # notches are cuts one node spacing wide; every bond touching the void breaks
    for xn in notch_x:
        lo = (xn - 0.5e-3 * spacing, -1.0, -1.0)
        hi = (xn + 0.5e-3 * spacing, notch_length, 1.0)
        connectivity = break_initial_bonds(connectivity, coords, intersects_box(lo, hi))
    particles = ParticleSet(coords, spacing ** 3, STEEL["rho"])
    c = pmb_micromodulus(bulk_modulus(STEEL["E"], STEEL["nu"]), horizon)
    sc = critical_stretch(STEEL["G"], STEEL["E"], horizon)
    law = DamageModel.pmb(c, sc)
    bc = BoundaryConditions.free(n)
    y = coords[:, 1]
    x = coords[:, 0]
    bc.no_failure[y > height - no_failure_layers * spacing] = True
    struck = (y < 3 * spacing) & (x > notch_x[0]) & (x < notch_x[1])
    bc.add_tip_set("struck", np.flatnonzero(struck))
    v = np.zeros((n, 3))
    v[struck, 1] = v0
    if dt is None:
        dt = stable_timestep_hint(particles, law, family)
    steps = max(1, int(round(duration / dt)))
    if sustained:
        # constant velocity: a linear ramp reaching v0 * t at the final step
        bc.set_displacement(np.flatnonzero(struck), 1, v0 * dt * steps, RampProfile("linear", steps))
    model = Model(particles, family, law, VelocityVerlet(dt), bc, connectivity=connectivity, variant=variant)
    return PlateSetup(model, v, steps, spacing, notch_x, notch_length)


def kink_angles(setup: PlateSetup, damage: np.ndarray, threshold: float = 0.35,
                offset: float = 4.0, reach: float = 20.0) -> Dict[str, float]:
    """Angle in degrees between each crack branch and the notch direction.

    Damaged nodes on the mid-thickness layers outside the notch gap, starting
    ``offset`` spacings beyond the notch tip and reaching ``reach`` spacings
    further, are fitted with a line through the tip by least squares. Both
    branches open away from the struck region, so the angle is measured from
    +y towards the outside of the gap.
    """
    x = setup.model.particles.coords
    h = setup.spacing
    tip_y = setup.notch_tip_y
    out = {}
    for name, xn, sign in (("left", setup.notch_x[0], -1.0), ("right", setup.notch_x[1], 1.0)):
        dx = sign * (x[:, 0] - xn)
        dy = x[:, 1] - tip_y
        r = np.hypot(dx, dy)
        sel = (damage > threshold) & (dx > 0) & (dy > -h) & (r > offset * h) & (r < (offset + reach) * h)
        if sel.sum() < 3:
            out[name] = float("nan")
            continue
        # slope of dx against dy through the origin
        a, b = dy[sel], dx[sel]
        slope = float(np.dot(a, b) / np.dot(a, a)) if np.dot(a, a) > 0 else math.inf
        out[name] = math.degrees(math.atan(slope))
    return out


def tension_bar(counts=(10, 7, 7), spacing: float = 5e-3, horizon_ratio: float = math.pi,
                pull: float = 1.2e-4, steps: int = 4000, write_every: int = 40,
                damping: float = 2e8, c: float = 2.3e18, kink: float = 0.25,
                dt: Optional[float] = None) -> CurveProblem:
    """Concrete bar clamped at x = 0 and pulled along +x at the far end.

    Two node layers at each end are displacement controlled on all axes and
    never break, so damage starts away from the grips. The pulled grip is the tip set ``grip`` whose mean x displacement is the
    control value and whose summed bond force is the reaction.
    """
    coords = regular_grid(counts, spacing)
    n = len(coords)
    horizon = horizon_ratio * spacing
    family = build_family(coords, horizon)
    particles = ParticleSet(coords, spacing ** 3, CONCRETE["rho"])
    law = DamageModel.pmb(c, 1e30, damping=damping)
    x = coords[:, 0]
    left = np.flatnonzero(x < 1.5 * spacing)
    right = np.flatnonzero(x > x.max() - 1.5 * spacing)
    bc = BoundaryConditions.free(n)
    ramp = RampProfile("linear", steps)
    for axis in range(3):
        bc.set_displacement(left, axis, 0.0)
        bc.set_displacement(right, axis, pull if axis == 0 else 0.0, ramp)
    bc.add_tip_set("grip", right)
    bc.no_failure[left] = True
    bc.no_failure[right] = True
    if dt is None:
        dt = stable_timestep_hint(particles, law, family)
    model = Model(particles, family, law, VelocityVerlet(dt), bc)
    return CurveProblem(model, steps, write_every, "grip", axis=0, kink=kink)

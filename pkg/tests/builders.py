"""Small problem generators shared by the engine tests and the acceptance suite."""
import math

import numpy as np

from peridyn.core import BoundaryConditions, DamageModel, ParticleSet, SimulationState
from peridyn.engine import Model, VelocityVerlet, make_integrator
from peridyn.geometry import build_family


def random_kernel_case(seed: int, dtype=np.float64):
    """Random cloud, padded family of width N, pre-broken bonds and a mixed-law state.

    Returns ``(model, state)``; the state's displacements stretch a fraction
    of the bonds beyond every breakpoint so the break path is exercised.
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(10, 501))
    N = int(2 ** rng.integers(1, 9))
    x = rng.random((n, 3))
    radius = (3 * 0.6 * N / (4 * math.pi * n)) ** (1 / 3)
    while True:
        fam = build_family(x, radius)
        if fam.group_size <= N:
            break
        radius *= 0.9
    fam = build_family(x, radius, group_size=N)
    live = np.argwhere(fam.entries >= 0)
    frac = rng.uniform(0.0, 0.5)
    conn = fam.copy()
    if len(live):
        pick = live[rng.random(len(live)) < frac]
        conn.entries[pick[:, 0], pick[:, 1]] = -1
        conn.n_neigh = (conn.entries >= 0).sum(axis=1).astype(np.int32)
    law = DamageModel.stack([
        DamageModel.pmb(1.0e3, 0.08),
        DamageModel.bilinear(2.0e3, 0.02, 0.1),
        DamageModel.trilinear(3.0e3, 0.01, 0.04, 0.12),
    ])
    bond_type = rng.integers(0, 3, fam.entries.shape).astype(np.int32)
    lam = rng.uniform(0.8, 1.6, fam.entries.shape)
    beta = rng.uniform(0.3, 1.0, fam.entries.shape)
    particles = ParticleSet(x, rng.uniform(0.5, 1.5, n) * radius ** 3, rng.uniform(1.0, 2.0, n))
    bc = BoundaryConditions.free(n)
    bc.no_failure[rng.random(n) < 0.1] = True
    model = Model(particles, fam, law, VelocityVerlet(1e-3), bc, connectivity=conn, bond_type=bond_type,
                  stiffness_corrections=lam, partial_volume=beta, dtype=dtype)
    # built directly so that the force call under test is the one that breaks bonds
    state = SimulationState.initial(conn, dtype)
    state.u[...] = 0.05 * radius * rng.standard_normal((n, 3))
    history = rng.uniform(0.0, 0.06, fam.entries.shape)
    state.bond_history[...] = np.where(conn.entries >= 0, history, 0.0)
    return model, state


def oscillator(integrator="verlet", steps_per_period=100, c=1.0e4, spacing=1.0, volume=1.0,
               density=1.0, stretch=1e-10):
    """Two nodes joined by one unbreakable PMB bond, released from a stretched rest state.

    The default stretch is small enough that even ten thousand unstable
    forward-Euler steps stay in the linear range, where the nodes never
    pass through each other.

    Returns ``(model, state, period)``; the small-amplitude period is
    2 pi sqrt(rho L / (2 c V)) and the time step is period / steps_per_period.
    """
    period = 2 * math.pi * math.sqrt(density * spacing / (2 * c * volume))
    x = np.array([[0.0, 0.0, 0.0], [spacing, 0.0, 0.0]])
    fam = build_family(x, 1.01 * spacing)
    model = Model(ParticleSet(x, volume, density), fam, DamageModel.pmb(c, 1e30),
                  make_integrator(integrator, period / steps_per_period))
    u0 = np.array([[-0.5 * stretch * spacing, 0, 0], [0.5 * stretch * spacing, 0, 0]])
    state = model.initial_state(u=u0)
    return model, state, period


def oscillator_energy(model, state):
    """Kinetic energy plus the bond potential c s^2 |xi| V_i V_j / 2."""
    x = model.particles.coords
    V = model.particles.volume
    rho = model.particles.density
    xi = x[1] - x[0]
    L = float(np.linalg.norm(xi))
    y = xi + state.u[1] - state.u[0]
    s = (float(np.linalg.norm(y)) - L) / L
    c = float(model.damage_model.stiffness[0])
    kinetic = 0.5 * float(np.sum(rho * V * np.sum(state.ud ** 2, axis=1)))
    return kinetic + 0.5 * c * s * s * L * V[0] * V[1]


def energy_history(model, state, steps):
    energies = [oscillator_energy(model, state)]

    def observe(m, st, _force):
        energies.append(oscillator_energy(m, st))

    model.simulate(steps, state=state, write_every=1, observers=[observe])
    return np.array(energies)

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from peridyn import core
from peridyn.core import (
    BoundaryConditions,
    DamageModel,
    DomainError,
    NeighborList,
    ParticleSet,
    SimulationState,
    bond_stretch,
    critical_stretch,
    damage_field,
    damage_force_scalar,
    local_damage,
    next_power_of_two,
    pmb_micromodulus,
    rayleigh_speed,
)


def test_micromodulus_formula():
    assert pmb_micromodulus(1.0, 1.0) == pytest.approx(18.0 / math.pi)
    # delta^-4 scaling
    assert pmb_micromodulus(3.0, 2.0) == pytest.approx(pmb_micromodulus(3.0, 1.0) / 16.0)


@pytest.mark.parametrize("regime,factor", [("3d", 5 / 6), ("plane_stress", 4 * math.pi / 9),
                                           ("plane_strain", 5 * math.pi / 12)])
def test_critical_stretch_regimes(regime, factor):
    assert critical_stretch(2.0, 4.0, 0.5, regime) == pytest.approx(math.sqrt(factor))


def test_critical_stretch_rejects_bad_input():
    with pytest.raises(DomainError):
        critical_stretch(1.0, 1.0, 1.0, "2d")
    with pytest.raises(DomainError):
        critical_stretch(-1.0, 1.0, 1.0)
    with pytest.raises(DomainError):
        pmb_micromodulus(1.0, 0.0)


def test_bond_stretch():
    assert bond_stretch([1, 0, 0], [0.1, 0, 0]) == pytest.approx(0.1)
    assert bond_stretch([0, 2, 0], [0, -0.5, 0]) == pytest.approx(-0.25)
    with pytest.raises(DomainError):
        bond_stretch([0, 0, 0], [1, 0, 0])


def test_damage_helpers():
    assert local_damage(61, 122) == pytest.approx(0.5)
    assert local_damage(0, 4) == 1.0
    with pytest.raises(DomainError):
        local_damage(0, 0)
    with pytest.raises(DomainError):
        local_damage(5, 4)
    np.testing.assert_allclose(damage_field([1, 0, 3], [2, 0, 4]), [0.5, 0.0, 0.25])


def test_rayleigh_ratio_at_quarter_poisson():
    E, rho = 2.5, 1.0
    cs = math.sqrt(E / (2 * 1.25) / rho)
    assert rayleigh_speed(E, 0.25, rho) / cs == pytest.approx(0.92)
    with pytest.raises(DomainError):
        rayleigh_speed(1.0, 0.5, 1.0)


@given(st.integers(1, 1 << 20))
def test_next_power_of_two(k):
    p = next_power_of_two(k)
    assert p >= k and p & (p - 1) == 0 and p < 2 * k + 1


def test_pmb_law_linear_until_break():
    m = DamageModel.pmb(2.0, 0.01)
    assert damage_force_scalar(m, 0, 0.005) == (pytest.approx(0.01), 0.005)
    f, h = damage_force_scalar(m, 0, 0.01)
    assert f == 0.0 and h == 0.01
    # compression never breaks
    assert damage_force_scalar(m, 0, -0.5)[0] == pytest.approx(-1.0)


def test_trilinear_envelope_points():
    c, s0, s1, sc = 10.0, 1.0, 2.0, 4.0
    m = DamageModel.trilinear(c, s0, s1, sc, kink=0.25)
    assert m.envelope(0.5) == pytest.approx(5.0)
    assert m.envelope(s0) == pytest.approx(10.0)
    assert m.envelope(s1) == pytest.approx(2.5)
    assert m.envelope(3.0) == pytest.approx(1.25)
    assert m.envelope(sc) == 0.0
    assert not m.is_linear and DamageModel.pmb(1.0, 1.0).is_linear


def test_bilinear_unloading_follows_secant():
    m = DamageModel.bilinear(10.0, 1.0, 3.0)
    f_peak, h = damage_force_scalar(m, 0, 2.0)
    assert f_peak == pytest.approx(5.0) and h == 2.0
    f_unload, h2 = damage_force_scalar(m, 0, 1.0, h)
    assert h2 == 2.0
    assert f_unload == pytest.approx(2.5)
    # reloading below the old maximum stays on the secant
    assert damage_force_scalar(m, 0, 1.5, h)[0] == pytest.approx(3.75)


@given(st.floats(0.0, 5.0), st.floats(0.0, 5.0))
def test_history_is_monotone_and_force_bounded(s, h):
    m = DamageModel.trilinear(10.0, 1.0, 2.0, 4.0)
    f, h_new = damage_force_scalar(m, 0, s, h)
    assert h_new >= max(h, s)
    assert 0.0 <= f <= 10.0 * max(s, 0) + 1e-12


def test_damage_model_validation():
    with pytest.raises(DomainError):
        DamageModel([1.0], [[1.0, 2.0]], [[2.0, 0.0]])  # slope mismatch
    with pytest.raises(DomainError):
        DamageModel([1.0], [[1.0, 2.0]], [[1.0, 0.5]])  # nonzero final force
    with pytest.raises(DomainError):
        DamageModel.trilinear(1.0, 2.0, 1.0, 3.0)
    with pytest.raises(DomainError):
        DamageModel.pmb(1.0, 1.0, damping=-1.0)


def test_stack_pads_shorter_laws():
    m = DamageModel.stack([DamageModel.pmb(1.0, 0.5), DamageModel.trilinear(2.0, 1.0, 2.0, 3.0)])
    assert m.n_types == 2
    assert m.breakpoints.shape == (2, 3)
    assert m.envelope(0.25, 0) == pytest.approx(0.25)
    assert m.envelope(2.5, 1) == pytest.approx(0.25)
    np.testing.assert_allclose(m.critical_stretch, [0.5, 3.0])


def test_particle_set_validation():
    p = ParticleSet(np.zeros((2, 3)) + [[0, 0, 0], [1, 0, 0]], 1.0, 2.0)
    assert p.n == 2 and p.volume.shape == (2,)
    with pytest.raises(DomainError):
        ParticleSet(np.zeros((2, 3)), -1.0, 1.0)
    with pytest.raises(DomainError):
        ParticleSet(np.zeros((2, 3)), 1.0, 0.0)


def test_neighbor_list_validation():
    nl = NeighborList(np.array([[1], [0]], np.int32), np.array([1, 1], np.int32), 1, 1.0)
    nl.validate()
    assert nl.bond_count() == 2
    with pytest.raises(DomainError):
        NeighborList(np.array([[0], [0]], np.int32), np.array([1, 1], np.int32), 1, 1.0).validate()
    with pytest.raises(DomainError):
        NeighborList(np.array([[1, 1, -1], [0, -1, -1]], np.int32), np.array([2, 1], np.int32), 3, 1.0)


def test_state_initial_and_copy():
    nl = NeighborList(np.array([[1], [0]], np.int32), np.array([1, 1], np.int32), 1, 1.0)
    s = SimulationState.initial(nl, np.float32)
    assert s.u.dtype == np.float32 and s.step == 0
    t = s.copy()
    t.u[0, 0] = 1.0
    t.connectivity.entries[0, 0] = -1
    assert s.u[0, 0] == 0.0 and s.connectivity.entries[0, 0] == 1


def test_boundary_conditions_shared_ramps():
    from peridyn.engine import RampProfile

    bc = BoundaryConditions.free(4)
    ramp = RampProfile("linear", 10)
    bc.set_displacement([0, 1], 0, 1e-3, ramp)
    bc.set_force([2], 1, 5.0, RampProfile("linear", 10))
    assert len(bc.ramps) == 2  # equal profiles are stored once
    assert bc.kind[0, 0] == core.DISPLACEMENT and bc.kind[2, 1] == core.FORCE
    with pytest.raises(DomainError):
        bc.set_force([0], 3, 1.0)
    bc.add_tip_set("bad", [7])
    with pytest.raises(DomainError):
        bc.validate(4)

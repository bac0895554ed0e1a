import numpy as np
import pytest
from hypothesis import given, strategies as st

from builders import energy_history, oscillator, random_kernel_case
from peridyn.core import BoundaryConditions, DamageModel, DomainError, ParticleSet, SimulationError
from peridyn.engine import (
    Euler,
    Model,
    RampProfile,
    VelocityVerlet,
    apply_boundary,
    external_force,
    make_integrator,
    reduce_group,
    stable_timestep_hint,
    step_velocity_verlet,
)
from peridyn.geometry import build_family, regular_grid


@given(st.integers(0, 8), st.integers(0, 2 ** 31 - 1))
def test_reduce_group_matches_sum(log_n, seed):
    v = np.random.default_rng(seed).standard_normal((2 ** log_n, 3))
    np.testing.assert_allclose(reduce_group(v), v.sum(axis=0), rtol=1e-12, atol=1e-12)


def test_reduce_group_fixed_order():
    # ((a + c) + (b + d)) differs from left-to-right summation in floating point
    v = np.array([1e16, 1.0, -1e16, 1.0])
    assert reduce_group(v) == (1e16 + -1e16) + (1.0 + 1.0)
    with pytest.raises(ValueError):
        reduce_group(np.ones(3))


@pytest.mark.parametrize("seed", range(8))
def test_variants_and_two_pass_agree(seed):
    model, state = random_kernel_case(seed)
    a, b, c = state.copy(), state.copy(), state.copy()
    fa = model.compute_forces(a, "bpr")
    fb = model.compute_forces(b, "node")
    fc = model.compute_forces_two_pass(c)
    scale = np.maximum(np.abs(fb).max(axis=0), 1e-300)
    assert np.all(np.abs(fa - fb) <= 1e-12 * scale)
    assert np.all(np.abs(fc - fb) <= 1e-12 * scale)
    for s in (b, c):
        np.testing.assert_array_equal(a.connectivity.entries, s.connectivity.entries)
        np.testing.assert_array_equal(a.bond_history, s.bond_history)


def test_single_precision_tracks_double():
    m64, s64 = random_kernel_case(3)
    m32, s32 = random_kernel_case(3, dtype=np.float32)
    f64 = m64.compute_forces(s64)
    f32 = m32.compute_forces(s32)
    assert f32.dtype == np.float32
    scale = np.abs(f64).max()
    # bonds near a breakpoint may resolve differently; most forces agree
    assert np.median(np.abs(f32 - f64)) < 1e-4 * scale


def test_pair_force_is_antisymmetric_and_along_bond():
    x = np.array([[0.0, 0, 0], [0.6, 0.8, 0]])
    fam = build_family(x, 1.5)
    model = Model(ParticleSet(x, 2.0, 1.0), fam, DamageModel.pmb(3.0, 1.0), VelocityVerlet(1.0))
    state = model.initial_state(u=np.array([[0, 0, 0], [0.06, 0.08, 0.0]]))
    f = model.compute_forces(state)
    # stretch 0.1, force density c s V_j along the unit bond
    np.testing.assert_allclose(f[0], 3.0 * 0.1 * 2.0 * np.array([0.6, 0.8, 0]), rtol=1e-12)
    np.testing.assert_allclose(f[0], -f[1], rtol=1e-12)


def test_no_failure_nodes_keep_bonds():
    x = np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]])
    fam = build_family(x, 1.0)
    bc = BoundaryConditions.free(3)
    bc.no_failure[0] = True
    model = Model(ParticleSet(x, 1.0, 1.0), fam, DamageModel.pmb(1.0, 0.1), VelocityVerlet(1.0), bc)
    state = model.initial_state(u=np.array([[0, 0, 0], [0.5, 0, 0], [1.0, 0, 0]]))
    np.testing.assert_array_equal(state.connectivity.n_neigh, [1, 1, 0])
    np.testing.assert_allclose(model.damage(state), [0.0, 0.5, 1.0])
    assert state.bond_history[0, 0] == pytest.approx(0.5)


def test_ramp_profiles():
    lin = RampProfile("linear", 10, 2.0)
    assert lin.scale(5) == 1.0 and lin.scale(20) == 2.0 and lin.rate(5) == pytest.approx(0.2)
    q = RampProfile("quintic", 10)
    assert q.kind == "quintic_smooth"
    assert q.scale(0) == 0.0 and q.scale(10) == 1.0 and q.scale(5) == pytest.approx(0.5)
    assert q.rate(0) == 0.0 and q.rate(10) == 0.0
    h = 1e-4
    assert q.rate(3) == pytest.approx((q.scale(3 + h) - q.scale(3 - h)) / (2 * h), rel=1e-6)
    assert q.curvature(3) == pytest.approx((q.rate(3 + h) - q.rate(3 - h)) / (2 * h), rel=1e-5)
    assert RampProfile().scale(123) == 1.0
    with pytest.raises(DomainError):
        RampProfile("cubic")
    with pytest.raises(DomainError):
        RampProfile("linear", -1)


def test_apply_boundary_sets_kinematics_and_force():
    bc = BoundaryConditions.free(3)
    bc.set_displacement([0], 0, 2e-3, RampProfile("linear", 10))
    bc.set_force([2], 1, 5.0, RampProfile("linear", 10))
    fam = build_family(regular_grid((3, 1, 1), 1.0), 1.0)
    from peridyn.core import SimulationState

    state = SimulationState.initial(fam)
    ext = apply_boundary(state, bc, 5, dt=0.5)
    assert state.u[0, 0] == pytest.approx(1e-3)
    assert state.ud[0, 0] == pytest.approx(2e-3 / 10 / 0.5)
    assert ext[2, 1] == pytest.approx(2.5) and ext.sum() == pytest.approx(2.5)
    np.testing.assert_array_equal(external_force(bc, 0), 0.0)


def test_integrator_factory_and_validation():
    assert isinstance(make_integrator("euler", 0.1), Euler)
    with pytest.raises(DomainError):
        make_integrator("rk4", 0.1)
    with pytest.raises(DomainError):
        VelocityVerlet(0.0)
    model, state, _ = oscillator()
    with pytest.raises(DomainError):
        step_velocity_verlet(state, lambda s, k: np.zeros((2, 3)), 0.1, 0.0, np.array([1.0, -1.0]))


def test_verlet_period_and_energy():
    model, state, period = oscillator("verlet", 100)
    e = energy_history(model, state, 1000)
    assert np.abs(e - e[0]).max() / e[0] < 1e-3
    # after ten periods the separation is back near its initial stretch
    gap = state.u[1, 0] - state.u[0, 0]
    assert gap == pytest.approx(1e-10, rel=0.05)


def test_damping_dissipates_energy():
    model, state, _ = oscillator("verlet", 100)
    model = model.with_damage_model(model.damage_model.with_damping(50.0))
    e = energy_history(model, state, 500)
    assert e[-1] < 0.5 * e[0]


def test_simulate_records_tip_series_and_snapshots(tmp_path):
    x = regular_grid((4, 1, 1), 1.0)
    fam = build_family(x, 1.0)
    bc = BoundaryConditions.free(4)
    bc.set_displacement([3], 0, 1e-3, RampProfile("linear", 10))
    bc.set_displacement([0], 0, 0.0)
    bc.add_tip_set("end", [3])
    model = Model(ParticleSet(x, 1.0, 1.0), fam, DamageModel.pmb(1.0, 1.0), VelocityVerlet(0.1), bc)
    state, series = model.simulate(10, write_every=5, out_dir=str(tmp_path))
    assert series["end"].step == [5, 10]
    np.testing.assert_allclose(series["end"].array("u")[:, 0], [5e-4, 1e-3])
    assert sorted(p.name for p in tmp_path.iterdir()) == ["snapshot_0000005.pdsnap", "snapshot_0000010.pdsnap"]
    assert state.step == 10
    with pytest.raises(DomainError):
        model.simulate(0)


def test_restart_is_bitwise():
    model, state = random_kernel_case(11)
    model = model.with_damage_model(model.damage_model)
    model.integrator = VelocityVerlet(1e-4)
    start = model.initial_state(u=state.u)
    full, _ = model.simulate(30, state=start.copy())
    half, _ = model.simulate(12, state=start.copy())
    rest, _ = model.simulate(18, state=half, first_step=12)
    np.testing.assert_array_equal(full.u, rest.u)
    np.testing.assert_array_equal(full.ud, rest.ud)
    np.testing.assert_array_equal(full.connectivity.entries, rest.connectivity.entries)


@pytest.mark.filterwarnings("ignore:invalid value")
def test_blow_up_raises_with_step():
    model, state, _ = oscillator("verlet", 100)
    state.ud[0, 0] = np.inf
    with pytest.raises(SimulationError) as info:
        model.simulate(5, state=state)
    assert info.value.step == 1


def test_model_validation():
    x = regular_grid((2, 1, 1), 1.0)
    fam = build_family(x, 1.0)
    p = ParticleSet(x, 1.0, 1.0)
    law = DamageModel.pmb(1.0, 1.0)
    with pytest.raises(DomainError):
        Model(p, fam, law, VelocityVerlet(1.0), dtype=np.float16)
    with pytest.raises(DomainError):
        Model(p, fam, law, VelocityVerlet(1.0), variant="gpu")
    with pytest.raises(DomainError):
        Model(p, fam, law, VelocityVerlet(1.0), bond_type=np.ones(fam.entries.shape, np.int32))
    m32 = Model(p, fam, law, VelocityVerlet(1.0), dtype=np.float32)
    with pytest.raises(DomainError):
        m32.simulate(1, state=Model(p, fam, law, VelocityVerlet(1.0)).initial_state())


def test_stable_timestep_hint():
    x = regular_grid((3, 1, 1), 1.0)
    fam = build_family(x, 1.0)
    law = DamageModel.pmb(2.0, 1.0)
    # middle node: sum c V / |xi| = 4, so sqrt(2 * 1 / 4)
    assert stable_timestep_hint(ParticleSet(x, 1.0, 1.0), law, fam, safety=1.0) == pytest.approx(np.sqrt(0.5))
    lone = build_family(x, 0.5)
    with pytest.raises(DomainError):
        stable_timestep_hint(ParticleSet(x, 1.0, 1.0), law, lone)

import numpy as np
import pytest

from alignflow.errors import DimensionMismatch, SchemeFailure, StepSizeError
from alignflow.kernels import make_builtin
from alignflow.particles import (
    diagnostics,
    dt_max,
    energy_identity_residual,
    from_arrays,
    mv_weight,
    offsets_of,
    rhs_u,
    simulate,
    step,
)
from oracles import accel_double_loop, dissipation_double_loop, two_atom_smoothed_norm


def _random_state(n, d=1, seed=0, masses=None):
    rng = np.random.default_rng(seed)
    return from_arrays(rng.uniform(-2, 2, (n, d)), rng.uniform(-1, 1, (n, d)), masses)


def test_flocked_state_is_steady(quadratic):
    st = from_arrays(np.linspace(-1, 1, 5)[:, None], np.full((5, 1), 0.3))
    np.testing.assert_array_equal(rhs_u(st, quadratic), 0.0)


def test_quadratic_rhs_is_mean_relaxation(quadratic):
    rng = np.random.default_rng(4)
    m = rng.random(7)
    m /= m.sum()
    st = from_arrays(rng.normal(size=(7, 1)), rng.normal(size=(7, 1)), m)
    ubar = np.sum(m[:, None] * st.velocities, axis=0)
    np.testing.assert_allclose(rhs_u(st, quadratic), -(st.velocities - ubar), atol=1e-14)
    oracle = accel_double_loop(st.positions, st.velocities, m, lambda z: np.eye(1))
    np.testing.assert_allclose(rhs_u(st, quadratic), oracle, atol=1e-14)


def test_two_atom_hand_example(quadratic):
    st = from_arrays([[0.3], [-5.0]], [[1.0], [-1.0]], [0.5, 0.5])
    np.testing.assert_allclose(rhs_u(st, quadratic), [[-1.0], [1.0]], atol=1e-15)


@pytest.mark.parametrize("name,params", [("smoothed_norm", {"epsilon": 0.4}), ("gaussian_bump", {"sigma": 0.8}),
                                         ("tilted_quadratic", {"tilt": 0.5})])
def test_rhs_matches_double_loop(name, params):
    k = make_builtin(name, params, 2)
    st = _random_state(12, 2, seed=9)
    hess = lambda z: k.eval_hessK(z[None, :])[0]  # noqa: E731
    oracle = accel_double_loop(st.positions, st.velocities, st.masses, hess)
    np.testing.assert_allclose(rhs_u(st, k), oracle, atol=1e-13)


def test_zero_velocity_step_only_advances_time():
    k = make_builtin("smoothed_norm", {"epsilon": 1.0}, 2)
    st = from_arrays(np.random.default_rng(1).normal(size=(6, 2)), np.zeros((6, 2)))
    nxt = step(st, k, 0.01)
    assert nxt.time == pytest.approx(0.01)
    np.testing.assert_array_equal(nxt.positions, st.positions)
    np.testing.assert_array_equal(nxt.velocities, 0.0)


def test_rk4_quadratic_closed_form(quadratic):
    st = _random_state(10, seed=2)
    ubar = np.sum(st.masses[:, None] * st.velocities, axis=0)
    traj = simulate(st, quadratic, 1.0, 1e-3, record_every=100)
    for r, t in enumerate(traj.times):
        exact_u = ubar + (st.velocities - ubar) * np.exp(-t)
        exact_x = st.positions + ubar * t + (st.velocities - ubar) * (1 - np.exp(-t))
        assert np.max(np.abs(traj.velocities[r] - exact_u)) <= 1e-10
        assert np.max(np.abs(traj.positions[r] - exact_x)) <= 1e-10


def test_euler_rk4_gap_is_second_order():
    k = make_builtin("smoothed_norm", {"epsilon": 0.5}, 1)
    st = _random_state(8, seed=5)
    gaps = []
    for dt in (1e-2, 5e-3):
        a = step(st, k, dt, "euler")
        b = step(st, k, dt, "rk4")
        gaps.append(np.max(np.abs(a.velocities - b.velocities)))
    assert gaps[0] / gaps[1] == pytest.approx(4.0, rel=0.05)


def test_single_atom_moves_in_a_straight_line():
    for name, params in (("smoothed_norm", {"epsilon": 1.0}), ("gaussian_bump", {"sigma": 1.0})):
        k = make_builtin(name, params, 2)
        st = from_arrays([[1.0, -1.0]], [[0.5, 2.0]])
        for form in ("velocity_u", "offset_w"):
            traj = simulate(st, k, 1.0, 1e-2, form, record_every=10)
            expected = st.positions[0] + traj.times[:, None] * st.velocities[0]
            np.testing.assert_allclose(traj.positions[:, 0, :], expected, atol=1e-13)


def test_formulations_agree_on_random_data(quadratic):
    st = _random_state(8, seed=11)
    a = simulate(st, quadratic, 1.0, 1e-3, "velocity_u", record_every=50)
    b = simulate(st, quadratic, 1.0, 1e-3, "offset_w", record_every=50)
    assert np.max(np.abs(a.positions - b.positions)) <= 1e-6
    assert np.max(np.abs(a.velocities - b.velocities)) <= 1e-6


def test_offsets_are_conserved_along_velocity_trajectories():
    k = make_builtin("smoothed_norm", {"epsilon": 0.5}, 2)
    st = _random_state(10, 2, seed=3)
    traj = simulate(st, k, 1.0, 1e-3, record_every=50)
    assert np.max(traj.series("w_drift")) <= 1e-8
    w0 = offsets_of(st.positions, st.velocities, st.masses, k)
    np.testing.assert_allclose(traj.offsets[-1], w0, atol=1e-8)


def test_two_atom_smoothed_norm_against_ode_solver():
    eps = 0.5
    k = make_builtin("smoothed_norm", {"epsilon": eps}, 1)
    st = from_arrays([[-0.6], [0.4]], [[0.9], [-0.3]], [0.5, 0.5])
    traj = simulate(st, k, 2.0, 1e-3, record_every=2000)
    z, v = two_atom_smoothed_norm(-1.0, 1.2, eps, 2.0)
    xf, uf = traj.positions[-1, :, 0], traj.velocities[-1, :, 0]
    assert xf[0] - xf[1] == pytest.approx(z, abs=1e-9)
    assert uf[0] - uf[1] == pytest.approx(v, abs=1e-9)
    # the centre of mass moves at the mean velocity
    assert 0.5 * (xf[0] + xf[1]) == pytest.approx(-0.1 + 0.3 * 2.0, abs=1e-12)


def test_psd_energy_is_nonincreasing():
    k = make_builtin("smoothed_norm", {"epsilon": 0.5}, 2)
    traj = simulate(_random_state(12, 2, seed=8), k, 1.0, 1e-3, record_every=1)
    E = traj.series("energy")
    assert np.max(np.diff(E)) <= 1e-10


def test_diagnostics_of_flocked_state(quadratic):
    st = from_arrays(np.linspace(0, 1, 4)[:, None], np.full((4, 1), -0.5))
    d = diagnostics(st, quadratic)
    assert d.energy == pytest.approx(0.125)
    assert d.dissipation == 0.0
    np.testing.assert_allclose(d.momentum, [-0.5])


def test_dissipation_hand_example(quadratic):
    st = from_arrays([[0.0], [1.0]], [[1.0], [-1.0]], [0.5, 0.5])
    assert diagnostics(st, quadratic).dissipation == pytest.approx(1.0, abs=1e-15)


def test_dissipation_matches_double_loop():
    k = make_builtin("gaussian_bump", {"sigma": 0.6}, 2)
    st = _random_state(9, 2, seed=12)
    oracle = dissipation_double_loop(st.positions, st.velocities, st.masses,
                                     lambda z: k.eval_hessK(z[None, :])[0])
    assert diagnostics(st, k).dissipation == pytest.approx(oracle, abs=1e-13)


def test_mv_functional_at_rest():
    assert mv_weight(0.0) == 0.0
    assert mv_weight(1.0) == pytest.approx(np.log(2.0))
    st = from_arrays([[0.0], [2.0]], [[0.0], [0.0]])
    assert diagnostics(st, make_builtin("quadratic", {}, 1)).mv_functional == 0.0


def test_energy_identity_residual(quadratic):
    flock = from_arrays(np.linspace(0, 1, 4)[:, None], np.full((4, 1), 1.0))
    assert np.max(energy_identity_residual(simulate(flock, quadratic, 0.1, 1e-3), quadratic)) == 0.0
    traj = simulate(_random_state(16, seed=21), quadratic, 2.0, 1e-3, record_every=1)
    assert np.max(energy_identity_residual(traj, quadratic)) <= 1e-6


def test_energy_identity_fails_for_non_even_kernel():
    k = make_builtin("tilted_quadratic", {"tilt": 0.5}, 1)
    traj = simulate(_random_state(16, seed=21), k, 2.0, 1e-3, record_every=1)
    assert np.max(energy_identity_residual(traj, k)) > 1e-3
    mom = np.array([d.momentum[0] for d in traj.diagnostics])
    assert np.max(np.abs(mom - mom[0])) > 1e-3


def test_accumulated_dissipation_closes_energy_budget():
    k = make_builtin("smoothed_norm", {"epsilon": 0.5}, 1)
    traj = simulate(_random_state(10, seed=6), k, 1.0, 1e-3, record_every=100)
    E = traj.series("energy")
    np.testing.assert_allclose(E + traj.series("dissipated"), E[0], rtol=1e-10)


def test_step_size_guard():
    k = make_builtin("smoothed_norm", {"epsilon": 0.1}, 1)
    assert dt_max(k) == pytest.approx(0.05)
    st = _random_state(3)
    with pytest.raises(StepSizeError):
        simulate(st, k, 1.0, 0.06)
    with pytest.raises(StepSizeError):
        simulate(st, k, 1.0, 0.03)
    assert dt_max(make_builtin("quadratic", {"scale": 0.0}, 1)) == np.inf


def test_dimension_and_finiteness_errors(quadratic):
    with pytest.raises(DimensionMismatch):
        rhs_u(_random_state(3, 2), quadratic)
    bad = from_arrays([[0.0], [np.inf]], [[0.0], [0.0]])
    with pytest.raises(SchemeFailure) as info:
        rhs_u(bad, quadratic)
    assert info.value.index == 1


def test_records_include_final_time(quadratic):
    traj = simulate(_random_state(4), quadratic, 0.35, 0.01, record_every=10)
    np.testing.assert_allclose(traj.times, [0.0, 0.1, 0.2, 0.3, 0.35], atol=1e-12)

import numpy as np
import pytest

from chcfem import build
from chcfem.errors import StepFailure
from chcfem.mesh_fem import FieldVec, evaluate, integrate, load_vector
from chcfem.noise import NoiseSpec, increment_loads, increment_to_fem, sample_path
from chcfem.scheme import (SchemeConfig, df, f, initial_state, lyapunov_J, nonlinear_load,
                           potential, run_trajectory, step)
from chcfem.spectral import SpectralCoeffs


def test_pointwise_functions():
    s = np.array([-1.5, 0.0, 0.3, 1.0])
    np.testing.assert_allclose(f(s), s**3 - s)
    np.testing.assert_allclose(df(s), 3 * s**2 - 1)
    np.testing.assert_allclose(potential(s), 0.25 * (s**2 - 1) ** 2)


def test_config_validation():
    ops = build(4, 1)
    with pytest.raises(ValueError):
        SchemeConfig(ops, 0.03, 0.1)
    with pytest.raises(ValueError):
        SchemeConfig(ops, -1.0)
    with pytest.raises(ValueError):
        SchemeConfig(ops, 0.01, newton_tol=1e-15)
    assert SchemeConfig.from_steps(ops, 8).n_steps == 8


@pytest.mark.parametrize("p", [1, 2, 3])
def test_nonlinear_load_against_quadrature(p):
    ops = build(6, p)
    u = ops.field(np.cos(np.pi * ops.space.dof_coords))
    direct = load_vector(ops, lambda x: f(evaluate(ops, u, x)), 12)
    np.testing.assert_allclose(nonlinear_load(ops, u), direct, atol=1e-13)


def test_lyapunov_functional_of_constant():
    ops = build(8, 2)
    assert lyapunov_J(ops, ops.constant(0.0)) == pytest.approx(0.25)
    assert lyapunov_J(ops, ops.constant(1.0)) == pytest.approx(0.0, abs=1e-13)


def test_initial_state_mixed_relation():
    ops = build(16, 2)
    cfg = SchemeConfig.from_steps(ops, 4)
    s0 = initial_state(cfg)
    lhs = ops.mass.matvec(s0.w.coeffs)
    rhs = ops.stiffness.matvec(s0.u.coeffs) + nonlinear_load(ops, s0.u)
    np.testing.assert_allclose(lhs, rhs, atol=1e-13)


@pytest.mark.parametrize("p", [1, 2, 3])
def test_kernel_matches_reference_step(p):
    ops = build(8, p)
    cfg = SchemeConfig.from_steps(ops, 16)
    path = sample_path(NoiseSpec(J=4 * ops.n), 16, 0.1, 0)
    traj = run_trajectory(cfg, path, checkpoints=range(17))
    state = initial_state(cfg)
    for n in range(16):
        state, rep = step(state, increment_to_fem(path, n, ops), cfg)
        assert rep.final_residual <= cfg.newton_tol
    np.testing.assert_allclose(state.u.coeffs, traj.u[-1], atol=1e-12)
    np.testing.assert_allclose(state.w.coeffs, traj.w[-1], atol=1e-10)


def test_mass_conserved_with_noise():
    ops = build(32, 1)
    cfg = SchemeConfig.from_steps(ops, 64)
    traj = run_trajectory(cfg, sample_path(NoiseSpec(J=132), 64, 0.1, 2), checkpoints=range(65))
    mass = traj.u @ ops.basis_integrals
    assert np.max(np.abs(mass - mass[0])) < 1e-12


def test_zero_state_is_fixed_point():
    cfg = SchemeConfig.from_steps(build(16, 2), 10, initial_data=SpectralCoeffs(np.zeros(3)))
    traj = run_trajectory(cfg, None, checkpoints=range(11))
    assert np.all(traj.u == 0.0) and np.all(traj.w == 0.0)


def test_energy_decreases_without_noise():
    ops = build(32, 1)
    traj = run_trajectory(SchemeConfig(ops, 1e-4, 0.05), None)
    assert np.all(np.diff(traj.energy) <= 0.0)
    assert traj.sup_energy == traj.energy[0]


def test_energy_identity_gap_nonnegative():
    # J(u^n) + sum k |w|_1^2 <= J(u^0) for backward Euler
    ops = build(32, 1)
    traj = run_trajectory(SchemeConfig(ops, 1e-3, 0.1), None)
    assert np.all(traj.energy + traj.dissipation <= traj.energy[0] + 1e-12)


def test_path_and_scheme_must_match():
    ops = build(8, 1)
    cfg = SchemeConfig.from_steps(ops, 8)
    with pytest.raises(ValueError):
        run_trajectory(cfg, sample_path(NoiseSpec(J=36), 16, 0.1, 0))
    traj = run_trajectory(cfg, sample_path(NoiseSpec(J=36), 16, 0.1, 0), coarsen_factor=2)
    assert traj.u.shape == (2, ops.n)


def test_precomputed_loads_equal_path():
    ops = build(8, 1)
    cfg = SchemeConfig.from_steps(ops, 8)
    path = sample_path(NoiseSpec(J=36), 8, 0.1, 5)
    a = run_trajectory(cfg, path)
    b = run_trajectory(cfg, loads=increment_loads(path, ops))
    np.testing.assert_array_equal(a.u, b.u)


def test_step_failure_reports_step_and_history():
    ops = build(256, 1)
    cfg = SchemeConfig.from_steps(ops, 1, 1e8, initial_data=SpectralCoeffs(np.array([0.0, 1e3])))
    spec = NoiseSpec(J=4 * ops.n, noise_scale=1e6)
    with pytest.raises(StepFailure) as info:
        run_trajectory(cfg, sample_path(spec, 1, 1e8, 0))
    assert info.value.step_index == 1
    assert len(info.value.residuals) >= 2


def test_reference_step_failure():
    ops = build(8, 1)
    cfg = SchemeConfig.from_steps(ops, 1, newton_max_iters=1,
                                  initial_data=SpectralCoeffs(np.array([0.0, 2.0])))
    s0 = initial_state(cfg)
    with pytest.raises(StepFailure) as info:
        step(s0, FieldVec(np.zeros(ops.n), 0.0), cfg)
    assert info.value.step_index == 1


def test_chemical_potential_mean_free():
    ops = build(16, 1)
    traj = run_trajectory(SchemeConfig.from_steps(ops, 4), None)
    y = traj.chemical_potential()
    assert abs(integrate(ops, lambda x: np.interp(x, ops.space.dof_coords, y.coeffs))) < 1e-3
    assert abs(ops.basis_integrals @ y.coeffs) < 1e-13
    w = traj.final.w.coeffs
    np.testing.assert_allclose(y.coeffs, w - ops.basis_integrals @ w, atol=1e-10)


def test_monitors_recorded():
    ops = build(16, 1)
    traj = run_trajectory(SchemeConfig.from_steps(ops, 8), None)
    assert traj.energy.shape == (9,)
    assert traj.ah_norm[0] > 0
    assert len(traj.step_reports()) == 8
    assert np.all(np.diff(traj.dissipation) >= 0)

import numpy as np
import pytest

from chcfem import FieldVec, Mesh1D, SymBanded, UnsupportedDegreeError, build
from chcfem import mesh_fem
from chcfem.errors import EigenSolveError, NonZeroMeanError
from chcfem.mesh_fem import (FemSpace, apply_Ah, apply_Ph, apply_Rh, discrete_eigenpairs,
                             discrete_norm, eigen_coefficients, evaluate, frac_power_apply,
                             from_eigen_coefficients, interpolate, l2_error, lagrange_basis,
                             prolongation_matrix)


def test_p1_stiffness_two_elements():
    ops = build(2, 1)
    expected = np.array([[2.0, -2.0, 0.0], [-2.0, 4.0, -2.0], [0.0, -2.0, 2.0]])
    np.testing.assert_allclose(ops.stiffness.to_dense(), expected, atol=1e-13)


def test_p1_mass_two_elements():
    h = 0.5
    expected = h / 6 * np.array([[2.0, 1.0, 0.0], [1.0, 4.0, 1.0], [0.0, 1.0, 2.0]])
    np.testing.assert_allclose(build(2, 1).mass.to_dense(), expected, atol=1e-14)


@pytest.mark.parametrize("p", [1, 2, 3])
def test_mass_total_and_stiffness_kernel(p):
    ops = build(7, p)
    assert ops.mass.to_dense().sum() == pytest.approx(1.0, abs=1e-13)
    np.testing.assert_allclose(ops.stiffness.row_sums(), 0.0, atol=1e-11)
    assert ops.n == p * 7 + 1


def test_unsupported_degree():
    with pytest.raises(UnsupportedDegreeError):
        FemSpace(Mesh1D(4), 4)
    with pytest.raises(UnsupportedDegreeError):
        build(4, 0)


def test_mesh_rejects_empty():
    with pytest.raises(ValueError):
        Mesh1D(0)


def test_lagrange_partition_of_unity():
    xi = np.linspace(0, 1, 11)
    for p in (1, 2, 3):
        phi, dphi = lagrange_basis(p, xi)
        np.testing.assert_allclose(phi.sum(axis=1), 1.0, atol=1e-14)
        np.testing.assert_allclose(dphi.sum(axis=1), 0.0, atol=1e-12)


def test_symbanded_roundtrip():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((6, 6))
    a = a + a.T
    a[np.abs(np.subtract.outer(np.arange(6), np.arange(6))) > 2] = 0.0
    b = SymBanded.from_dense(a, 2)
    np.testing.assert_allclose(b.to_dense(), a)
    x = rng.standard_normal(6)
    np.testing.assert_allclose(b @ x, a @ x, atol=1e-14)
    np.testing.assert_allclose(b.to_sparse().toarray(), a)


def test_p1_eigenvalues_closed_form():
    n = 32
    ops = build(n, 1, eigen=True)
    h = 1.0 / n
    j = np.arange(n + 1)
    theta = j * np.pi * h
    closed = 6 / h**2 * (1 - np.cos(theta)) / (2 + np.cos(theta))
    np.testing.assert_allclose(ops.eigenvalues, closed, rtol=1e-10, atol=1e-9)


@pytest.mark.parametrize("p,tol", [(1, 1e-2), (2, 1e-5), (3, 1e-7)])
def test_first_eigenvalue_near_pi_squared(p, tol):
    lam = build(16, p, eigen=True).eigenvalues
    assert lam[0] == 0.0
    assert abs(lam[1] - np.pi**2) / np.pi**2 < tol


def test_eigenvectors_mass_orthonormal(ops_any):
    v = ops_any.eigenvectors
    m = ops_any.mass.to_dense()
    np.testing.assert_allclose(v.T @ m @ v, np.eye(ops_any.n), atol=1e-9)


def test_banded_eigen_path_matches_dense(monkeypatch):
    dense = build(24, 2, eigen=True)
    monkeypatch.setattr(mesh_fem, "DENSE_EIG_LIMIT", 4)
    banded = discrete_eigenpairs(build(24, 2))
    np.testing.assert_allclose(banded.eigenvalues, dense.eigenvalues, rtol=1e-9, atol=1e-9)
    overlap = np.abs(np.sum(banded.eigenvectors * (dense.mass.to_dense() @ dense.eigenvectors), axis=0))
    np.testing.assert_allclose(overlap, 1.0, atol=1e-7)


def test_require_eigen():
    with pytest.raises(EigenSolveError):
        build(4, 1).require_eigen()


@pytest.mark.parametrize("p", [1, 2, 3])
def test_interpolation_rate(p):
    def f(x):
        return np.cos(np.pi * x) + x**2

    errs = [l2_error(build(n, p), interpolate(build(n, p), f), f) for n in (8, 16)]
    assert np.log2(errs[0] / errs[1]) == pytest.approx(p + 1, abs=0.15)


def test_prolongation_is_exact(ops_any):
    p = ops_any.space.degree
    fine = build(16, p)
    rng = np.random.default_rng(0)
    c = rng.standard_normal(ops_any.n)
    fc = prolongation_matrix(ops_any, fine) @ c
    x = np.linspace(0, 1, 97)
    np.testing.assert_allclose(evaluate(fine, fc, x), evaluate(ops_any, c, x), atol=1e-12)


def test_prolongation_rejects_non_nested():
    with pytest.raises(ValueError):
        prolongation_matrix(build(3, 1), build(4, 1))


def test_projection_of_fem_function_is_identity(ops_any):
    v = ops_any.field(np.random.default_rng(3).standard_normal(ops_any.n))
    np.testing.assert_allclose(apply_Ph(ops_any, v).coeffs, v.coeffs, atol=1e-12)


def test_ritz_rejects_mean(ops_p1):
    with pytest.raises(NonZeroMeanError):
        apply_Rh(ops_p1, ops_p1.constant(1.0))
    with pytest.raises(NonZeroMeanError):
        apply_Rh(ops_p1, lambda x: 1.0 + 0 * x, lambda x: 0 * x)


def test_ritz_identity_on_smooth_function(ops_any):
    def v(x):
        return np.cos(2 * np.pi * x)

    def dv(x):
        return -2 * np.pi * np.sin(2 * np.pi * x)

    lhs = apply_Ph(ops_any, lambda x: 4 * np.pi**2 * np.cos(2 * np.pi * x))
    rhs = apply_Ah(ops_any, apply_Rh(ops_any, v, dv))
    assert ops_any.l2_norm(lhs.coeffs - rhs.coeffs) <= 1e-9 * ops_any.l2_norm(lhs)


def test_ah_output_mean_free(ops_p1):
    v = ops_p1.field(np.linspace(-1, 2, ops_p1.n))
    out = apply_Ah(ops_p1, v)
    assert abs(ops_p1.basis_integrals @ out.coeffs) < 1e-12


def test_eigen_coefficients_roundtrip(ops_any):
    c = np.random.default_rng(4).standard_normal(ops_any.n)
    back = from_eigen_coefficients(ops_any, eigen_coefficients(ops_any, c))
    np.testing.assert_allclose(back.coeffs, c, atol=1e-10)


def test_frac_power_composition(ops_p1):
    v = ops_p1.field(ops_p1.eigenvectors[:, 1:6] @ np.arange(1.0, 6.0))
    a = frac_power_apply(ops_p1, 0.5, frac_power_apply(ops_p1, 0.5, v))
    b = apply_Ah(ops_p1, v)
    np.testing.assert_allclose(a.coeffs, b.coeffs, rtol=1e-9, atol=1e-9)


def test_frac_power_negative_needs_mean_zero(ops_p1):
    with pytest.raises(NonZeroMeanError):
        frac_power_apply(ops_p1, -0.5, ops_p1.constant(1.0))


def test_discrete_norm_of_eigenvector(ops_p1):
    e3 = ops_p1.field(ops_p1.eigenvectors[:, 3])
    assert discrete_norm(ops_p1, 2.0, e3) == pytest.approx(ops_p1.eigenvalues[3], rel=1e-10)


def test_fieldvec_arithmetic():
    a = FieldVec(np.array([1.0, 2.0]), 1.5)
    b = FieldVec(np.array([0.5, 0.5]), 0.5)
    c = 2.0 * (a - b) + (-b)
    np.testing.assert_allclose(c.coeffs, [0.5, 2.5])
    assert c.mean == pytest.approx(1.5)

import numpy as np
import pytest

from chcfem import build
from chcfem.mesh_fem import l2_error, load_vector
from chcfem.spectral import (SpectralBasis, SpectralCoeffs, frac_power_spectral, load_matrix,
                             semigroup_E, single_mode, spectral_loads, spectral_norm, to_fem)


def test_basis_orthonormal():
    basis = SpectralBasis(6)
    x, w = np.polynomial.legendre.leggauss(40)
    x, w = 0.5 * (x + 1), 0.5 * w
    e = basis.evaluate(x)
    np.testing.assert_allclose(e.T @ (w[:, None] * e), np.eye(7), atol=1e-13)


def test_eigenvalues():
    np.testing.assert_allclose(SpectralBasis(3).eigenvalues, (np.arange(4) * np.pi) ** 2)


def test_derivative_matches_finite_difference():
    c = SpectralCoeffs(np.array([0.3, 1.0, -0.5, 0.25]))
    x = np.linspace(0.1, 0.9, 5)
    eps = 1e-6
    fd = (c(x + eps) - c(x - eps)) / (2 * eps)
    np.testing.assert_allclose(c.derivative(x), fd, atol=1e-7)


def test_semigroup_decay_and_rejects_negative_time():
    c = single_mode(2, amplitude=3.0)
    out = semigroup_E(0.01, c)
    assert out.values[2] == pytest.approx(3.0 * np.exp(-0.01 * (2 * np.pi) ** 4))
    assert semigroup_E(0.0, c).values[2] == 3.0
    with pytest.raises(ValueError):
        semigroup_E(-1e-3, c)


def test_spectral_norm_of_mode():
    assert spectral_norm(2.0, single_mode(3)) == pytest.approx((3 * np.pi) ** 2)


def test_negative_power_rejects_mean():
    with pytest.raises(ValueError):
        frac_power_spectral(-1.0, SpectralCoeffs(np.array([1.0, 0.0])))


def test_coefficients_must_be_finite():
    with pytest.raises(ValueError):
        SpectralCoeffs(np.array([0.0, np.nan]))


def test_arithmetic_pads():
    s = SpectralCoeffs(np.array([1.0])) + 2 * SpectralCoeffs(np.array([0.0, 1.0]))
    np.testing.assert_allclose(s.values, [1.0, 2.0])


def test_p1_fold_loads_match_quadrature():
    ops = build(16, 1)
    J = 70
    fold = spectral_loads(np.eye(J + 1), ops).T
    gauss = load_matrix(build(16, 1), J)
    np.testing.assert_allclose(fold, gauss, atol=1e-14)


@pytest.mark.parametrize("p", [2, 3])
def test_load_matrix_against_direct_quadrature(p):
    ops = build(6, p)
    L = load_matrix(ops, 9)
    for j in (0, 4, 9):
        direct = load_vector(ops, lambda x: SpectralBasis(9).evaluate(x, np.array([j]))[..., 0], 20)
        np.testing.assert_allclose(L[:, j], direct, atol=1e-13)


def test_load_matrix_is_cached_read_only():
    ops = build(4, 2)
    L = load_matrix(ops, 5)
    assert load_matrix(ops, 5) is L
    assert not L.flags.writeable


def test_to_fem_projection_rate():
    c = SpectralCoeffs(np.array([0.0, 1.0, 0.2]))
    e = [l2_error(build(n, 1), to_fem(c, build(n, 1)), c) for n in (16, 32)]
    assert np.log2(e[0] / e[1]) == pytest.approx(2.0, abs=0.05)

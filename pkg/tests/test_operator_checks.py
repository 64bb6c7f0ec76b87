import numpy as np
import pytest
from scipy import integrate as sint

from chcfem import build
from chcfem.mesh_fem import frac_power_apply, l2_error
from chcfem.operator_checks import (BatteryConfig, EstimateProbe, expected_pair_norm_sq,
                                    family_phi_h, family_phi_h_sq_integral, family_psi_h,
                                    family_psi_h_sq_integral, family_psi_kh, hoelder_probe,
                                    probe_space, probe_weights_sq, rational_Ekh, semigroup_Eh,
                                    _piecewise_integrated_sq, bounded_probes, smoothing_probes,
                                    spatial_error_probes, temporal_error_probes)
from chcfem.spectral import SpectralCoeffs, semigroup_E, single_mode, to_fem


def _field(ops, seed=0):
    c = np.random.default_rng(seed).standard_normal(ops.n)
    return ops.field(c - ops.basis_integrals @ c)


def test_semigroup_identity_at_zero(ops_p1):
    v = _field(ops_p1)
    np.testing.assert_allclose(semigroup_Eh(0.0, v, ops_p1).coeffs, v.coeffs, atol=1e-12)
    with pytest.raises(ValueError):
        semigroup_Eh(-1.0, v, ops_p1)


def test_semigroup_commutes_with_fractional_power(ops_p1):
    v = _field(ops_p1, 1)
    a = semigroup_Eh(1e-4, frac_power_apply(ops_p1, 0.5, v), ops_p1)
    b = frac_power_apply(ops_p1, 0.5, semigroup_Eh(1e-4, v, ops_p1))
    np.testing.assert_allclose(a.coeffs, b.coeffs, atol=1e-10)


def test_semigroup_on_eigenvector(ops_p1):
    e = ops_p1.field(ops_p1.eigenvectors[:, 2])
    lam = ops_p1.eigenvalues[2]
    out = semigroup_Eh(1e-3, e, ops_p1)
    np.testing.assert_allclose(out.coeffs, np.exp(-1e-3 * lam**2) * e.coeffs, atol=1e-10)


def test_rational_identity_and_eigen_formula(ops_p1):
    v = _field(ops_p1, 2)
    np.testing.assert_allclose(rational_Ekh(0, 0.1, v, ops_p1).coeffs, v.coeffs, atol=1e-12)
    e = ops_p1.field(ops_p1.eigenvectors[:, 3])
    lam = ops_p1.eigenvalues[3]
    np.testing.assert_allclose(rational_Ekh(5, 1e-3, e, ops_p1).coeffs,
                               (1 + 1e-3 * lam**2) ** -5 * e.coeffs, atol=1e-10)
    with pytest.raises(ValueError):
        rational_Ekh(-1, 0.1, v, ops_p1)


def test_psi_vanishes_on_fem_functions_at_time_zero(ops_p1):
    v = _field(ops_p1, 3)
    # E(0) v - E_h(0) P_h v = v - v for v in the discrete space
    np.testing.assert_allclose(semigroup_Eh(0.0, v, ops_p1).coeffs - v.coeffs, 0.0, atol=1e-13)


def test_probe_needs_four_points():
    with pytest.raises(ValueError):
        EstimateProbe("L4.1a", "", "h", [0.1, 0.05, 0.025], [1.0, 0.3, 0.1], 2.0, 0.2, 0.2)


def _direct_pair(ps, t, mode_op):
    """``sum_j w_j^2 ||T e_j||^2`` by quadrature of each mode's error."""
    ops = ps.ops
    w2 = probe_weights_sq(ps.lam_c, 0.0)
    total = 0.0
    for j in range(1, ps.J + 1):
        cont, disc = mode_op(j, ops)
        total += w2[j] * l2_error(ops, disc, cont, n_quad=40) ** 2
    return total, w2


def test_point_expectation_matches_direct_quadrature():
    ps = probe_space(8, 2, 24)
    t = 2e-5

    def psi(j, ops):
        cont = semigroup_E(t, single_mode(j))
        return cont, semigroup_Eh(t, to_fem(single_mode(j), ops), ops)

    direct, w2 = _direct_pair(ps, t, psi)
    engine = expected_pair_norm_sq(ps, w2, *family_psi_h(ps, t))
    assert engine == pytest.approx(direct, rel=1e-8)


def test_phi_expectation_matches_direct_quadrature():
    ps = probe_space(8, 1, 24)
    t = 2e-5
    ops = build(8, 1, eigen=True)

    def phi(j, ops_):
        lam = (j * np.pi) ** 2
        cont = SpectralCoeffs(lam * semigroup_E(t, single_mode(j)).values)
        disc = frac_power_apply(ops, 1.0, semigroup_Eh(t, to_fem(single_mode(j), ops), ops))
        return cont, disc

    direct, w2 = _direct_pair(ps, t, phi)
    engine = expected_pair_norm_sq(ps, w2, *family_phi_h(ps, t))
    assert engine == pytest.approx(direct, rel=1e-8)


@pytest.mark.parametrize("family,power", [(family_psi_h_sq_integral, 0),
                                          (family_phi_h_sq_integral, 1)])
def test_integrated_pairs_against_adaptive_quadrature(family, power):
    ps = probe_space(8, 1, 20)
    t = 1e-3
    w2 = probe_weights_sq(ps.lam_c, 0.0)
    diag, pair = family(ps, w2, t)
    for j, m in [(1, 1), (2, 2), (3, 5), (7, 7)]:
        lam, mu = ps.lam_c[j], ps.lam_h[m]
        val, _ = sint.quad(lambda s: (lam**power * np.exp(-s * lam**2)
                                      - mu**power * np.exp(-s * mu**2)) ** 2,
                           0, t, limit=400, epsabs=0, epsrel=1e-12, points=[1e-9, 1e-7, 1e-5])
        assert pair[m, j] == pytest.approx(val, rel=1e-6, abs=1e-30)
        dval, _ = sint.quad(lambda s: lam ** (2 * power) * np.exp(-2 * s * lam**2), 0, t,
                            epsrel=1e-12)
        assert diag[j] == pytest.approx(dval, rel=1e-8)


@pytest.mark.parametrize("power", [0, 1])
def test_piecewise_integral_against_stepwise_quadrature(power):
    ps = probe_space(4, 2, 12)
    n, k = 6, 2e-4
    w2 = probe_weights_sq(ps.lam_c, 0.0)
    _, pair = _piecewise_integrated_sq(ps, w2, n, k, power)
    for j, m in [(1, 1), (2, 3), (4, 4)]:
        lam, mu = ps.lam_c[j], ps.lam_h[m]
        val = 0.0
        for i in range(1, n + 1):
            b = mu**power * (1 + k * mu**2) ** -i
            val += sint.quad(lambda s: (lam**power * np.exp(-s * lam**2) - b) ** 2,
                             (i - 1) * k, i * k, epsabs=0, epsrel=1e-12)[0]
        assert pair[m, j] == pytest.approx(val, rel=1e-6)


def test_fully_discrete_point_family_reduces_to_rational():
    ps = probe_space(4, 1, 8)
    diag, pair = family_psi_kh(ps, 3, 1e-3)
    lam, mu = ps.lam_c[2], ps.lam_h[2]
    assert pair[2, 2] == pytest.approx((np.exp(-3e-3 * lam**2) - (1 + 1e-3 * mu**2) ** -3) ** 2)


def test_smoothing_and_bounded_probes_pass():
    for probe in smoothing_probes() + bounded_probes():
        assert probe.passed, (probe.estimate_id, probe.fitted_slope)


def test_error_probes_pass():
    for probe in spatial_error_probes() + temporal_error_probes():
        assert probe.passed, (probe.estimate_id, probe.fitted_slope)
        assert probe.fit_log is not None


def test_temporal_ladder_must_divide_evaluation_time():
    with pytest.raises(ValueError):
        temporal_error_probes(BatteryConfig(full_time=0.0123))


def test_probe_rows_layout():
    row = smoothing_probes()[0].rows()[0]
    assert set(row) == {"estimate_id", "ladder_point", "measured", "fitted_slope",
                        "fitted_slope_log", "predicted", "status"}


def test_hoelder_deterministic_run_is_smooth():
    res = hoelder_probe(build(32, 1), None, n_steps=1024, max_lag_exp=4)
    assert res.samples == 1
    assert res.exponent >= 1.0 - 0.05


def test_hoelder_rejects_bad_lags():
    with pytest.raises(ValueError):
        hoelder_probe(build(8, 1), None, n_steps=16, max_lag_exp=4)
    with pytest.raises(ValueError):
        hoelder_probe(build(8, 1), None, beta=1.0)

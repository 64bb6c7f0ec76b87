import numpy as np
import pytest

from chcfem.rates import fit_rate


def test_exact_power_law():
    h = 2.0 ** -np.arange(3, 8)
    fit = fit_rate(h, 3.0 * h**1.7)
    assert fit.slope == pytest.approx(1.7, abs=1e-12)
    assert fit.r_squared == pytest.approx(1.0)
    assert fit.constant == pytest.approx(3.0)
    np.testing.assert_allclose(fit.predict(h), 3.0 * h**1.7)


def test_outlier_keeps_slope_in_band():
    h = 2.0 ** -np.arange(3, 8)
    e = h**2
    e[2] *= 1.5
    clean = fit_rate(h, h**2 * np.exp(0.01 * np.arange(5)))
    fit = fit_rate(h, e)
    assert abs(fit.slope - 2.0) < 0.2
    assert fit.r_squared < clean.r_squared


def test_log_corrected_fit():
    h = 2.0 ** -np.arange(3, 9)
    fit = fit_rate(h, h**2 * np.abs(np.log(h)), log_corrected=True)
    assert fit.slope == pytest.approx(2.0, abs=1e-12)
    assert fit_rate(h, h**2 * np.abs(np.log(h))).slope < 2.0


@pytest.mark.parametrize("res,err", [
    ([0.1, 0.1, 0.05], [1.0, 1.0, 0.5]),
    ([0.1, 0.05], [1.0, 0.5]),
    ([0.1, 0.05, 0.025], [1.0, 0.0, 0.3]),
    ([0.1, 0.05, 0.025], [1.0, -1.0, 0.3]),
    ([0.1, 0.05, 0.025], [1.0, np.nan, 0.3]),
])
def test_rejected_inputs(res, err):
    with pytest.raises(ValueError):
        fit_rate(res, err)


def test_to_dict_roundtrip():
    d = fit_rate([1e-1, 1e-2, 1e-3], [1e-2, 1e-4, 1e-6]).to_dict()
    assert set(d) >= {"slope", "intercept", "r_squared"}

from dataclasses import replace

import numpy as np
import pytest

from chcfem import build
from chcfem.errors import CouplingViolation
from chcfem.harness import (ErrorTable, StudyConfig, _check_coupling, _final, aggregate,
                            estimate_error, run_spatial_study, run_temporal_study, temporal_defaults, transfer)
from chcfem.noise import NoiseSpec, sample_path
from chcfem.scheme import SchemeConfig, State, initial_state


def _state(ops, u, w=None):
    w = np.zeros(ops.n) if w is None else w
    return State(ops.field(u), ops.field(w))


def test_identical_states_have_zero_error():
    ops = build(8, 2)
    s = initial_state(SchemeConfig.from_steps(ops, 2))
    assert estimate_error(ops, s, ops, s, "X") == 0.0
    assert estimate_error(ops, s, ops, s, "Y") == 0.0


def test_scaled_eigenvector_error():
    # e_1 interpolated on the coarse mesh is exact in the fine one, so the error is eps
    ref, coarse = build(16, 1, eigen=True), build(16, 1)
    e1 = ref.eigenvectors[:, 1]
    eps = 1e-3
    err = estimate_error(ref, _state(ref, e1), coarse, _state(coarse, (1 - eps) * e1), "X")
    assert err == pytest.approx(eps, rel=1e-12)


def test_chemical_potential_error_ignores_constants():
    ops = build(8, 1)
    w = np.linspace(0, 1, ops.n)
    a = _state(ops, np.zeros(ops.n), w)
    b = _state(ops, np.zeros(ops.n), w + 5.0)
    assert estimate_error(ops, a, ops, b, "Y") == pytest.approx(0.0, abs=1e-14)
    with pytest.raises(ValueError):
        estimate_error(ops, a, ops, b, "Z")


def test_transfer_preserves_norm():
    coarse, fine = build(4, 3), build(12, 3)
    c = np.random.default_rng(0).standard_normal(coarse.n)
    assert fine.l2_norm(transfer(coarse, fine, c)) == pytest.approx(coarse.l2_norm(c))


def test_aggregate():
    est, se = aggregate(np.full(30, 0.25), 2)
    assert est == pytest.approx(0.25) and se == 0.0
    e = np.array([1.0, 2.0, 3.0])
    assert aggregate(e, 4)[0] == pytest.approx(np.mean(e**4) ** 0.25)
    assert aggregate(e, 2)[1] > 0


def test_error_table_moment():
    t = ErrorTable(np.array([0.1, 0.05, 0.025]), np.ones((3, 4)), 2 * np.ones((3, 4)), 4)
    ex, _ = t.column("X")
    np.testing.assert_allclose(ex, 1.0)
    assert t.rows()[0]["rms_error_Y"] == pytest.approx(2.0)


@pytest.mark.parametrize("kw", [
    dict(ladder=(16, 32)),
    dict(ladder=(16, 16, 32)),
    dict(r=5),
    dict(moment=3),
    dict(samples=10),
    dict(ladder=(16, 32, 48)),
    dict(ladder=(16, 32, 512)),
    dict(mode="both"),
])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        StudyConfig(**kw)


def test_deterministic_config_allows_one_sample():
    cfg = StudyConfig(samples=1, noise_scale=0.0)
    assert not cfg.stochastic
    assert cfg.kappa == 2.0 and cfg.iota == 1.0
    assert temporal_defaults(gamma=3.5).iota == pytest.approx(1.0)


@pytest.mark.parametrize("r,floor", [(2, 1.8), (3, 2.8)])
def test_deterministic_spatial_rate(r, floor):
    cfg = StudyConfig(ladder=(8, 16, 32), ref_elements=128, ref_steps=64, samples=1,
                      noise_scale=0.0, r=r)
    res = run_spatial_study(cfg)
    assert res.fit("X").slope >= floor
    assert res.path_hashes == [None]


def test_linear_deterministic_temporal_rate():
    cfg = temporal_defaults(samples=1, linear=True, noise_scale=0.0, ref_elements=32,
                            ladder=(64, 128, 256, 512, 1024), ref_steps=16384)
    slope = run_temporal_study(cfg).fit("X").slope
    assert 0.85 <= slope <= 1.15


def test_reference_level_gives_zero_error():
    # validation forbids a rung at the reference level, so compare two reference runs
    cfg = StudyConfig(mode="temporal", ladder=(2, 4, 8), ref_elements=8, ref_steps=16,
                      samples=20)
    ops = build(8, 1)
    path = sample_path(cfg.noise_spec(), 16, cfg.T, 0)
    a = _final(cfg, ops, 16, path, 1)
    b = _final(cfg, ops, 16, path, 1)
    assert estimate_error(ops, a, ops, b) == 0.0


def test_coupling_check_raises():
    p0 = sample_path(NoiseSpec(J=8), 4, 0.1, 0)
    p1 = sample_path(NoiseSpec(J=8), 4, 0.1, 1)
    _check_coupling(p0, p0.path_hash)
    with pytest.raises(CouplingViolation):
        _check_coupling(p1, p0.path_hash)


def _tiny(mode):
    if mode == "spatial":
        return StudyConfig(ladder=(4, 8, 16), ref_elements=32, ref_steps=32, samples=20)
    return StudyConfig(mode="temporal", ladder=(4, 8, 16), ref_elements=16, ref_steps=64,
                       samples=20)


@pytest.mark.parametrize("mode", ["spatial", "temporal"])
def test_studies_reproducible_and_thread_independent(mode):
    run = run_spatial_study if mode == "spatial" else run_temporal_study
    a = run(_tiny(mode))
    b = run(replace(_tiny(mode), threads=2))
    np.testing.assert_array_equal(a.table.errors_x, b.table.errors_x)
    np.testing.assert_array_equal(a.table.errors_y, b.table.errors_y)
    assert a.path_hashes == b.path_hashes and len(set(a.path_hashes)) == 20
    summary = a.ratefit_summary()
    assert set(summary) >= {"X", "Y", "X_log_corrected", "reference_floor", "predicted"}
    assert summary["predicted"]["X"] == (2.0 if mode == "spatial" else 0.5)


def test_wrong_mode_rejected():
    with pytest.raises(ValueError):
        run_temporal_study(_tiny("spatial"))
    with pytest.raises(ValueError):
        run_spatial_study(_tiny("temporal"))

"""Numerical verification of the semigroup smoothing and error-operator estimates.

Every probe measures an operator norm bound of the form ``||T v|| <= C s^q |v|_beta``
along a geometric sweep of ``s`` (time ``t``, mesh size ``h`` or step ``k``) and
fits ``q`` by least squares on log-log data.

Probe vectors have prescribed spectral smoothness,
``v = sum_j w_j xi_j e_j`` with ``w_j = lambda_j^{-beta/2 - 1/4}`` and standard
normal ``xi_j``.  These weights put ``v`` on the border of ``H^beta`` (the
``|v|_beta`` series diverges only logarithmically), which makes the estimates
sharp.  The measured quantity is the exact expectation
``sqrt(E ||T v||^2 / E |v|_beta^2)`` over ``xi``; for operators diagonal in the
continuum and discrete eigenbases it reduces to

    E ||T v||^2 = sum_j w_j^2 [ a_j^2 (1 - ||P_h e_j||^2) + sum_m B_mj^2 (a_j - b_m)^2 ]

with ``B_mj = (e_j, e_{m,h})``, continuum multipliers ``a_j`` and discrete
multipliers ``b_m``.  Time integrals of squared norms use closed forms for
well separated eigenvalue pairs and Gauss quadrature where ``a_j`` and ``b_m``
nearly cancel.

The module also hosts :func:`hoelder_probe`, which measures the temporal
Hoelder exponent of simulated trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from ._pool import ordered_map
from .mesh_fem import FemOperators, FieldVec, build, spectral_multiplier
from .noise import NoiseSpec, sample_path
from .rates import RateFit, fit_rate
from .scheme import SchemeConfig, run_trajectory
from .spectral import SpectralCoeffs, load_matrix, spectral_loads

TOL_SPACE = 0.2
TOL_TIME = 0.15
NEAR_PAIR_RTOL = 1e-2
B2_CUTOFF = 1e-28


# ---------------------------------------------------------------------------
# discrete semigroup and its rational approximation
# ---------------------------------------------------------------------------

def semigroup_Eh(t: float, v: FieldVec, ops: FemOperators) -> FieldVec:
    """``exp(-t A_h^2) v``; the mean passes through."""
    if t < 0:
        raise ValueError(f"semigroup time must be non-negative, got {t}")
    ops.require_eigen()
    return spectral_multiplier(ops, v, np.exp(-t * ops.eigenvalues**2), keep_mean=True)


def rational_Ekh(n: int, k: float, v: FieldVec, ops: FemOperators) -> FieldVec:
    """Backward Euler transfer ``(I + k A_h^2)^{-n} v``."""
    if n < 0:
        raise ValueError("n must be non-negative")
    ops.require_eigen()
    mult = np.exp(-n * np.log1p(k * ops.eigenvalues**2))
    return spectral_multiplier(ops, v, mult, keep_mean=True)


# ---------------------------------------------------------------------------
# expectation engine
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ProbeSpace:
    """Eigen data of one FEM space against the first ``J`` continuum modes.

    ``B2[m, j] = (e_j, e_{m,h})^2`` and ``defect[j] = ||(I - P_h) e_j||^2``.
    """

    ops: FemOperators
    J: int
    lam_c: np.ndarray
    lam_h: np.ndarray
    B2: np.ndarray
    defect: np.ndarray

    @property
    def h(self) -> float:
        return self.ops.mesh.h


@lru_cache(maxsize=32)
def probe_space(n_elements: int, degree: int, J: int) -> ProbeSpace:
    ops = build(n_elements, degree, eigen=True)
    if degree == 1:
        L = spectral_loads(np.eye(J + 1), ops).T
    else:
        L = load_matrix(ops, J)
    B = ops.eigenvectors.T @ L
    B2 = B**2
    B2[:, 0] = 0.0
    B2[0, :] = 0.0
    defect = np.clip(1.0 - B2.sum(axis=0), 0.0, None)
    defect[0] = 0.0
    lam_c = (np.arange(J + 1) * np.pi) ** 2
    return ProbeSpace(ops, J, lam_c, ops.eigenvalues.copy(), B2, defect)


def probe_weights_sq(lam_c: np.ndarray, beta: float) -> np.ndarray:
    """``w_j^2 = lambda_j^{-beta - 1/2}`` for ``j >= 1`` and ``w_0 = 0``."""
    out = np.zeros_like(lam_c)
    out[1:] = lam_c[1:] ** (-beta - 0.5)
    return out


def smoothness_norm_sq(lam_c: np.ndarray, beta: float) -> float:
    """``E |v|_beta^2 = sum_j lambda_j^beta w_j^2``."""
    w2 = probe_weights_sq(lam_c, beta)
    return float(np.sum(lam_c[1:] ** beta * w2[1:]))


def expected_pair_norm_sq(ps: ProbeSpace, w2: np.ndarray, diag: np.ndarray,
                          pair: np.ndarray) -> float:
    """``sum_j w_j^2 [diag_j defect_j + sum_m B2_mj pair_mj]``."""
    return float(np.sum(w2 * (diag * ps.defect + np.einsum("mj,mj->j", ps.B2, pair))))


def expected_discrete_norm_sq(ps: ProbeSpace, w2: np.ndarray, g: np.ndarray) -> float:
    """``E ||T P_h v||^2`` for ``T`` diagonal in the discrete eigenbasis with ``|mult|^2 = g``."""
    return float(g @ (ps.B2 @ w2))


def _near_pairs(ps: ProbeSpace, w2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lam = ps.lam_c[None, :]
    mu = ps.lam_h[:, None]
    rel = np.abs(lam**2 - mu**2) <= NEAR_PAIR_RTOL * (lam**2 + mu**2)
    mask = rel & (ps.B2 * w2[None, :] > B2_CUTOFF)
    return np.nonzero(mask)


def _geometric_gauss(t: float, n_panels: int = 120, ratio: float = math.sqrt(2.0),
                     n_points: int = 10) -> tuple[np.ndarray, np.ndarray]:
    """Gauss nodes on panels ``[t r^{-i-1}, t r^{-i}]`` plus ``[0, t r^{-n}]``."""
    x, w = np.polynomial.legendre.leggauss(n_points)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    edges = np.concatenate([[0.0], t * ratio ** (-np.arange(n_panels, -1, -1.0))])
    a, b = edges[:-1], edges[1:]
    nodes = (a[:, None] + (b - a)[:, None] * x[None, :]).ravel()
    weights = ((b - a)[:, None] * w[None, :]).ravel()
    return nodes, weights


def _F(c: np.ndarray, t: float) -> np.ndarray:
    """``int_0^t exp(-c s) ds`` stable for small ``c t``."""
    c = np.asarray(c, dtype=float)
    out = np.full(c.shape, float(t))
    nz = c * t > 1e-300
    out[nz] = -np.expm1(-c[nz] * t) / c[nz]
    return out


# ---------------------------------------------------------------------------
# multiplier families
# ---------------------------------------------------------------------------
# Each family returns (diag_j, pair_mj): diag corresponds to the continuum part
# a_j^2 that P_h misses, pair to (a_j - b_m)^2, both possibly time integrated.

def _point_family(ps: ProbeSpace, a: np.ndarray, b: np.ndarray,
                  diff: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    d = a[None, :] - b[:, None] if diff is None else diff
    return a**2, d**2


def _dexp(la: np.ndarray, lb: np.ndarray) -> np.ndarray:
    """``exp(la) - exp(lb)`` without cancellation for close exponents."""
    la, lb = np.broadcast_arrays(la, lb)
    out = np.exp(la) - np.exp(lb)
    near = np.abs(la - lb) < 1.0
    out[near] = np.exp(la[near]) * -np.expm1(lb[near] - la[near])
    return out


def _exp_diff(lam2: np.ndarray, mu2: np.ndarray, t: float) -> np.ndarray:
    """``exp(-t lam2) - exp(-t mu2)``."""
    return _dexp(-t * lam2, -t * mu2)


def family_psi_h(ps: ProbeSpace, t: float):
    lam2 = ps.lam_c[None, :] ** 2
    mu2 = ps.lam_h[:, None] ** 2
    a = np.exp(-t * ps.lam_c**2)
    return _point_family(ps, a, None, _exp_diff(lam2, mu2, t))


def family_phi_h(ps: ProbeSpace, t: float):
    lam = ps.lam_c[None, :]
    mu = ps.lam_h[:, None]
    ea = np.exp(-t * lam**2)
    diff = (lam - mu) * ea + mu * _exp_diff(lam**2, mu**2, t)
    return _point_family(ps, ps.lam_c * np.exp(-t * ps.lam_c**2), None, diff)


def _integrated_sq(ps: ProbeSpace, w2: np.ndarray, t: float, a_of_s: Callable, b_of_s: Callable,
                   closed: Callable) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form ``int_0^t (a_j - b_m)^2 ds`` with quadrature on near pairs."""
    diag, pair = closed()
    rows, cols = _near_pairs(ps, w2)
    if rows.size:
        s, ws = _geometric_gauss(t)
        lam = ps.lam_c[cols]
        mu = ps.lam_h[rows]
        vals = np.empty(rows.size)
        for start in range(0, rows.size, 256):
            sl = slice(start, start + 256)
            d = a_of_s(lam[sl, None], s[None, :]) - b_of_s(mu[sl, None], s[None, :])
            vals[sl] = (d**2) @ ws
        pair = pair.copy()
        pair[rows, cols] = vals
    return diag, pair


def family_psi_h_sq_integral(ps: ProbeSpace, w2: np.ndarray, t: float):
    def closed():
        lam2 = ps.lam_c**2
        mu2 = ps.lam_h**2
        diag = _F(2 * lam2, t)
        pair = (_F(2 * lam2[None, :], t) - 2 * _F(lam2[None, :] + mu2[:, None], t)
                + _F(2 * mu2[:, None], t))
        return diag, np.clip(pair, 0.0, None)

    return _integrated_sq(ps, w2, t, lambda l, s: np.exp(-s * l**2),
                          lambda m, s: np.exp(-s * m**2), closed)


def family_phi_h_sq_integral(ps: ProbeSpace, w2: np.ndarray, t: float):
    def closed():
        lam, mu = ps.lam_c, ps.lam_h
        lam2, mu2 = lam**2, mu**2
        diag = lam2 * _F(2 * lam2, t)
        pair = (lam2[None, :] * _F(2 * lam2[None, :], t)
                - 2 * lam[None, :] * mu[:, None] * _F(lam2[None, :] + mu2[:, None], t)
                + mu2[:, None] * _F(2 * mu2[:, None], t))
        return diag, np.clip(pair, 0.0, None)

    return _integrated_sq(ps, w2, t, lambda l, s: l * np.exp(-s * l**2),
                          lambda m, s: m * np.exp(-s * m**2), closed)


def family_phi_h_integral(ps: ProbeSpace, t: float):
    """Multipliers of ``int_0^t Phi_h(s) ds``: ``(1 - e^{-t lam^2}) / lam``."""
    def integ(lam):
        out = np.zeros_like(lam)
        nz = lam > 0
        out[nz] = -np.expm1(-t * lam[nz] ** 2) / lam[nz]
        return out

    a = integ(ps.lam_c)
    b = integ(ps.lam_h)
    return _point_family(ps, a, b)


def _rational(mu2: np.ndarray, k: float, n) -> np.ndarray:
    return np.exp(-n * np.log1p(k * mu2))


def family_psi_kh(ps: ProbeSpace, n: int, k: float):
    t = n * k
    lam2 = ps.lam_c[None, :] ** 2
    mu2 = ps.lam_h[:, None] ** 2
    diff = _dexp(-t * lam2, -n * np.log1p(k * mu2))
    return _point_family(ps, np.exp(-t * ps.lam_c**2), None, diff)


def family_phi_kh(ps: ProbeSpace, n: int, k: float):
    t = n * k
    lam = ps.lam_c[None, :]
    mu = ps.lam_h[:, None]
    ea = np.exp(-t * lam**2)
    diff = (lam - mu) * ea + mu * _dexp(-t * lam**2, -n * np.log1p(k * mu**2))
    return _point_family(ps, ps.lam_c * np.exp(-t * ps.lam_c**2), None, diff)


def _piecewise_integrated_sq(ps: ProbeSpace, w2: np.ndarray, n: int, k: float, power: int):
    """``int_0^{t_n} (a_j(s) - b_m^{(i)})^2 ds`` with ``b^{(i)}`` constant on ``[t_{i-1}, t_i)``.

    ``power = 0`` gives the Psi family (``a = e^{-s lam^2}``, ``b = r^i``),
    ``power = 1`` the Phi family (extra factors ``lam`` and ``mu``).
    """
    t = n * k
    lam, mu = ps.lam_c, ps.lam_h
    lam2, mu2 = lam**2, mu**2
    fa = lam**power
    fb = mu**power
    diag = fa**2 * _F(2 * lam2, t)
    # cross term: sum_i r^i int_{t_{i-1}}^{t_i} e^{-s lam^2} ds
    log_r = -np.log1p(k * mu2)[:, None]
    lam2r = lam2[None, :]
    seg = _F(lam2r, k)                              # int_0^k e^{-s lam^2}
    log_q = log_r - k * lam2r                       # q = r e^{-k lam^2}
    geo_q = _geometric_sum(log_q, n)                # sum_{i=0}^{n-1} q^i
    cross = np.exp(log_r) * seg * geo_q
    geo_r2 = _geometric_sum(2 * log_r, n)           # sum_{i=0}^{n-1} r^{2i}
    sq_b = k * np.exp(2 * log_r) * geo_r2
    pair = (fa[None, :] ** 2 * _F(2 * lam2r, t) - 2 * fa[None, :] * fb[:, None] * cross
            + fb[:, None] ** 2 * sq_b)
    pair = np.clip(pair, 0.0, None)
    rows, cols = _near_pairs(ps, w2)
    if rows.size:
        x, wg = np.polynomial.legendre.leggauss(8)
        x = 0.5 * (x + 1.0)
        wg = 0.5 * wg
        # graded sub-panels inside every step resolve e^{-s lam^2} near s = 0
        vals = np.zeros(rows.size)
        for i in range(1, n + 1):
            t0 = (i - 1) * k
            if i == 1:
                s, ws = _geometric_gauss(k, n_panels=60, n_points=8)
            else:
                s = t0 + k * x
                ws = k * wg
            for start in range(0, rows.size, 512):
                sl = slice(start, start + 512)
                l_ = lam[cols[sl], None]
                m_ = mu[rows[sl], None]
                a = l_**power * np.exp(-s[None, :] * l_**2)
                b = m_**power * np.exp(-i * np.log1p(k * m_**2))
                vals[sl] += ((a - b) ** 2) @ ws
        pair[rows, cols] = vals
    return diag, pair


def _geometric_sum(log_q: np.ndarray, n: int) -> np.ndarray:
    """``sum_{i=0}^{n-1} q^i`` from ``log q <= 0``, stable for ``q`` near 1."""
    log_q = np.minimum(log_q, 0.0)
    out = np.full(log_q.shape, float(n))
    nz = log_q < -1e-300
    out[nz] = np.expm1(n * log_q[nz]) / np.expm1(log_q[nz])
    return out


def family_phi_kh_integral(ps: ProbeSpace, n: int, k: float):
    """Multipliers of ``int_0^{t_n} Phi_{k,h}``: ``(1 - e^{-t lam^2})/lam`` vs ``(1 - r^n)/mu``."""
    t = n * k
    lam, mu = ps.lam_c, ps.lam_h
    a = np.zeros_like(lam)
    a[1:] = -np.expm1(-t * lam[1:] ** 2) / lam[1:]
    b = np.zeros_like(mu)
    b[1:] = -np.expm1(-n * np.log1p(k * mu[1:] ** 2)) / mu[1:]
    return _point_family(ps, a, b)


# ---------------------------------------------------------------------------
# probes
# ---------------------------------------------------------------------------

@dataclass
class EstimateProbe:
    """One estimate checked along a sweep, with its fitted and predicted slope."""

    estimate_id: str
    description: str
    sweep: str
    ladder: np.ndarray
    measured: np.ndarray
    predicted_slope: float
    tol_low: float
    tol_high: float
    fit: RateFit | None = None
    params: dict = field(default_factory=dict)
    fit_log: RateFit | None = None

    def __post_init__(self):
        self.ladder = np.asarray(self.ladder, dtype=float)
        self.measured = np.asarray(self.measured, dtype=float)
        if self.ladder.size < 4:
            raise ValueError(f"{self.estimate_id}: ladder needs at least 4 points")
        if self.fit is None:
            self.fit = fit_rate(self.ladder, self.measured)
        if self.fit_log is None and not np.any(np.isclose(self.ladder, 1.0)):
            self.fit_log = fit_rate(self.ladder, self.measured, log_corrected=True)

    @property
    def fitted_slope(self) -> float:
        return self.fit.slope

    @property
    def passed(self) -> bool:
        lo = self.predicted_slope - self.tol_low
        hi = self.predicted_slope + self.tol_high
        return bool(lo <= self.fitted_slope <= hi)

    def rows(self) -> list[dict]:
        return [{"estimate_id": self.estimate_id, "ladder_point": float(x), "measured": float(y),
                 "fitted_slope": self.fitted_slope,
                 "fitted_slope_log": self.fit_log.slope if self.fit_log else float("nan"),
                 "predicted": self.predicted_slope,
                 "status": "pass" if self.passed else "FAIL"}
                for x, y in zip(self.ladder, self.measured)]


@dataclass(frozen=True)
class BatteryConfig:
    """Sweep parameters of the operator battery."""

    tol_space: float = TOL_SPACE
    tol_time: float = TOL_TIME
    smoothing_elements: int = 512
    smoothing_times: tuple = tuple(np.geomspace(1e-9, 1e-5, 9))
    h_ladder: tuple = (16, 32, 64, 128, 256)
    h_probe_time: float = 0.01
    bounded_time: float = 1e-4
    rational_k: float = 1e-10
    rational_steps: tuple = (10, 32, 100, 316, 1000, 3162, 10000, 31623, 100000)
    full_elements: int = 64
    full_degree: int = 3
    full_T: float = 0.1
    full_time: float = 0.0125
    full_k_exponents: tuple = (6, 7, 8, 9, 10, 11, 12)


def _ratio(num_sq: float, den_sq: float) -> float:
    return math.sqrt(max(num_sq, 0.0) / den_sq)


def _probe(estimate_id, description, sweep, ladder, measured, predicted, tol, params=None):
    lo, hi = tol if isinstance(tol, tuple) else (tol, tol)
    return EstimateProbe(estimate_id, description, sweep, np.asarray(ladder), np.asarray(measured),
                         predicted, lo, hi, params=params or {})


def smoothing_probes(cfg: BatteryConfig = BatteryConfig()) -> list[EstimateProbe]:
    """Discrete semigroup bounds in ``t`` (decay or growth exponents)."""
    n_el = cfg.smoothing_elements
    ps = probe_space(n_el, 1, 4 * (n_el + 1))
    w2 = probe_weights_sq(ps.lam_c, 0.0)
    den = smoothness_norm_sq(ps.lam_c, 0.0)
    mu = ps.lam_h
    inv = np.zeros_like(mu)
    inv[1:] = 1.0 / mu[1:]
    ts = np.asarray(cfg.smoothing_times)
    tt = cfg.tol_time
    out = []
    meas = [_ratio(expected_discrete_norm_sq(ps, w2, mu**2 * np.exp(-2 * t * mu**2)), den) for t in ts]
    out.append(_probe("L3.1a", "||A_h E_h(t) P_h v|| / ||v||, mu=1", "t", ts, meas, -0.5,
                      (min(tt, 0.12), min(tt, 0.05)), {"mu": 1, "h": ps.h}))
    meas = [_ratio(expected_discrete_norm_sq(ps, w2, inv**2 * (-np.expm1(-t * mu**2)) ** 2), den)
            for t in ts]
    out.append(_probe("L3.1b", "||A_h^-1 (I - E_h(t)) P_h v|| / ||v||, nu=1", "t", ts, meas, 0.5, tt,
                      {"nu": 1, "h": ps.h}))
    k = cfg.rational_k
    ns = np.asarray(cfg.rational_steps)
    for m in (1, 2):
        meas = [_ratio(expected_discrete_norm_sq(ps, w2, mu ** (2 * m) * _rational(mu**2, k, 2 * n)), den)
                for n in ns]
        out.append(_probe(f"L5.2a[mu={m}]", f"||A_h^{m} E_kh^n P_h v|| / ||v||", "t", ns * k, meas,
                          -m / 2, min(tt, 0.12), {"mu": m, "k": k, "h": ps.h}))
    meas = [_ratio(expected_discrete_norm_sq(ps, w2, inv**2 * (1 - _rational(mu**2, k, n)) ** 2), den)
            for n in ns]
    out.append(_probe("L5.2b", "||A_h^-1 (I - E_kh^n) P_h v|| / ||v||, nu=1", "t", ns * k, meas, 0.5,
                      tt, {"nu": 1, "k": k, "h": ps.h}))
    return out


def bounded_probes(cfg: BatteryConfig = BatteryConfig()) -> list[EstimateProbe]:
    """Uniform-in-h bounds: predicted slope 0 along the mesh ladder."""
    J = 4 * (max(cfg.h_ladder) + 1)
    t = cfg.bounded_time
    k = t / 64
    n = 64
    hs, c31, d31, c52, d52 = [], [], [], [], []
    for n_el in cfg.h_ladder:
        ps = probe_space(n_el, 1, J)
        w2 = probe_weights_sq(ps.lam_c, 0.0)
        den = smoothness_norm_sq(ps.lam_c, 0.0)
        mu2 = ps.lam_h**2
        hs.append(ps.h)
        c31.append(_ratio(expected_discrete_norm_sq(ps, w2, np.expm1(-t * mu2) ** 2), den))
        d31.append(_ratio(expected_discrete_norm_sq(ps, w2, 0.5 * -np.expm1(-2 * t * mu2)), den))
        r = np.exp(-np.log1p(k * mu2))
        c52.append(_ratio(expected_discrete_norm_sq(ps, w2, (1 - _rational(mu2, k, n)) ** 2), den))
        # k sum_j lam^2 r^{2j} = k lam^2 r^2 (1 - r^{2n}) / (1 - r^2)
        g = np.zeros_like(mu2)
        nz = mu2 > 0
        g[nz] = k * mu2[nz] * r[nz] ** 2 * _geometric_sum(2 * np.log(r[nz]), n)
        d52.append(_ratio(expected_discrete_norm_sq(ps, w2, g), den))
    ts = cfg.tol_space
    return [
        _probe("L3.1c", "||int_0^t A_h^2 E_h(s) P_h v ds|| / ||v||", "h", hs, c31, 0.0, ts, {"t": t}),
        _probe("L3.1d", "(int_0^t ||A_h E_h(s) P_h v||^2 ds)^(1/2) / ||v||", "h", hs, d31, 0.0, ts,
               {"t": t}),
        _probe("L5.2c", "||k sum_j A_h^2 E_kh^j P_h v|| / ||v||", "h", hs, c52, 0.0, ts,
               {"t": t, "k": k}),
        _probe("L5.2d", "(k sum_j ||A_h E_kh^j P_h v||^2)^(1/2) / ||v||", "h", hs, d52, 0.0, ts,
               {"t": t, "k": k}),
    ]


def spatial_error_probes(cfg: BatteryConfig = BatteryConfig()) -> list[EstimateProbe]:
    """Semi-discrete error operators along the h ladder (P1 elements, rates 2)."""
    J = 4 * (max(cfg.h_ladder) + 1)
    t = cfg.h_probe_time
    # (id, description, smoothness of v, family builder)
    specs = [
        ("L4.1a", "||Psi_h(t) v|| / |v|_2", 2.0, lambda ps, w2: family_psi_h(ps, t)),
        ("L4.1b", "||Phi_h(t) v|| / |v|_0", 0.0, lambda ps, w2: family_phi_h(ps, t)),
        ("L4.1c", "(int_0^t ||Psi_h(s) v||^2 ds)^(1/2) / |v|_0", 0.0,
         lambda ps, w2: family_psi_h_sq_integral(ps, w2, t)),
        ("L4.1d", "(int_0^t ||Phi_h(s) v||^2 ds)^(1/2) / |v|_2", 2.0,
         lambda ps, w2: family_phi_h_sq_integral(ps, w2, t)),
        ("L4.1e", "||int_0^t Phi_h(s) v ds|| / |v|_0", 0.0, lambda ps, w2: family_phi_h_integral(ps, t)),
    ]
    hs = [1.0 / n for n in cfg.h_ladder]
    out = []
    for pid, desc, beta, fam in specs:
        meas = []
        for n_el in cfg.h_ladder:
            ps = probe_space(n_el, 1, J)
            w2 = probe_weights_sq(ps.lam_c, beta)
            diag, pair = fam(ps, w2)
            meas.append(_ratio(expected_pair_norm_sq(ps, w2, diag, pair),
                               smoothness_norm_sq(ps.lam_c, beta)))
        out.append(_probe(pid, desc, "h", hs, meas, 2.0, cfg.tol_space, {"t": t, "beta": beta, "r": 2}))
    return out


def temporal_error_probes(cfg: BatteryConfig = BatteryConfig()) -> list[EstimateProbe]:
    """Fully discrete error operators along the k ladder (cubic elements, rates 1)."""
    n_el, p = cfg.full_elements, cfg.full_degree
    ps = probe_space(n_el, p, 4 * (p * n_el + 1))
    t = cfg.full_time
    ks = [cfg.full_T * 2.0 ** (-e) for e in cfg.full_k_exponents]
    ns = [int(round(t / k)) for k in ks]
    if any(abs(n * k - t) > 1e-12 * t for n, k in zip(ns, ks)):
        raise ValueError("evaluation time must be a multiple of every step in the ladder")
    specs = [
        ("L6.2a", "||Psi_kh(t) v|| / |v|_4", 4.0, lambda w2, n, k: family_psi_kh(ps, n, k)),
        ("L6.2b", "||Phi_kh(t) v|| / |v|_2", 2.0, lambda w2, n, k: family_phi_kh(ps, n, k)),
        ("L6.2c", "(int_0^t ||Psi_kh(s) v||^2 ds)^(1/2) / |v|_2", 2.0,
         lambda w2, n, k: _piecewise_integrated_sq(ps, w2, n, k, 0)),
        ("L6.2d", "(int_0^t ||Phi_kh(s) v||^2 ds)^(1/2) / |v|_4", 4.0,
         lambda w2, n, k: _piecewise_integrated_sq(ps, w2, n, k, 1)),
        ("L6.2e", "||int_0^t Phi_kh(s) v ds|| / |v|_2", 2.0,
         lambda w2, n, k: family_phi_kh_integral(ps, n, k)),
    ]
    out = []
    for pid, desc, beta, fam in specs:
        w2 = probe_weights_sq(ps.lam_c, beta)
        den = smoothness_norm_sq(ps.lam_c, beta)
        meas = [_ratio(expected_pair_norm_sq(ps, w2, *fam(w2, n, k)), den) for n, k in zip(ns, ks)]
        out.append(_probe(pid, desc, "k", ks, meas, 1.0, cfg.tol_time,
                          {"t": t, "beta": beta, "r": p + 1, "h": ps.h}))
    return out


def run_battery(cfg: BatteryConfig = BatteryConfig()) -> list[EstimateProbe]:
    """All operator probes in a fixed order."""
    return (smoothing_probes(cfg) + bounded_probes(cfg) + spatial_error_probes(cfg)
            + temporal_error_probes(cfg))


# ---------------------------------------------------------------------------
# temporal Hoelder regularity of trajectories
# ---------------------------------------------------------------------------

@dataclass
class HoelderResult:
    """Mean squared increments ``E ||X(T) - X(T - delta)||^2`` against ``delta``."""

    lags: np.ndarray
    mean_sq: np.ndarray
    stderr: np.ndarray
    samples: int
    fit: RateFit
    predicted: float

    @property
    def exponent(self) -> float:
        """Hoelder exponent: half the slope of the mean square."""
        return 0.5 * self.fit.slope

    def passed(self, tol: float = 0.1) -> bool:
        return abs(self.exponent - self.predicted) <= tol


def hoelder_exponent_prediction(gamma: float, beta: float = 0.0) -> float:
    return min(0.5, (gamma - beta) / 4.0)


def hoelder_probe(ops: FemOperators, spec: NoiseSpec | None, samples: int = 200,
                  T: float = 0.1, n_steps: int = 8192, max_lag_exp: int = 6, beta: float = 0.0,
                  initial_data: SpectralCoeffs | None = None, threads: int | None = None
                  ) -> HoelderResult:
    """Fit the temporal Hoelder exponent of the ``L2`` norm on reference trajectories.

    Each sample is one trajectory on ``ops`` with ``n_steps`` steps of
    ``[0, T]``; increments are taken backwards from ``T`` over lags
    ``delta = 2^m T / n_steps`` for ``m = 0..max_lag_exp``.  ``spec=None``
    runs the deterministic flow (one sample suffices).  Only ``beta = 0`` is
    measured; the value enters the predicted exponent.
    """
    if beta != 0.0:
        raise ValueError("only the L2 norm (beta = 0) is measured")
    if 2**max_lag_exp >= n_steps:
        raise ValueError("largest lag must be shorter than the trajectory")
    kw = {} if initial_data is None else {"initial_data": initial_data}
    cfg = SchemeConfig.from_steps(ops, n_steps, T, **kw)
    lag_steps = 2 ** np.arange(max_lag_exp + 1)
    ck = sorted({n_steps} | {n_steps - int(m) for m in lag_steps})
    if spec is None:
        samples = 1
    if samples < 1:
        raise ValueError("need at least one sample")

    def one(i: int) -> np.ndarray:
        path = None if spec is None else sample_path(spec, n_steps, T, i)
        traj = run_trajectory(cfg, path, checkpoints=ck)
        u_end = traj.u[-1]
        out = np.empty(lag_steps.size)
        for a, m in enumerate(lag_steps):
            d = u_end - traj.u[ck.index(n_steps - int(m))]
            out[a] = ops.l2_norm(d) ** 2
        return out

    rows = np.array(ordered_map(one, range(samples), threads))
    mean_sq = rows.mean(axis=0)
    se = rows.std(axis=0, ddof=1) / np.sqrt(samples) if samples > 1 else np.zeros_like(mean_sq)
    lags = lag_steps * (T / n_steps)
    gamma = 4.0 if spec is None else spec.gamma
    return HoelderResult(lags, mean_sq, se, samples, fit_rate(lags, mean_sq),
                         hoelder_exponent_prediction(gamma, beta))

"""Coupled-path Monte Carlo studies of strong convergence rates.

A spatial study drives a reference mesh and every ladder mesh with one noise
path per sample, all at the reference time step, and compares the solutions at
``t = T`` after exact prolongation to the reference mesh.  A temporal study
keeps one mesh and coarsens the finest increments to every ladder step.

Errors are aggregated as ``(mean e^p)^{1/p}`` over samples for the solution
``X`` and for the mean-free chemical potential ``Y = P w``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from ._pool import ordered_map
from .errors import CouplingViolation
from .mesh_fem import FemOperators, build, prolongation_matrix
from .noise import NoiseSpec, WienerIncrements, coarsen, default_truncation, sample_path, validate_spec
from .rates import RateFit, fit_rate
from .scheme import SchemeConfig, State, default_initial_data, run_trajectory
from .spectral import SpectralCoeffs

MIN_SAMPLES = 20
DOMINANCE_FRACTION = 0.1


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StudyConfig:
    """Parameters of a spatial or temporal study.

    ``ladder`` holds element counts (spatial) or step counts (temporal).  The
    reference level is ``ref_elements`` and ``ref_steps``; in a temporal study
    the mesh is ``ref_elements`` for every run.  ``r`` is the element order
    plus one.  ``noise_scale = 0`` gives a deterministic study.
    """

    mode: str = "spatial"
    ladder: tuple = (16, 32, 64, 128)
    ref_elements: int = 512
    ref_steps: int = 8192
    samples: int = 100
    moment: int = 2
    gamma: float = 4.0
    decay_s: float | None = None
    r: int = 2
    T: float = 0.1
    seed: int = 0
    noise_scale: float = 1.0
    modes: int | None = None
    linear: bool = False
    initial_amplitude: float = 0.1
    threads: int | None = None

    def __post_init__(self):
        if self.mode not in ("spatial", "temporal"):
            raise ValueError(f"mode must be 'spatial' or 'temporal', got {self.mode!r}")
        if len(self.ladder) < 3:
            raise ValueError("ladder needs at least 3 resolutions")
        if len(set(self.ladder)) != len(self.ladder):
            raise ValueError("ladder entries must be distinct")
        if self.r not in (2, 3, 4):
            raise ValueError(f"r must be 2, 3 or 4, got {self.r}")
        if self.moment < 2 or self.moment % 2:
            raise ValueError("moment must be an even integer >= 2")
        if self.noise_scale > 0 and self.samples < MIN_SAMPLES:
            raise ValueError(f"a stochastic study needs at least {MIN_SAMPLES} samples")
        if self.samples < 1:
            raise ValueError("samples must be positive")
        fine = self.ref_elements if self.mode == "spatial" else self.ref_steps
        for n in self.ladder:
            if n >= fine or fine % n:
                raise ValueError(f"ladder entry {n} must strictly divide the reference level {fine}")

    @property
    def degree(self) -> int:
        return self.r - 1

    @property
    def kappa(self) -> float:
        return float(min(self.gamma, self.r))

    @property
    def iota(self) -> float:
        return float(min(self.gamma - 2, self.r - 1))

    @property
    def stochastic(self) -> bool:
        return self.noise_scale > 0

    def noise_spec(self) -> NoiseSpec:
        J = self.modes or default_truncation(self.degree * self.ref_elements + 1)
        spec = NoiseSpec(self.gamma, self.decay_s, J, self.seed, self.noise_scale)
        validate_spec(spec)
        return spec

    def initial_data(self) -> SpectralCoeffs:
        return default_initial_data(self.initial_amplitude)

    def resolutions(self) -> np.ndarray:
        if self.mode == "spatial":
            return np.array([1.0 / n for n in self.ladder])
        return np.array([self.T / n for n in self.ladder])

    def describe(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["ladder"] = list(self.ladder)
        d["decay_s"] = self.noise_spec().decay_s if self.stochastic else self.decay_s
        d["modes"] = self.noise_spec().J if self.stochastic else self.modes
        return d


# ---------------------------------------------------------------------------
# errors
# ---------------------------------------------------------------------------

@lru_cache(maxsize=16)
def _ops(n_elements: int, degree: int) -> FemOperators:
    return build(n_elements, degree)


@lru_cache(maxsize=16)
def _prolong(coarse: tuple, fine: tuple) -> sp.csr_matrix:
    return prolongation_matrix(_ops(*coarse), _ops(*fine))


def _key(ops: FemOperators) -> tuple:
    return (ops.mesh.n_elements, ops.space.degree)


def mean_free(ops: FemOperators, coeffs: np.ndarray) -> np.ndarray:
    """Coefficients of ``P v``; constants are exact in every Lagrange space."""
    return coeffs - ops.basis_integrals @ coeffs


def transfer(coarse: FemOperators, fine: FemOperators, coeffs: np.ndarray) -> np.ndarray:
    """Exact embedding of a coarse field into a nested fine space."""
    if _key(coarse) == _key(fine):
        return coeffs
    return _prolong(_key(coarse), _key(fine)) @ coeffs


def estimate_error(ref_ops: FemOperators, ref: State, approx_ops: FemOperators, approx: State,
                   quantity: str = "X") -> float:
    """Per-sample ``L2`` error between two states on the reference mesh.

    ``quantity`` is ``"X"`` for the solution or ``"Y"`` for the mean-free
    chemical potential.  Raises ``ValueError`` when the approximation space is
    not nested in the reference space.
    """
    if quantity == "X":
        a, b = ref.u.coeffs, approx.u.coeffs
    elif quantity == "Y":
        a = mean_free(ref_ops, ref.w.coeffs)
        b = mean_free(approx_ops, approx.w.coeffs)
    else:
        raise ValueError(f"quantity must be 'X' or 'Y', got {quantity!r}")
    return ref_ops.l2_norm(a - transfer(approx_ops, ref_ops, b))


def aggregate(errors: np.ndarray, p: int = 2) -> tuple[float, float]:
    """``(mean e^p)^{1/p}`` and its delta-method standard error."""
    e = np.asarray(errors, dtype=float)
    m = float(np.mean(e**p))
    est = m ** (1.0 / p)
    if e.size < 2 or m == 0.0:
        return est, 0.0
    se_m = float(np.std(e**p, ddof=1)) / math.sqrt(e.size)
    return est, se_m * m ** (1.0 / p - 1.0) / p


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------

@dataclass
class ErrorTable:
    """Errors per resolution; ``errors_x[i, s]`` is sample ``s`` at resolution ``i``."""

    resolutions: np.ndarray
    errors_x: np.ndarray
    errors_y: np.ndarray
    moment: int = 2

    @property
    def samples(self) -> int:
        return self.errors_x.shape[1]

    def column(self, quantity: str) -> tuple[np.ndarray, np.ndarray]:
        data = self.errors_x if quantity == "X" else self.errors_y
        agg = [aggregate(row, self.moment) for row in data]
        return np.array([a for a, _ in agg]), np.array([s for _, s in agg])

    def rows(self) -> list[dict]:
        ex, sx = self.column("X")
        ey, sy = self.column("Y")
        return [{"resolution": float(r), "rms_error_X": float(a), "stderr_X": float(b),
                 "rms_error_Y": float(c), "stderr_Y": float(d), "samples": self.samples}
                for r, a, b, c, d in zip(self.resolutions, ex, sx, ey, sy)]

    def fit(self, quantity: str = "X", log_corrected: bool = False) -> RateFit:
        return fit_rate(self.resolutions, self.column(quantity)[0], log_corrected)


@dataclass
class StudyResult:
    cfg: StudyConfig
    table: ErrorTable
    path_hashes: list
    floor_estimate: float
    floor_limit: float
    extras: dict = field(default_factory=dict)

    @property
    def dominance_ok(self) -> bool:
        """Reference error floor below the allowed fraction of the smallest ladder error."""
        return bool(self.floor_estimate < self.floor_limit)

    def fit(self, quantity: str = "X", log_corrected: bool = False) -> RateFit:
        return self.table.fit(quantity, log_corrected)

    def ratefit_summary(self) -> dict:
        return {
            "mode": self.cfg.mode,
            "predicted": {"X": self.predicted("X"), "Y": self.predicted("Y")},
            "X": self.fit("X").to_dict(), "Y": self.fit("Y").to_dict(),
            "X_log_corrected": self.fit("X", True).to_dict(),
            "Y_log_corrected": self.fit("Y", True).to_dict(),
            "reference_floor": {"estimate": self.floor_estimate, "limit": self.floor_limit,
                                "ok": self.dominance_ok},
            "extras": self.extras,
        }

    def predicted(self, quantity: str) -> float:
        rate = self.cfg.kappa if quantity == "X" else self.cfg.iota
        return rate if self.cfg.mode == "spatial" else rate / 4.0


# ---------------------------------------------------------------------------
# studies
# ---------------------------------------------------------------------------

def _sample_path(cfg: StudyConfig, spec: NoiseSpec | None, i: int) -> WienerIncrements | None:
    return None if spec is None else sample_path(spec, cfg.ref_steps, cfg.T, i)


def _check_coupling(path: WienerIncrements | None, expected: str | None) -> None:
    got = None if path is None else path.path_hash
    if got != expected:
        raise CouplingViolation(f"path hash {got} differs from the sample's hash {expected}")


def _final(cfg: StudyConfig, ops: FemOperators, n_steps: int, path, factor: int) -> State:
    scfg = SchemeConfig.from_steps(ops, n_steps, cfg.T, initial_data=cfg.initial_data(),
                                   linear=cfg.linear)
    return run_trajectory(scfg, path, coarsen_factor=factor).final


def _error_field(ref_ops: FemOperators, ref: State, ops: FemOperators, st: State) -> np.ndarray:
    return ref.u.coeffs - transfer(ops, ref_ops, st.u.coeffs)


def run_spatial_study(cfg: StudyConfig, floor_samples: int = 20) -> StudyResult:
    """Spatial errors at ``t = T`` with the reference time step on every mesh.

    Two temporal floors are measured on the first ``floor_samples`` samples,
    both from reruns at ``2 k_ref`` extrapolated with the predicted temporal
    order ``kappa / 4``:

    * ``floor_estimate``: change of the coupled error field ``X_ref - X_h`` on
      the finest ladder mesh, i.e. the temporal error that actually enters the
      spatial comparison.  The study's dominance flag uses this floor.
    * ``extras["absolute_floor"]``: change of ``X_h`` itself, the temporal
      error of the surrogate semi-discrete solution.
    """
    if cfg.mode != "spatial":
        raise ValueError("run_spatial_study needs mode='spatial'")
    spec = cfg.noise_spec() if cfg.stochastic else None
    p = cfg.degree
    ref_ops = _ops(cfg.ref_elements, p)
    ladder_ops = [_ops(n, p) for n in cfg.ladder]
    finest = ladder_ops[int(np.argmax(cfg.ladder))]
    if cfg.ref_steps % 2:
        raise ValueError("ref_steps must be even for the temporal floor estimate")
    n_floor = min(cfg.samples, floor_samples)

    def one(i: int):
        path = _sample_path(cfg, spec, i)
        h0 = None if path is None else path.path_hash
        ref = _final(cfg, ref_ops, cfg.ref_steps, path, 1)
        ex, ey, finest_state = [], [], None
        for ops in ladder_ops:
            _check_coupling(path, h0)
            st = _final(cfg, ops, cfg.ref_steps, path, 1)
            ex.append(estimate_error(ref_ops, ref, ops, st, "X"))
            ey.append(estimate_error(ref_ops, ref, ops, st, "Y"))
            if ops is finest:
                finest_state = st
        floors = (np.nan, np.nan)
        if i < n_floor:
            half = cfg.ref_steps // 2
            ref2 = _final(cfg, ref_ops, half, path, 2)
            fin2 = _final(cfg, finest, half, path, 2)
            d_coupled = (_error_field(ref_ops, ref, finest, finest_state)
                         - _error_field(ref_ops, ref2, finest, fin2))
            floors = (ref_ops.l2_norm(d_coupled),
                      estimate_error(finest, finest_state, finest, fin2, "X"))
        return ex, ey, floors, h0

    out = ordered_map(one, range(cfg.samples), cfg.threads)
    table = ErrorTable(cfg.resolutions(), np.array([o[0] for o in out]).T,
                       np.array([o[1] for o in out]).T, cfg.moment)
    floors = np.array([o[2] for o in out[:n_floor]])
    scale = 1.0 / (2.0 ** (cfg.kappa / 4.0) - 1.0)
    coupled = aggregate(floors[:, 0], cfg.moment)[0] * scale
    absolute = aggregate(floors[:, 1], cfg.moment)[0] * scale
    limit = DOMINANCE_FRACTION * float(table.column("X")[0].min())
    return StudyResult(cfg, table, [o[3] for o in out], coupled, limit,
                       {"k_ref": cfg.T / cfg.ref_steps, "floor_samples": n_floor,
                        "absolute_floor": absolute,
                        "absolute_floor_ok": bool(absolute < limit)})


def run_temporal_study(cfg: StudyConfig) -> StudyResult:
    """Temporal errors at ``t = T`` on one mesh, ladder paths coarsened from the finest.

    The reference floor is the ladder fit extrapolated to ``k_ref``.
    """
    if cfg.mode != "temporal":
        raise ValueError("run_temporal_study needs mode='temporal'")
    spec = cfg.noise_spec() if cfg.stochastic else None
    ops = _ops(cfg.ref_elements, cfg.degree)

    def one(i: int):
        path = _sample_path(cfg, spec, i)
        h0 = None if path is None else path.path_hash
        ref = _final(cfg, ops, cfg.ref_steps, path, 1)
        ex, ey = [], []
        for n in cfg.ladder:
            factor = cfg.ref_steps // n
            if path is not None:
                _check_coupling(path, h0)
                coarse = coarsen(path, factor)
                if not np.allclose(coarse.terminal(), path.terminal(), rtol=0, atol=1e-12):
                    raise CouplingViolation("coarsened path does not reach the same W(T)")
            st = _final(cfg, ops, n, path, factor)
            ex.append(estimate_error(ops, ref, ops, st, "X"))
            ey.append(estimate_error(ops, ref, ops, st, "Y"))
        return ex, ey, h0

    out = ordered_map(one, range(cfg.samples), cfg.threads)
    table = ErrorTable(cfg.resolutions(), np.array([o[0] for o in out]).T,
                       np.array([o[1] for o in out]).T, cfg.moment)
    floor = float(table.fit("X").predict(cfg.T / cfg.ref_steps))
    limit = DOMINANCE_FRACTION * float(table.column("X")[0].min())
    return StudyResult(cfg, table, [o[2] for o in out], floor, limit,
                       {"k_ref": cfg.T / cfg.ref_steps})


def run_study(cfg: StudyConfig) -> StudyResult:
    return run_spatial_study(cfg) if cfg.mode == "spatial" else run_temporal_study(cfg)


def temporal_defaults(**kw) -> StudyConfig:
    """Temporal study defaults: mesh 1/128, steps ``T/2^4 .. T/2^9``, reference ``T/2^13``."""
    base = StudyConfig(mode="temporal", ladder=tuple(2**e for e in range(4, 10)),
                       ref_elements=128, ref_steps=2**13)
    return replace(base, **kw)

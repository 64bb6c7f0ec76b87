"""Backward Euler finite element stepper for the stochastic Cahn-Hilliard equation.

Each step solves the mixed Galerkin system for ``(u, w)``::

    (u - u_prev, chi) + k (w', chi') = (Delta W, chi)
    (w, psi) = (u', psi') + (f(u), psi)

with Newton's method.  Eliminating ``w = A_h u + P_h F(u)`` gives
``u + k A_h^2 u + k A_h P_h F(u) = u_prev + P_h Delta W``.

Two implementations share the same algebra: a compiled whole-trajectory
kernel in :mod:`chcfem._kernels` for production runs and :func:`step`, a
NumPy/SciPy single step used for cross-checking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import _kernels
from .errors import StepFailure
from .mesh_fem import FemOperators, FieldVec, lagrange_basis
from .noise import WienerIncrements, coarsen, increment_loads
from .spectral import SpectralCoeffs, to_fem


def f(v):
    """Double-well nonlinearity ``v^3 - v``."""
    return v**3 - v


def df(v):
    return 3.0 * v**2 - 1.0


def d2f(v):
    return 6.0 * v


def potential(v):
    """``Phi(v) = (v^2 - 1)^2 / 4`` with ``Phi' = f``."""
    return 0.25 * (v**2 - 1.0) ** 2


def default_initial_data(amplitude: float = 0.1, mode: int = 1) -> SpectralCoeffs:
    vals = np.zeros(mode + 1)
    vals[mode] = amplitude
    return SpectralCoeffs(vals)


@dataclass(frozen=True, eq=False)
class SchemeConfig:
    """Discretization parameters of one trajectory.

    ``T`` must be an integer multiple of ``k``.  ``linear=True`` replaces the
    nonlinearity by zero (debug mode used to check the rational semigroup).
    """

    ops: FemOperators
    k: float
    T: float = 0.1
    newton_tol: float = 1e-11
    newton_max_iters: int = 30
    initial_data: SpectralCoeffs = field(default_factory=default_initial_data)
    linear: bool = False

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError("time step k must be positive")
        n = self.T / self.k
        if abs(n - round(n)) > 1e-9 * max(1.0, n) or round(n) < 1:
            raise ValueError(f"T = {self.T} is not an integer multiple of k = {self.k}")
        if self.newton_tol < 1e-13:
            raise ValueError("newton_tol below 1e-13 is not attainable in double precision")
        if self.newton_max_iters < 1:
            raise ValueError("newton_max_iters must be positive")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.k))

    @classmethod
    def from_steps(cls, ops: FemOperators, n_steps: int, T: float = 0.1, **kw) -> "SchemeConfig":
        return cls(ops, T / n_steps, T, **kw)


@dataclass(frozen=True)
class State:
    u: FieldVec
    w: FieldVec
    step_index: int = 0


@dataclass(frozen=True)
class StepReport:
    newton_iterations: int
    final_residual: float
    energy: float
    grad_norm_sq: float
    residual_history: tuple = ()


# ---------------------------------------------------------------------------
# shared precomputation
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class _KernelData:
    p: int
    n_el: int
    phi: np.ndarray
    wq: np.ndarray
    m_loc: np.ndarray
    s_loc: np.ndarray
    mab: np.ndarray
    mpiv: np.ndarray
    inv_lumped: np.ndarray


def kernel_data(ops: FemOperators) -> _KernelData:
    cached = ops.__dict__.get("_kernel_data")
    if cached is not None:
        return cached
    space = ops.space
    p = space.degree
    h = ops.mesh.h
    xi, w = space.quadrature
    phi, dphi = lagrange_basis(p, xi)
    wq = h * w
    m_loc = np.einsum("q,qa,qb->ab", wq, phi, phi)
    s_loc = np.einsum("q,qa,qb->ab", w, dphi, dphi) / h
    n = ops.n
    mab = np.zeros((3 * p + 1, n))
    dense_band = ops.mass.ab  # upper storage, bandwidth p
    for d in range(p + 1):
        diag = dense_band[p - d, d:]
        mab[2 * p - d, d:] = diag          # superdiagonal d
        mab[2 * p + d, : n - d] = diag     # subdiagonal d
    mpiv = np.zeros(n, dtype=np.int64)
    if _kernels.gbtrf(mab, n, p, p, mpiv) != 0:
        raise RuntimeError("mass matrix factorization failed")
    data = _KernelData(p, ops.mesh.n_elements, np.ascontiguousarray(phi), wq, m_loc, s_loc,
                       mab, mpiv, 1.0 / ops.basis_integrals)
    ops.__dict__["_kernel_data"] = data
    return data


def nonlinear_load(ops: FemOperators, u: FieldVec | np.ndarray) -> np.ndarray:
    """``(f(u_h), phi_i)`` by the element quadrature (exact for cubic ``f``)."""
    c = u.coeffs if isinstance(u, FieldVec) else np.asarray(u, dtype=float)
    kd = kernel_data(ops)
    out = np.zeros(ops.n)
    _kernels.nonlinear_load(c, kd.p, kd.n_el, kd.phi, kd.wq, False, out)
    return out


def _weighted_mass(ops: FemOperators, weight_at_quad: np.ndarray) -> sp.csr_matrix:
    kd = kernel_data(ops)
    loc = np.einsum("eq,q,qa,qb->eab", weight_at_quad, kd.wq, kd.phi, kd.phi)
    dofs = ops.space.element_dofs
    rows = np.repeat(dofs[:, :, None], dofs.shape[1], axis=2)
    cols = np.repeat(dofs[:, None, :], dofs.shape[1], axis=1)
    return sp.csr_matrix((loc.ravel(), (rows.ravel(), cols.ravel())), shape=(ops.n, ops.n))


def _at_quad(ops: FemOperators, c: np.ndarray) -> np.ndarray:
    kd = kernel_data(ops)
    return c[ops.space.element_dofs] @ kd.phi.T


# ---------------------------------------------------------------------------
# functionals
# ---------------------------------------------------------------------------

def lyapunov_J(ops: FemOperators, u: FieldVec | np.ndarray) -> float:
    """``(1/2) ||u'||^2 + int Phi(u) dx`` (quadrature exact for polynomial ``Phi``)."""
    c = u.coeffs if isinstance(u, FieldVec) else np.asarray(u, dtype=float)
    kd = kernel_data(ops)
    pot = _kernels.potential_integral(c, kd.p, kd.n_el, kd.phi, kd.wq)
    return 0.5 * float(c @ ops.stiffness.matvec(c)) + float(pot)


def chemical_potential(ops: FemOperators, u: FieldVec) -> FieldVec:
    """Mean-zero discrete chemical potential ``A_h u + P_h P F(u)``.

    Since ``P_h`` preserves constants, ``P_h P F(u) = M^{-1} F - mean(f(u))`` and
    the result equals ``P w`` for the ``w`` of a converged step.
    """
    load = nonlinear_load(ops, u)
    coeffs = ops.solve_mass(ops.stiffness.matvec(u.coeffs) + load) - load.sum()
    return FieldVec(coeffs, 0.0)


def initial_state(cfg: SchemeConfig) -> State:
    ops = cfg.ops
    u0 = to_fem(cfg.initial_data, ops)
    load = np.zeros(ops.n) if cfg.linear else nonlinear_load(ops, u0)
    w0 = ops.field(ops.solve_mass(ops.stiffness.matvec(u0.coeffs) + load))
    return State(u0, w0, 0)


# ---------------------------------------------------------------------------
# reference single step (SciPy)
# ---------------------------------------------------------------------------

def _interleave(u: np.ndarray, w: np.ndarray) -> np.ndarray:
    x = np.empty(2 * u.size)
    x[0::2] = u
    x[1::2] = w
    return x


def _mixed_residual(cfg: SchemeConfig, x: np.ndarray, u_prev: np.ndarray, b: np.ndarray) -> np.ndarray:
    ops = cfg.ops
    u, w = x[0::2], x[1::2]
    F = np.zeros(ops.n) if cfg.linear else nonlinear_load(ops, u)
    r = np.empty_like(x)
    r[0::2] = ops.mass.matvec(u - u_prev) + cfg.k * ops.stiffness.matvec(w) - b
    r[1::2] = ops.mass.matvec(w) - ops.stiffness.matvec(u) - F
    return r


def residual_norm(ops: FemOperators, r: np.ndarray) -> float:
    """Lumped-mass dual norm ``sqrt(sum_i r_i^2 / m_i)`` over both blocks."""
    inv = 1.0 / ops.basis_integrals
    return float(np.sqrt(np.sum((r[0::2] ** 2 + r[1::2] ** 2) * inv)))


def _mixed_jacobian_banded(cfg: SchemeConfig, u: np.ndarray) -> tuple[np.ndarray, int]:
    ops = cfg.ops
    M = ops.mass.to_sparse()
    S = ops.stiffness.to_sparse()
    if cfg.linear:
        Mf = sp.csr_matrix((ops.n, ops.n))
    else:
        Mf = _weighted_mass(ops, df(_at_quad(ops, u)))
    blocks = sp.bmat([[M, cfg.k * S], [-S - Mf, M]], format="csr")
    n = ops.n
    perm = np.empty(2 * n, dtype=int)
    perm[0::2] = np.arange(n)
    perm[1::2] = n + np.arange(n)
    J = blocks[perm][:, perm].toarray()
    bw = 2 * ops.space.degree + 1
    ab = np.zeros((2 * bw + 1, 2 * n))
    for d in range(-bw, bw + 1):
        diag = np.diagonal(J, d)
        if d >= 0:
            ab[bw - d, d:] = diag
        else:
            ab[bw - d, : 2 * n + d] = diag
    return ab, bw


def step(prev: State, noise_load: FieldVec, cfg: SchemeConfig) -> tuple[State, StepReport]:
    """One backward Euler step with damped Newton (pure NumPy/SciPy path).

    ``noise_load`` is ``P_h Delta W_n``.  Raises :class:`StepFailure` carrying
    the residual history when Newton does not reach ``cfg.newton_tol``.
    """
    ops = cfg.ops
    if not noise_load.is_dotted:
        raise ValueError("noise increment must be mean-zero")
    b = ops.mass.matvec(noise_load.coeffs)
    u_prev = prev.u.coeffs
    x = _interleave(prev.u.coeffs, prev.w.coeffs)
    r = _mixed_residual(cfg, x, u_prev, b)
    rn = residual_norm(ops, r)
    history = [rn]
    it = 0
    while rn > cfg.newton_tol:
        if it == cfg.newton_max_iters or not math.isfinite(rn):
            raise StepFailure(f"Newton stalled at residual {rn:.3e} after {it} iterations",
                              prev.step_index + 1, history)
        it += 1
        ab, bw = _mixed_jacobian_banded(cfg, x[0::2])
        dx = sla.solve_banded((bw, bw), ab, -r)
        lam = 1.0
        for _ in range(12):
            trial = x + lam * dx
            r_trial = _mixed_residual(cfg, trial, u_prev, b)
            rn_trial = residual_norm(ops, r_trial)
            if rn_trial < rn:
                break
            lam *= 0.5
        moved = np.max(np.abs(trial - x))
        x, r, rn = trial, r_trial, rn_trial
        history.append(rn)
        if moved <= 4 * np.finfo(float).eps * (1.0 + np.max(np.abs(x))):
            break
    u = ops.field(x[0::2].copy())
    w = ops.field(x[1::2].copy())
    report = StepReport(it, rn, lyapunov_J(ops, u), float(w.coeffs @ ops.stiffness.matvec(w.coeffs)),
                        tuple(history))
    return State(u, w, prev.step_index + 1), report


# ---------------------------------------------------------------------------
# whole trajectories (compiled kernel)
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Trajectory:
    """Checkpointed states and per-step monitors of one run.

    ``energy[n]`` is ``J(u^n)``, ``ah_norm[n]`` is ``||A_h u^n||`` and
    ``dissipation[n]`` is ``sum_{m <= n} k |w^m|_1^2``.
    """

    cfg: SchemeConfig
    checkpoint_steps: np.ndarray
    u: np.ndarray
    w: np.ndarray
    energy: np.ndarray
    ah_norm: np.ndarray
    dissipation: np.ndarray
    newton_iterations: np.ndarray
    final_residuals: np.ndarray

    @property
    def times(self) -> np.ndarray:
        return self.checkpoint_steps * self.cfg.k

    def state(self, i: int = -1) -> State:
        ops = self.cfg.ops
        return State(ops.field(self.u[i].copy()), ops.field(self.w[i].copy()),
                     int(self.checkpoint_steps[i]))

    @property
    def final(self) -> State:
        return self.state(-1)

    def chemical_potential(self, i: int = -1) -> FieldVec:
        return chemical_potential(self.cfg.ops, self.state(i).u)

    @property
    def sup_ah_norm(self) -> float:
        return float(np.max(self.ah_norm))

    @property
    def sup_energy(self) -> float:
        return float(np.max(self.energy))

    def step_reports(self) -> list[StepReport]:
        grad = np.diff(self.dissipation) / self.cfg.k
        return [StepReport(int(self.newton_iterations[n]), float(self.final_residuals[n]),
                           float(self.energy[n + 1]), float(grad[n]))
                for n in range(self.newton_iterations.size)]


def run_trajectory(cfg: SchemeConfig, path: WienerIncrements | None = None,
                   coarsen_factor: int = 1, checkpoints: Sequence[int] | None = None,
                   loads: np.ndarray | None = None) -> Trajectory:
    """Integrate from ``P_h X_0`` for ``cfg.n_steps`` steps.

    ``path`` supplies the noise (``None`` runs without noise); after coarsening
    by ``coarsen_factor`` it must have exactly ``cfg.n_steps`` increments.
    Alternatively ``loads`` passes precomputed load vectors
    ``(Delta W_n, phi_i)``.  ``checkpoints`` are step indices to store (default:
    initial and final state).  Raises :class:`StepFailure` with the failing step
    index and its residual history.
    """
    ops = cfg.ops
    n_steps = cfg.n_steps
    if loads is None:
        if path is None:
            loads = np.zeros((n_steps, ops.n))
        else:
            incs = coarsen(path, coarsen_factor) if coarsen_factor != 1 else path
            if incs.n_fine != n_steps:
                raise ValueError(f"path has {incs.n_fine} increments after coarsening, "
                                 f"scheme needs {n_steps}")
            if abs(incs.T - cfg.T) > 1e-12 * cfg.T:
                raise ValueError("path and scheme cover different time intervals")
            loads = increment_loads(incs, ops)
    loads = np.ascontiguousarray(loads, dtype=float)
    if loads.shape != (n_steps, ops.n):
        raise ValueError(f"loads must have shape {(n_steps, ops.n)}, got {loads.shape}")
    ck = np.array(sorted(set([0, n_steps] if checkpoints is None else checkpoints)), dtype=np.int64)
    if ck.size and (ck[0] < 0 or ck[-1] > n_steps):
        raise ValueError("checkpoint outside [0, n_steps]")

    s0 = initial_state(cfg)
    kd = kernel_data(ops)
    u_out = np.zeros((ck.size, ops.n))
    w_out = np.zeros((ck.size, ops.n))
    iters = np.zeros(n_steps, dtype=np.int64)
    final_res = np.zeros(n_steps)
    energy = np.zeros(n_steps + 1)
    ah = np.zeros(n_steps + 1)
    diss = np.zeros(n_steps + 1)
    fail_hist = np.full(cfg.newton_max_iters + 1, np.nan)
    status, bad = _kernels.run_trajectory(
        s0.u.coeffs, s0.w.coeffs, loads, kd.p, kd.n_el, kd.phi, kd.wq, kd.m_loc, kd.s_loc,
        kd.mab, kd.mpiv, cfg.k, cfg.linear, kd.inv_lumped, cfg.newton_tol,
        cfg.newton_max_iters, ck, u_out, w_out, iters, final_res, energy, ah, diss, fail_hist)
    if status != _kernels.OK:
        reason = {_kernels.NOT_CONVERGED: "Newton did not converge",
                  _kernels.SINGULAR: "singular Newton Jacobian",
                  _kernels.NON_FINITE: "non-finite Newton residual"}[status]
        hist = [float(v) for v in fail_hist if np.isfinite(v)]
        raise StepFailure(f"{reason} at step {bad} of {n_steps} (k = {cfg.k:.3e}); "
                          f"last residual {final_res[bad - 1]:.3e}; the time step may exceed "
                          "the admissible range", int(bad), hist)
    return Trajectory(cfg, ck, u_out, w_out, energy, ah, diss, iters, final_res)

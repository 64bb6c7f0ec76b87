"""Exact-structure checks of the discretization and the noise model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SpecInvalidError
from .mesh_fem import FemOperators, apply_Ah, apply_Ph, apply_Rh, build
from .noise import NoiseSpec, sample_path, validate_spec
from .operator_checks import rational_Ekh
from .scheme import SchemeConfig, run_trajectory
from .spectral import SpectralCoeffs


@dataclass(frozen=True)
class InvariantResult:
    """``value`` compared against ``tolerance``; ``passed`` means ``value <= tolerance``."""

    name: str
    value: float
    tolerance: float
    detail: str = ""

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value <= self.tolerance)

    def row(self) -> dict:
        return {"name": self.name, "value": self.value, "tolerance": self.tolerance,
                "status": "pass" if self.passed else "FAIL", "detail": self.detail}


def mass_conservation(ops: FemOperators, spec: NoiseSpec, n_steps: int = 256, T: float = 0.1,
                      sample_index: int = 0, tol: float = 1e-10) -> InvariantResult:
    """``max_n |int u^n - int u^0|`` along one noisy trajectory."""
    cfg = SchemeConfig.from_steps(ops, n_steps, T)
    traj = run_trajectory(cfg, sample_path(spec, n_steps, T, sample_index),
                          checkpoints=range(n_steps + 1))
    mass = traj.u @ ops.basis_integrals
    return InvariantResult("mass_conservation", float(np.max(np.abs(mass - mass[0]))), tol,
                           f"{n_steps} noisy steps, h = {ops.mesh.h:g}")


def zero_fixed_point(ops: FemOperators, n_steps: int = 64, T: float = 0.1) -> InvariantResult:
    """Zero data without noise stays exactly zero."""
    cfg = SchemeConfig.from_steps(ops, n_steps, T, initial_data=SpectralCoeffs(np.zeros(2)))
    traj = run_trajectory(cfg, None, checkpoints=range(n_steps + 1))
    value = float(max(np.max(np.abs(traj.u)), np.max(np.abs(traj.w))))
    return InvariantResult("zero_fixed_point", value, 0.0, "exact zero required")


def linear_stepper_vs_eigen(ops: FemOperators, n_steps: int = 64, T: float = 0.1,
                            tol: float = 1e-10) -> InvariantResult:
    """Linear-mode stepper against ``(I + k A_h^2)^{-n}`` applied in the eigenbasis."""
    if ops.eigenvalues is None:
        ops = build(ops.mesh.n_elements, ops.space.degree, eigen=True)
    data = SpectralCoeffs(np.array([0.0, 0.1, 0.05, -0.02]))
    cfg = SchemeConfig.from_steps(ops, n_steps, T, initial_data=data, linear=True)
    traj = run_trajectory(cfg, None, checkpoints=range(n_steps + 1))
    u0 = traj.state(0).u
    scale = ops.l2_norm(u0)
    worst = 0.0
    for n in range(n_steps + 1):
        exact = rational_Ekh(n, cfg.k, u0, ops).coeffs
        worst = max(worst, ops.l2_norm(traj.u[n] - exact) / scale)
    return InvariantResult("linear_stepper_vs_eigen", worst, tol,
                           "L2 error relative to ||u^0||, every step")


def ritz_identity(ops: FemOperators, tol: float = 1e-6) -> InvariantResult:
    """``P_h A v = A_h R_h v`` for a smooth mean-zero Neumann function."""
    c1, c3 = 1.0, 0.3

    def v(x):
        return c1 * np.cos(np.pi * x) + c3 * np.cos(3 * np.pi * x)

    def dv(x):
        return -c1 * np.pi * np.sin(np.pi * x) - 3 * c3 * np.pi * np.sin(3 * np.pi * x)

    def av(x):
        return c1 * np.pi**2 * np.cos(np.pi * x) + 9 * c3 * np.pi**2 * np.cos(3 * np.pi * x)

    lhs = apply_Ph(ops, av)
    rhs = apply_Ah(ops, apply_Rh(ops, v, dv))
    rel = ops.l2_norm(lhs.coeffs - rhs.coeffs) / ops.l2_norm(lhs.coeffs)
    return InvariantResult("ritz_identity", rel, tol, "relative L2")


def noise_variance(spec: NoiseSpec, draws: int = 100_000, modes: int = 8, T: float = 0.1,
                   n_se: float = 5.0) -> list[InvariantResult]:
    """Mode-wise increment variance against ``k q_j``, in units of standard errors."""
    small = spec.with_truncation(modes)
    incs = sample_path(small, draws, T, 0)
    k = incs.k_fine
    out = []
    for j in range(1, modes + 1):
        col = incs.table[:, j]
        var = float(np.mean(col**2))
        target = k * small.q[j]
        se = target * np.sqrt(2.0 / draws)
        out.append(InvariantResult(f"noise_variance[j={j}]", float(abs(var - target) / se), n_se,
                                   f"sample {var:.6e} vs k q_j {target:.6e}, in standard errors"))
    return out


def hs_rejection(gamma: float = 4.0) -> InvariantResult:
    """Decay exponents at and below ``gamma - 3/2`` must be rejected."""
    accepted = 0
    for s in (gamma - 1.5, gamma - 1.5 - 0.25):
        try:
            validate_spec(NoiseSpec(gamma, s, 64))
            accepted += 1
        except SpecInvalidError:
            pass
    return InvariantResult("hs_rejection", float(accepted), 0.0,
                           "count of divergent decay exponents that were accepted")


def energy_dissipation(n_elements: int = 64, k: float = 1e-5, T: float = 0.1,
                       degree: int = 1) -> InvariantResult:
    """Largest step-to-step increase of ``J(u^n)`` without noise (must be <= 0)."""
    ops = build(n_elements, degree)
    cfg = SchemeConfig(ops, k, T)
    traj = run_trajectory(cfg, None)
    inc = float(np.max(np.diff(traj.energy)))
    return InvariantResult("energy_dissipation", inc, 0.0,
                           f"{cfg.n_steps} steps, h = {ops.mesh.h:g}, k = {k:g}")


def reproducibility(ops: FemOperators, spec: NoiseSpec, n_steps: int = 64,
                    T: float = 0.1) -> InvariantResult:
    """Two runs from the same seed agree bitwise (value counts differing entries)."""
    cfg = SchemeConfig.from_steps(ops, n_steps, T)
    a = run_trajectory(cfg, sample_path(spec, n_steps, T, 3))
    b = run_trajectory(cfg, sample_path(spec, n_steps, T, 3))
    diff = int(np.count_nonzero(a.u != b.u) + np.count_nonzero(a.w != b.w))
    return InvariantResult("reproducibility", float(diff), 0.0, "differing entries")


def run_invariants(ops: FemOperators, spec: NoiseSpec, n_steps: int = 256, T: float = 0.1,
                   tol: float = 1e-10) -> list[InvariantResult]:
    """The full suite on the given mesh and noise."""
    out = [mass_conservation(ops, spec, n_steps, T, tol=tol),
           zero_fixed_point(ops, min(n_steps, 64), T),
           linear_stepper_vs_eigen(ops, min(n_steps, 64), T, tol=tol),
           ritz_identity(ops)]
    out += noise_variance(spec, T=T)
    out += [hs_rejection(spec.gamma), energy_dissipation(),
            reproducibility(ops, spec, min(n_steps, 64), T)]
    return out

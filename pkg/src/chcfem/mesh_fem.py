"""Continuous Lagrange finite elements on a uniform mesh of the unit interval.

The module assembles the Galerkin mass and stiffness matrices and realises the
discrete operators living on the finite element space: the discrete Neumann
Laplacian ``A_h``, the L2 projection ``P_h``, the Ritz projection ``R_h``, the
mean-removal projection ``P``, fractional powers of ``A_h`` and the associated
discrete norms.

Global degrees of freedom are the Lagrange nodes ordered left to right, so
element ``e`` owns dofs ``e*p, ..., e*p + p`` and the dof coordinates form a
uniform grid of spacing ``h/p``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import EigenSolveError, NonZeroMeanError, UnsupportedDegreeError

SUPPORTED_DEGREES = (1, 2, 3)
DENSE_EIG_LIMIT = 2048

Function1D = Callable[[np.ndarray], np.ndarray]


# ---------------------------------------------------------------------------
# reference element
# ---------------------------------------------------------------------------

def gauss_rule(n_points: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points and weights on the reference interval [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n_points)
    return 0.5 * (x + 1.0), 0.5 * w


def lagrange_basis(p: int, xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values and derivatives of the degree-``p`` Lagrange basis on [0, 1].

    Returns arrays of shape ``(len(xi), p + 1)``; local node ``a`` sits at ``a/p``.
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    nodes = np.linspace(0.0, 1.0, p + 1)
    vals = np.ones((xi.size, p + 1))
    ders = np.zeros((xi.size, p + 1))
    for a in range(p + 1):
        others = [b for b in range(p + 1) if b != a]
        denom = np.prod([nodes[a] - nodes[b] for b in others])
        terms = np.stack([xi - nodes[b] for b in others], axis=1)
        vals[:, a] = np.prod(terms, axis=1) / denom
        for skip in range(p):
            keep = [c for c in range(p) if c != skip]
            ders[:, a] += np.prod(terms[:, keep], axis=1) / denom
    return vals, ders


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Mesh1D:
    """Uniform partition of (0, 1) into ``n_elements`` cells."""

    n_elements: int

    def __post_init__(self):
        if int(self.n_elements) != self.n_elements or self.n_elements < 1:
            raise ValueError(f"n_elements must be a positive integer, got {self.n_elements!r}")

    @property
    def h(self) -> float:
        return 1.0 / self.n_elements

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_elements + 1)


@dataclass(frozen=True)
class FemSpace:
    """Continuous piecewise polynomials of degree ``degree`` on ``mesh``.

    The element quadrature uses ``2*degree + 1`` Gauss points, which integrates
    polynomials up to degree ``4*degree + 1`` exactly; in particular the cubic
    nonlinearity tested against basis functions carries no quadrature error.
    """

    mesh: Mesh1D
    degree: int

    def __post_init__(self):
        if self.degree not in SUPPORTED_DEGREES:
            raise UnsupportedDegreeError(
                f"degree {self.degree!r} not supported; choose one of {SUPPORTED_DEGREES}")

    @property
    def dof_count(self) -> int:
        return self.degree * self.mesh.n_elements + 1

    @property
    def n_quad(self) -> int:
        return 2 * self.degree + 1

    @cached_property
    def quadrature(self) -> tuple[np.ndarray, np.ndarray]:
        return gauss_rule(self.n_quad)

    @cached_property
    def dof_coords(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.dof_count)

    @cached_property
    def element_dofs(self) -> np.ndarray:
        p = self.degree
        return np.arange(self.mesh.n_elements)[:, None] * p + np.arange(p + 1)[None, :]


class SymBanded:
    """Symmetric band matrix in LAPACK upper storage.

    ``ab[bandwidth + i - j, j] = A[i, j]`` for ``i <= j``; this is the layout
    accepted by :func:`scipy.linalg.solveh_banded` and friends.
    """

    def __init__(self, ab: np.ndarray):
        ab = np.asarray(ab, dtype=float)
        self.ab = ab
        self.bandwidth = ab.shape[0] - 1
        self.dimension = ab.shape[1]

    @classmethod
    def from_dense(cls, a: np.ndarray, bandwidth: int) -> "SymBanded":
        n = a.shape[0]
        ab = np.zeros((bandwidth + 1, n))
        for d in range(bandwidth + 1):
            ab[bandwidth - d, d:] = np.diagonal(a, d)
        return cls(ab)

    def to_dense(self) -> np.ndarray:
        u = self.bandwidth
        a = np.zeros((self.dimension, self.dimension))
        for d in range(u + 1):
            diag = self.ab[u - d, d:]
            a += np.diag(diag, d)
            if d:
                a += np.diag(diag, -d)
        return a

    def to_sparse(self) -> sp.csr_matrix:
        u = self.bandwidth
        diags, offsets = [], []
        for d in range(u + 1):
            diags.append(self.ab[u - d, d:])
            offsets.append(d)
            if d:
                diags.append(self.ab[u - d, d:])
                offsets.append(-d)
        return sp.diags(diags, offsets, shape=(self.dimension,) * 2, format="csr")

    def matvec(self, x: np.ndarray) -> np.ndarray:
        """Product with a vector, or with every row of a 2-D array."""
        x = np.asarray(x, dtype=float)
        u = self.bandwidth
        y = self.ab[u] * x
        for d in range(1, u + 1):
            band = self.ab[u - d, d:]
            y[..., :-d] += band * x[..., d:]
            y[..., d:] += band * x[..., :-d]
        return y

    def row_sums(self) -> np.ndarray:
        return self.matvec(np.ones(self.dimension))

    def __matmul__(self, x):
        return self.matvec(x)


def _scatter_banded(local: np.ndarray, element_dofs: np.ndarray, n: int, bw: int) -> SymBanded:
    ab = np.zeros((bw + 1, n))
    nloc = local.shape[0]
    for a in range(nloc):
        for b in range(a, nloc):
            i = element_dofs[:, a]
            j = element_dofs[:, b]
            np.add.at(ab, (bw + i - j, j), local[a, b])
    return SymBanded(ab)


@dataclass(frozen=True)
class FieldVec:
    """Coefficient vector of a finite element function together with its mean.

    ``mean`` is the spatial average ``(I - P)v`` over the unit interval.
    """

    coeffs: np.ndarray
    mean: float

    @property
    def is_dotted(self) -> bool:
        scale = 1.0 + float(np.max(np.abs(self.coeffs), initial=0.0))
        return abs(self.mean) <= 1e-12 * scale

    def __add__(self, other: "FieldVec") -> "FieldVec":
        return FieldVec(self.coeffs + other.coeffs, self.mean + other.mean)

    def __sub__(self, other: "FieldVec") -> "FieldVec":
        return FieldVec(self.coeffs - other.coeffs, self.mean - other.mean)

    def __mul__(self, scalar: float) -> "FieldVec":
        return FieldVec(self.coeffs * scalar, self.mean * scalar)

    __rmul__ = __mul__

    def __neg__(self) -> "FieldVec":
        return FieldVec(-self.coeffs, -self.mean)


@dataclass(frozen=True, eq=False)
class FemOperators:
    """Assembled Galerkin matrices of a :class:`FemSpace`.

    ``eigenvalues``/``eigenvectors`` hold the generalized eigenpairs of
    ``S e = lambda M e`` once :func:`discrete_eigenpairs` has been called; the
    eigenvectors are the columns, M-orthonormal, sorted ascending.
    """

    space: FemSpace
    mass: SymBanded
    stiffness: SymBanded
    eigenvalues: np.ndarray | None = None
    eigenvectors: np.ndarray | None = field(default=None, repr=False)

    @property
    def mesh(self) -> Mesh1D:
        return self.space.mesh

    @property
    def n(self) -> int:
        return self.space.dof_count

    @cached_property
    def basis_integrals(self) -> np.ndarray:
        """``(1, phi_i)``; the mean of a field is ``coeffs @ basis_integrals``."""
        return self.mass.row_sums()

    @cached_property
    def _mass_chol(self) -> np.ndarray:
        return sla.cholesky_banded(self.mass.ab)

    def solve_mass(self, rhs: np.ndarray) -> np.ndarray:
        """``M^{-1} rhs`` for a vector or for the columns of a 2-D array."""
        return sla.cho_solve_banded((self._mass_chol, False), rhs)

    def field(self, coeffs: np.ndarray) -> FieldVec:
        coeffs = np.asarray(coeffs, dtype=float)
        return FieldVec(coeffs, float(coeffs @ self.basis_integrals))

    def constant(self, c: float) -> FieldVec:
        return self.field(np.full(self.n, float(c)))

    def l2_norm(self, v: FieldVec | np.ndarray) -> float:
        c = v.coeffs if isinstance(v, FieldVec) else v
        return float(np.sqrt(max(c @ self.mass.matvec(c), 0.0)))

    def h1_seminorm(self, v: FieldVec | np.ndarray) -> float:
        c = v.coeffs if isinstance(v, FieldVec) else v
        return float(np.sqrt(max(c @ self.stiffness.matvec(c), 0.0)))

    @property
    def eigenpairs(self) -> list[tuple[float, FieldVec]]:
        if self.eigenvalues is None:
            raise EigenSolveError("eigenpairs not computed; call discrete_eigenpairs first")
        return [(float(lam), self.field(self.eigenvectors[:, j]))
                for j, lam in enumerate(self.eigenvalues)]

    def require_eigen(self) -> None:
        if self.eigenvalues is None:
            raise EigenSolveError("eigenpairs not computed; call discrete_eigenpairs first")

    # -- reference-element data used by the quadrature based routines ----
    @cached_property
    def reference_tables(self) -> dict[str, np.ndarray]:
        xi, w = self.space.quadrature
        vals, ders = lagrange_basis(self.space.degree, xi)
        return {"xi": xi, "w": w, "phi": vals, "dphi": ders}


def assemble(mesh: Mesh1D, space: FemSpace | int) -> FemOperators:
    """Assemble mass and stiffness matrices.

    ``space`` may be a :class:`FemSpace` or just the polynomial degree.
    """
    if not isinstance(space, FemSpace):
        space = FemSpace(mesh, int(space))
    if space.mesh != mesh:
        raise ValueError("space was built on a different mesh")
    p = space.degree
    h = mesh.h
    xi, w = space.quadrature
    phi, dphi = lagrange_basis(p, xi)
    m_loc = h * np.einsum("q,qa,qb->ab", w, phi, phi)
    s_loc = np.einsum("q,qa,qb->ab", w, dphi, dphi) / h
    n = space.dof_count
    mass = _scatter_banded(m_loc, space.element_dofs, n, p)
    stiff = _scatter_banded(s_loc, space.element_dofs, n, p)
    return FemOperators(space, mass, stiff)


# ---------------------------------------------------------------------------
# quadrature helpers
# ---------------------------------------------------------------------------

def _element_points(ops: FemOperators, n_quad: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Physical quadrature points (n_el, q), weights (q,), basis values and derivatives."""
    xi, w = gauss_rule(n_quad)
    phi, dphi = lagrange_basis(ops.space.degree, xi)
    h = ops.mesh.h
    x = ops.mesh.nodes[:-1, None] + h * xi[None, :]
    return x, h * w, phi, dphi / h


def load_vector(ops: FemOperators, func: Function1D, n_quad: int = 10) -> np.ndarray:
    """``(func, phi_i)`` for every basis function by Gauss quadrature per element."""
    x, w, phi, _ = _element_points(ops, n_quad)
    fx = np.asarray(func(x), dtype=float) * w[None, :]
    loc = fx @ phi
    out = np.zeros(ops.n)
    np.add.at(out, ops.space.element_dofs, loc)
    return out


def gradient_load(ops: FemOperators, dfunc: Function1D, n_quad: int = 10) -> np.ndarray:
    """``(func', phi_i')`` given the derivative ``dfunc`` of a function."""
    x, w, _, dphi = _element_points(ops, n_quad)
    gx = np.asarray(dfunc(x), dtype=float) * w[None, :]
    loc = gx @ dphi
    out = np.zeros(ops.n)
    np.add.at(out, ops.space.element_dofs, loc)
    return out


def integrate(ops: FemOperators, func: Function1D, n_quad: int = 10) -> float:
    x, w, _, _ = _element_points(ops, n_quad)
    return float(np.sum(np.asarray(func(x)) * w[None, :]))


def interpolate(ops: FemOperators, func: Function1D) -> FieldVec:
    """Nodal (Lagrange) interpolant."""
    return ops.field(np.asarray(func(ops.space.dof_coords), dtype=float))


def evaluate(ops: FemOperators, v: FieldVec | np.ndarray, x: np.ndarray) -> np.ndarray:
    """Point values of a finite element function."""
    c = v.coeffs if isinstance(v, FieldVec) else np.asarray(v)
    x = np.asarray(x, dtype=float)
    n_el = ops.mesh.n_elements
    e = np.clip(np.floor(x * n_el).astype(int), 0, n_el - 1)
    xi = x * n_el - e
    phi, _ = lagrange_basis(ops.space.degree, xi.ravel())
    dofs = ops.space.element_dofs[e.ravel()]
    return np.einsum("ia,ia->i", phi, c[..., dofs] if c.ndim == 1 else c[dofs]).reshape(x.shape)


def l2_error(ops: FemOperators, v: FieldVec | np.ndarray, func: Function1D, n_quad: int = 10) -> float:
    """``||v_h - func||`` by element-wise Gauss quadrature."""
    c = v.coeffs if isinstance(v, FieldVec) else np.asarray(v)
    x, w, phi, _ = _element_points(ops, n_quad)
    vh = c[ops.space.element_dofs] @ phi.T
    diff = vh - np.asarray(func(x))
    return float(np.sqrt(np.sum(diff**2 * w[None, :])))


def prolongation_matrix(coarse: FemOperators, fine: FemOperators) -> sp.csr_matrix:
    """Exact embedding of a coarse space into a nested fine space.

    Requires the fine mesh to refine the coarse one and the fine degree to be at
    least the coarse degree, so that evaluating the coarse basis at the fine
    Lagrange nodes represents every coarse function exactly.
    """
    if fine.mesh.n_elements % coarse.mesh.n_elements or fine.space.degree < coarse.space.degree:
        raise ValueError("spaces are not nested")
    x = fine.space.dof_coords
    n_el = coarse.mesh.n_elements
    e = np.clip(np.floor(x * n_el + 1e-12).astype(int), 0, n_el - 1)
    xi = x * n_el - e
    phi, _ = lagrange_basis(coarse.space.degree, xi)
    rows = np.repeat(np.arange(x.size), phi.shape[1])
    cols = coarse.space.element_dofs[e].ravel()
    mat = sp.csr_matrix((phi.ravel(), (rows, cols)), shape=(fine.n, coarse.n))
    mat.data[np.abs(mat.data) < 1e-14] = 0.0
    mat.eliminate_zeros()
    return mat


# ---------------------------------------------------------------------------
# discrete operators
# ---------------------------------------------------------------------------

def project_P(v: FieldVec) -> FieldVec:
    """Remove the spatial mean (constants are exactly representable)."""
    return FieldVec(v.coeffs - v.mean, 0.0)


def apply_Ph(ops: FemOperators, v, n_quad: int = 10) -> FieldVec:
    """L2 projection onto ``V_h``.

    ``v`` is a callable of ``x``, a :class:`FieldVec` of the same space, or
    spectral coefficients (anything with a ``values`` attribute).
    """
    if isinstance(v, FieldVec):
        return ops.field(ops.solve_mass(ops.mass.matvec(v.coeffs)))
    if hasattr(v, "values"):
        from .spectral import to_fem
        return to_fem(v, ops)
    return ops.field(ops.solve_mass(load_vector(ops, v, n_quad)))


def _bordered_stiffness(ops: FemOperators) -> sp.csc_matrix:
    s = ops.stiffness.to_sparse()
    m = sp.csr_matrix(ops.basis_integrals[None, :])
    return sp.bmat([[s, m.T], [m, None]], format="csc")


def _ritz_solve(ops: FemOperators, rhs: np.ndarray) -> np.ndarray:
    lu = ops.__dict__.get("_ritz_lu")
    if lu is None:
        lu = spla.splu(_bordered_stiffness(ops))
        ops.__dict__["_ritz_lu"] = lu
    sol = lu.solve(np.append(rhs, 0.0))
    return sol[:-1]


def apply_Rh(ops: FemOperators, v, dv: Function1D | None = None, n_quad: int = 10) -> FieldVec:
    """Ritz projection onto the mean-zero subspace of ``V_h``.

    ``v`` is either a :class:`FieldVec` of this space or a callable, in which
    case ``dv`` (its derivative) supplies the gradient pairing ``a(v, chi)``.
    The mean constraint enters through a Lagrange multiplier row.
    """
    if isinstance(v, FieldVec):
        if not v.is_dotted:
            raise NonZeroMeanError("R_h is defined on mean-zero functions")
        rhs = ops.stiffness.matvec(v.coeffs)
    else:
        if dv is None:
            raise ValueError("a callable input needs its derivative for the gradient pairing")
        mean = integrate(ops, v, n_quad)
        scale = 1.0 + np.sqrt(integrate(ops, lambda x: np.asarray(v(x)) ** 2, n_quad))
        if abs(mean) > 1e-10 * scale:
            raise NonZeroMeanError(f"R_h is defined on mean-zero functions (mean {mean:.3e})")
        rhs = gradient_load(ops, dv, n_quad)
    return ops.field(_ritz_solve(ops, rhs))


def apply_Ah(ops: FemOperators, v: FieldVec) -> FieldVec:
    """Discrete Laplacian ``M^{-1} S v``; the result is always mean-zero."""
    out = ops.solve_mass(ops.stiffness.matvec(v.coeffs))
    return FieldVec(out, 0.0)


def discrete_eigenpairs(ops: FemOperators) -> FemOperators:
    """Solve ``S e = lambda M e`` and return operators carrying the eigenpairs.

    Dense generalized solve for up to ``DENSE_EIG_LIMIT`` dofs; larger problems
    go through the banded Cholesky factor of ``M`` and a reduced standard
    symmetric problem.  ``lambda_0`` is pinned to zero with the constant unit
    vector as eigenvector.
    """
    if ops.eigenvalues is not None:
        return ops
    n = ops.n
    try:
        if n <= DENSE_EIG_LIMIT:
            lam, vec = sla.eigh(ops.stiffness.to_dense(), ops.mass.to_dense())
        else:
            # scipy exposes no banded generalized solver; reduce with L^{-1} S L^{-T}
            lower_ab = sla.cholesky_banded(_upper_to_lower(ops.mass.ab), lower=True)
            lfac = np.zeros((n, n))
            for d in range(ops.mass.bandwidth + 1):
                lfac += np.diag(lower_ab[d, : n - d], -d)
            tmp = sla.solve_triangular(lfac, ops.stiffness.to_dense(), lower=True)
            red = sla.solve_triangular(lfac, tmp.T, lower=True)
            red = 0.5 * (red + red.T)
            lam, y = sla.eigh(red)
            vec = sla.solve_triangular(lfac.T, y, lower=False)
    except (np.linalg.LinAlgError, ValueError) as exc:
        cond = np.linalg.cond(ops.mass.to_dense()) if n <= 4096 else float("nan")
        raise EigenSolveError(f"generalized eigensolve failed for n={n}: {exc}; "
                              f"cond(M) = {cond:.3e}") from exc
    order = np.argsort(lam)
    lam = lam[order]
    vec = vec[:, order]
    lam[0] = 0.0
    vec[:, 0] = 1.0
    # fix the sign convention: positive weight at the left end
    signs = np.where(vec[0, 1:] < 0, -1.0, 1.0)
    vec[:, 1:] *= signs
    return replace(ops, eigenvalues=lam, eigenvectors=vec)


def _upper_to_lower(ab: np.ndarray) -> np.ndarray:
    """Convert symmetric upper band storage to lower band storage."""
    u = ab.shape[0] - 1
    n = ab.shape[1]
    low = np.zeros_like(ab)
    for d in range(u + 1):
        low[d, : n - d] = ab[u - d, d:]
    return low


def eigen_coefficients(ops: FemOperators, v: FieldVec | np.ndarray) -> np.ndarray:
    """Coordinates ``(v, e_{j,h})`` in the M-orthonormal eigenbasis."""
    ops.require_eigen()
    c = v.coeffs if isinstance(v, FieldVec) else np.asarray(v)
    return ops.eigenvectors.T @ ops.mass.matvec(c)


def from_eigen_coefficients(ops: FemOperators, coef: np.ndarray) -> FieldVec:
    return ops.field(ops.eigenvectors @ coef)


def _require_mean_zero(v: FieldVec, alpha: float) -> None:
    if alpha < 0 and not v.is_dotted:
        raise NonZeroMeanError(f"negative power {alpha} needs a mean-zero field (mean {v.mean:.3e})")


def spectral_multiplier(ops: FemOperators, v: FieldVec, multiplier: np.ndarray,
                        keep_mean: bool) -> FieldVec:
    """Apply ``sum_j m_j (v, e_j) e_j`` over j >= 1, optionally passing the mean through."""
    coef = eigen_coefficients(ops, v)
    out = np.zeros_like(coef)
    out[1:] = multiplier[1:] * coef[1:]
    if keep_mean:
        out[0] = coef[0]
    return from_eigen_coefficients(ops, out)


def frac_power_apply(ops: FemOperators, alpha: float, v: FieldVec) -> FieldVec:
    """``A_h^alpha v``; the mean passes through only for ``alpha == 0``."""
    ops.require_eigen()
    _require_mean_zero(v, alpha)
    if alpha == 0:
        return ops.field(v.coeffs.copy())
    lam = ops.eigenvalues.copy()
    lam[0] = 1.0
    return spectral_multiplier(ops, v, lam**alpha, keep_mean=False)


def discrete_norm(ops: FemOperators, alpha: float, v: FieldVec) -> float:
    """``|v|_{alpha,h} = ||A_h^{alpha/2} v||``."""
    ops.require_eigen()
    _require_mean_zero(v, alpha)
    coef = eigen_coefficients(ops, v)
    if alpha == 0:
        return float(np.sqrt(np.sum(coef**2)))
    lam = ops.eigenvalues[1:]
    return float(np.sqrt(np.sum(lam**alpha * coef[1:] ** 2)))


def build(n_elements: int, degree: int = 1, eigen: bool = False) -> FemOperators:
    """Shorthand: mesh, space and assembled operators in one call."""
    mesh = Mesh1D(n_elements)
    ops = assemble(mesh, FemSpace(mesh, degree))
    return discrete_eigenpairs(ops) if eigen else ops

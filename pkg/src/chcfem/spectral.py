"""Neumann cosine eigenbasis of the continuum Laplacian on (0, 1).

The operator ``A = -d^2/dx^2`` with homogeneous Neumann conditions has the
orthonormal eigenfunctions ``e_0 = 1`` and ``e_j = sqrt(2) cos(j pi x)`` with
eigenvalues ``(j pi)^2``.  Functions are represented by their coefficients in
this basis; this module applies the continuum semigroup ``exp(-t A^2)`` and
fractional powers exactly and transfers spectral functions to finite element
spaces through exact load vectors.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.fft import dct

from .errors import NonZeroMeanError

_LOAD_CACHE_ATTR = "_spectral_load_cache"
_MODE_CHUNK = 512


@dataclass(frozen=True)
class SpectralBasis:
    """The first ``J + 1`` Neumann eigenpairs (modes ``0..J``)."""

    J: int

    def __post_init__(self):
        if self.J < 0:
            raise ValueError("truncation J must be non-negative")

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        return (np.arange(self.J + 1) * np.pi) ** 2

    def evaluate(self, x: np.ndarray, modes: np.ndarray | None = None) -> np.ndarray:
        """Basis values, shape ``x.shape + (n_modes,)``."""
        j = np.arange(self.J + 1) if modes is None else np.asarray(modes)
        x = np.asarray(x, dtype=float)
        vals = np.sqrt(2.0) * np.cos(np.pi * x[..., None] * j)
        vals[..., j == 0] = 1.0
        return vals


@dataclass(frozen=True)
class SpectralCoeffs:
    """Coefficients ``(v, e_j)`` for ``j = 0..J``."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1:
            raise ValueError("spectral coefficients must be a 1-D array")
        if not np.all(np.isfinite(vals)):
            raise ValueError("spectral coefficients must be finite")
        object.__setattr__(self, "values", vals)

    @property
    def J(self) -> int:
        return self.values.size - 1

    @property
    def basis(self) -> SpectralBasis:
        return SpectralBasis(self.J)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        """Point values of the represented function."""
        return self.basis.evaluate(x) @ self.values

    def derivative(self, x: np.ndarray) -> np.ndarray:
        j = np.arange(self.J + 1)
        x = np.asarray(x, dtype=float)
        d = -np.sqrt(2.0) * j * np.pi * np.sin(np.pi * x[..., None] * j)
        return d @ self.values

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.values**2)))

    def __add__(self, other: "SpectralCoeffs") -> "SpectralCoeffs":
        a, b = _pad(self.values, other.values)
        return SpectralCoeffs(a + b)

    def __sub__(self, other: "SpectralCoeffs") -> "SpectralCoeffs":
        a, b = _pad(self.values, other.values)
        return SpectralCoeffs(a - b)

    def __mul__(self, scalar: float) -> "SpectralCoeffs":
        return SpectralCoeffs(self.values * scalar)

    __rmul__ = __mul__


def _pad(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = max(a.size, b.size)
    return np.pad(a, (0, n - a.size)), np.pad(b, (0, n - b.size))


def single_mode(j: int, J: int | None = None, amplitude: float = 1.0) -> SpectralCoeffs:
    vals = np.zeros((j if J is None else J) + 1)
    vals[j] = amplitude
    return SpectralCoeffs(vals)


def semigroup_E(t: float, c: SpectralCoeffs) -> SpectralCoeffs:
    """Continuum semigroup ``exp(-t A^2)``; the 0-mode passes through."""
    if t < 0:
        raise ValueError(f"semigroup time must be non-negative, got {t}")
    lam = c.basis.eigenvalues
    return SpectralCoeffs(np.exp(-t * lam**2) * c.values)


def frac_power_spectral(alpha: float, c: SpectralCoeffs) -> SpectralCoeffs:
    """``A^alpha`` mode by mode; ``alpha = 0`` is the identity."""
    if alpha == 0:
        return SpectralCoeffs(c.values.copy())
    if alpha < 0 and c.values[0] != 0.0:
        raise NonZeroMeanError("negative powers of A need a mean-zero argument")
    lam = c.basis.eigenvalues.copy()
    lam[0] = 1.0
    out = lam**alpha * c.values
    out[0] = 0.0
    return SpectralCoeffs(out)


def spectral_norm(beta: float, c: SpectralCoeffs) -> float:
    """``|v|_beta = ||A^{beta/2} v||``."""
    return frac_power_spectral(beta / 2.0, c).norm()


# ---------------------------------------------------------------------------
# transfer to finite element spaces
# ---------------------------------------------------------------------------

def _p1_loads(values: np.ndarray, n_elements: int) -> np.ndarray:
    """Exact P1 loads ``(sum_j c_j e_j, phi_i)`` for rows of ``values``.

    For the hat function at node ``x_i`` one has
    ``(cos(j pi x), phi_i) = m_i h sinc^2(j pi h / 2) cos(j pi x_i)`` with
    ``m_i = 1/2`` at the two boundary nodes and 1 otherwise.  Since
    ``cos(j pi i / N)`` is ``2N``-periodic and even in ``j``, the modes fold onto
    ``0..N`` and the sum becomes a type-I DCT.
    """
    N = n_elements
    h = 1.0 / N
    J = values.shape[-1] - 1
    j = np.arange(J + 1)
    theta = 0.5 * j * np.pi * h
    sinc2 = np.ones(J + 1)
    nz = j > 0
    sinc2[nz] = (np.sin(theta[nz]) / theta[nz]) ** 2
    weight = sinc2 * np.where(j == 0, 1.0, np.sqrt(2.0))
    d_full = values * weight
    r = j % (2 * N)
    folded_index = np.where(r <= N, r, 2 * N - r)
    fold = sp.csr_matrix((np.ones(J + 1), (j, folded_index)), shape=(J + 1, N + 1))
    d = np.asarray((fold.T @ d_full.T).T)
    x = d.copy()
    x[..., 1:-1] *= 0.5
    loads = dct(x, type=1, axis=-1)
    loads *= h
    loads[..., 0] *= 0.5
    loads[..., -1] *= 0.5
    return loads


def load_matrix(ops, J: int) -> np.ndarray:
    """Dense ``L[i, j] = (e_j, phi_i)`` by composite 10-point Gauss quadrature.

    Each element is split into ``ceil(J h)`` sub-intervals so that every sub-cell
    sees at most about half a period of the fastest mode.
    """
    from .mesh_fem import gauss_rule, lagrange_basis

    cache = ops.__dict__.setdefault(_LOAD_CACHE_ATTR, {})
    if J in cache:
        return cache[J]
    h = ops.mesh.h
    n_sub = max(1, int(np.ceil(J * h)))
    xi, w = gauss_rule(10)
    sub_xi = ((np.arange(n_sub)[:, None] + xi[None, :]) / n_sub).ravel()
    sub_w = np.tile(w, n_sub) / n_sub
    phi, _ = lagrange_basis(ops.space.degree, sub_xi)
    x = ops.mesh.nodes[:-1, None] + h * sub_xi[None, :]
    dofs = ops.space.element_dofs
    out = np.zeros((ops.n, J + 1))
    basis = SpectralBasis(J)
    for start in range(0, J + 1, _MODE_CHUNK):
        modes = np.arange(start, min(J + 1, start + _MODE_CHUNK))
        ev = basis.evaluate(x, modes) * (h * sub_w)[None, :, None]
        loc = np.einsum("eqm,qa->eam", ev, phi)
        block = np.zeros((ops.n, modes.size))
        for a in range(phi.shape[1]):
            np.add.at(block, dofs[:, a], loc[:, a, :])
        out[:, modes] = block
    out.setflags(write=False)
    cache[J] = out
    return out


def spectral_loads(values: np.ndarray, ops) -> np.ndarray:
    """Load vectors ``(sum_j c_j e_j, phi_i)`` for a coefficient vector or table.

    ``values`` has shape ``(J + 1,)`` or ``(rows, J + 1)``; the result has the
    matching shape with the last axis replaced by the dof count.
    """
    values = np.asarray(values, dtype=float)
    if ops.space.degree == 1:
        return _p1_loads(values, ops.mesh.n_elements)
    L = load_matrix(ops, values.shape[-1] - 1)
    return values @ L.T


def to_fem(c: SpectralCoeffs, ops):
    """L2 projection ``P_h`` of a spectral function onto the FEM space."""
    loads = spectral_loads(c.values, ops)
    return ops.field(ops.solve_mass(loads))

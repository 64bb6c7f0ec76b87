"""Q-Wiener increments in the Neumann cosine basis.

The covariance is diagonal, ``Q e_j = q_j e_j`` with ``q_j = scale * lambda_j^{-s}``
and ``q_0 = 0`` so the noise carries no mass.  In one dimension
``lambda_j ~ j^2`` and ``||A^{(gamma-2)/2} Q^{1/2}||_HS^2 = sum_j lambda_j^{gamma-2} q_j``
is finite iff ``s > gamma - 3/2``.

Increments are drawn from a counter-based generator: the Philox key is built
from ``(master_seed, sample_index, step)`` and mode ``j`` takes the ``j``-th
normal of that stream, so an entry is a pure function of
``(seed, sample, step, mode)``.  It does not depend on evaluation order, on the
truncation ``J`` (prefix property) or on the number of steps.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import SpecInvalidError
from .mesh_fem import FemOperators, FieldVec
from .spectral import spectral_loads

DEFAULT_DECAY_EPS = 0.01
GAMMA_RANGE = (3.0, 4.0)
TAIL_TOL = 1e-6
_STEP_BITS = 32


def default_decay(gamma: float, eps: float = DEFAULT_DECAY_EPS) -> float:
    """Smallest admissible decay exponent plus ``eps``: ``gamma - 3/2 + eps``."""
    return gamma - 1.5 + eps


def default_truncation(finest_dofs: int) -> int:
    return 4 * int(finest_dofs)


@dataclass(frozen=True)
class NoiseSpec:
    """Diagonal power-law covariance ``q_j = noise_scale * lambda_j^{-decay_s}``.

    ``decay_s=None`` selects :func:`default_decay`.
    """

    gamma: float = 4.0
    decay_s: float | None = None
    J: int = 2048
    master_seed: int = 0
    noise_scale: float = 1.0
    decay_eps: float = DEFAULT_DECAY_EPS

    def __post_init__(self):
        if self.decay_s is None:
            object.__setattr__(self, "decay_s", default_decay(self.gamma, self.decay_eps))
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError("master_seed must fit in an unsigned 64-bit integer")
        if self.J < 1:
            raise ValueError("truncation J must be at least 1")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be non-negative")

    @property
    def eigenvalues(self) -> np.ndarray:
        return (np.arange(self.J + 1) * np.pi) ** 2

    @property
    def q(self) -> np.ndarray:
        lam = self.eigenvalues
        out = np.zeros(self.J + 1)
        out[1:] = self.noise_scale * lam[1:] ** (-self.decay_s)
        return out

    def with_truncation(self, J: int) -> "NoiseSpec":
        return NoiseSpec(self.gamma, self.decay_s, J, self.master_seed,
                         self.noise_scale, self.decay_eps)

    def describe(self) -> dict:
        return {"family": "power_law_cosine", "gamma": self.gamma, "decay_s": self.decay_s,
                "J": self.J, "master_seed": int(self.master_seed),
                "noise_scale": self.noise_scale}


@dataclass(frozen=True)
class SpecReport:
    hs_sum: float
    hs_tail_bound: float
    trace: float
    trace_tail_bound: float

    @property
    def trace_tail_relative(self) -> float:
        return self.trace_tail_bound / self.trace if self.trace > 0 else 0.0

    @property
    def truncation_ok(self) -> bool:
        return self.trace_tail_relative < TAIL_TOL


def _power_tail(a: float, J: int) -> float:
    """Integral bound of ``sum_{j>J} (j pi)^{2a}`` for ``2a < -1``."""
    return np.pi ** (2 * a) * J ** (2 * a + 1) / (-(2 * a + 1))


def validate_spec(spec: NoiseSpec) -> SpecReport:
    """Check the Hilbert-Schmidt condition and report truncated sums.

    Raises :class:`SpecInvalidError` when ``gamma`` leaves ``[3, 4]`` or when
    ``decay_s <= gamma - 3/2``, where the series diverges.
    """
    lo, hi = GAMMA_RANGE
    if not lo <= spec.gamma <= hi:
        raise SpecInvalidError(f"gamma = {spec.gamma} outside the admissible range [{lo}, {hi}]")
    a = spec.gamma - 2.0 - spec.decay_s
    if 2 * a >= -1:
        raise SpecInvalidError(
            f"decay_s = {spec.decay_s} <= gamma - 1.5 = {spec.gamma - 1.5}: "
            "the Hilbert-Schmidt series diverges")
    lam = spec.eigenvalues[1:]
    q = spec.q[1:]
    hs = float(np.sum(lam ** (spec.gamma - 2.0) * q))
    return SpecReport(
        hs_sum=hs,
        hs_tail_bound=spec.noise_scale * _power_tail(a, spec.J),
        trace=float(np.sum(q)),
        trace_tail_bound=spec.noise_scale * _power_tail(-spec.decay_s, spec.J),
    )


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def standard_normals(master_seed: int, sample_index: int, steps: np.ndarray | range,
                     n_modes: int) -> np.ndarray:
    """Standard normals ``xi[step, mode]`` from per-step Philox streams."""
    if not 0 <= sample_index < 2 ** (64 - _STEP_BITS):
        raise ValueError("sample_index out of range")
    steps = np.asarray(steps, dtype=np.uint64)
    out = np.empty((steps.size, n_modes))
    base = np.uint64(sample_index) << np.uint64(_STEP_BITS)
    seed = np.uint64(master_seed)
    for row, step in enumerate(steps):
        if step >= 2**_STEP_BITS:
            raise ValueError("step index out of range")
        bitgen = np.random.Philox(key=np.array([seed, base | step], dtype=np.uint64))
        out[row] = np.random.Generator(bitgen).standard_normal(n_modes)
    return out


@dataclass(frozen=True, eq=False)
class WienerIncrements:
    """Table of increments ``table[n, j] = (W(t_{n+1}) - W(t_n), e_j)``.

    Column 0 is identically zero.  The table is read-only.
    """

    spec: NoiseSpec
    sample_index: int
    T: float
    table: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.table.setflags(write=False)

    @property
    def n_fine(self) -> int:
        return self.table.shape[0]

    @property
    def k_fine(self) -> float:
        return self.T / self.n_fine

    @property
    def J(self) -> int:
        return self.table.shape[1] - 1

    @property
    def path_hash(self) -> str:
        h = hashlib.blake2b(digest_size=16)
        h.update(struct.pack("<3Q", self.J, self.n_fine, int(self.spec.master_seed)))
        h.update(np.ascontiguousarray(self.table, dtype="<f8").tobytes())
        return h.hexdigest()

    def terminal(self) -> np.ndarray:
        """Spectral coefficients of ``W(T)``."""
        return self.table.sum(axis=0)


def sample_path(spec: NoiseSpec, n_fine: int, T: float, sample_index: int) -> WienerIncrements:
    """Increments on ``n_fine`` uniform steps of ``[0, T]``."""
    if n_fine < 1:
        raise ValueError("n_fine must be at least 1")
    k = T / n_fine
    xi = standard_normals(spec.master_seed, sample_index, range(n_fine), spec.J + 1)
    table = xi * np.sqrt(k * spec.q)[None, :]
    return WienerIncrements(spec, sample_index, T, table)


def _pairwise_halve(table: np.ndarray) -> np.ndarray:
    return table[0::2] + table[1::2]


def _prime_factors(n: int) -> list[int]:
    out, d = [], 2
    while d * d <= n:
        while n % d == 0:
            out.append(d)
            n //= d
        d += 1
    if n > 1:
        out.append(n)
    return out


def coarsen(incs: WienerIncrements, factor: int) -> WienerIncrements:
    """Sum blocks of ``factor`` consecutive increments.

    Blocks are summed through a tree over the prime factors of ``factor`` taken
    in ascending order, so ``coarsen(coarsen(w, 2), 2)`` and ``coarsen(w, 4)``
    perform the same floating point additions and agree bitwise.
    """
    factor = int(factor)
    if factor < 1 or incs.n_fine % factor:
        raise ValueError(f"factor {factor} does not divide n_fine = {incs.n_fine}")
    table = np.array(incs.table)
    for f in _prime_factors(factor):
        if f == 2:
            table = _pairwise_halve(table)
        else:
            table = table.reshape(-1, f, table.shape[1])
            acc = table[:, 0].copy()
            for i in range(1, f):
                acc += table[:, i]
            table = acc
    return WienerIncrements(incs.spec, incs.sample_index, incs.T, table)


def increment_loads(incs: WienerIncrements, ops: FemOperators) -> np.ndarray:
    """Load vectors ``(Delta W_n, phi_i)`` for every step, shape ``(n_steps, dofs)``."""
    return spectral_loads(incs.table, ops)


def increment_to_fem(incs: WienerIncrements, n: int, ops: FemOperators) -> FieldVec:
    """``P_h Delta W_n`` as a finite element field (mean zero)."""
    loads = spectral_loads(incs.table[n], ops)
    coeffs = ops.solve_mass(loads)
    return FieldVec(coeffs, float(loads.sum()))


# ---------------------------------------------------------------------------
# binary dump
# ---------------------------------------------------------------------------

def write_path(incs: WienerIncrements, path: str | Path) -> None:
    """Header of three little-endian uint64 ``(J, n_fine, seed)``, then row-major float64."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<3Q", incs.J, incs.n_fine, int(incs.spec.master_seed)))
        fh.write(np.ascontiguousarray(incs.table, dtype="<f8").tobytes())


def read_path(path: str | Path) -> tuple[int, int, int, np.ndarray]:
    """Inverse of :func:`write_path`: ``(J, n_fine, seed, table)``."""
    raw = Path(path).read_bytes()
    J, n_fine, seed = struct.unpack("<3Q", raw[:24])
    table = np.frombuffer(raw[24:], dtype="<f8").reshape(n_fine, J + 1)
    return J, n_fine, seed, table

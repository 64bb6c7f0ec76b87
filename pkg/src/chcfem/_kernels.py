"""Compiled inner loops for the backward Euler / Newton stepper.

The mixed unknowns are interleaved, ``x[2i] = u_i`` and ``x[2i+1] = w_i``, and the
equations likewise (``w`` equation first), so the 2x2 block Jacobian is a band matrix with ``kl = ku = 2p + 1``.  It is factored by
an unblocked LU with partial pivoting in LAPACK ``gbtrf`` storage:
``A[i, j]`` lives at ``ab[kl + ku + i - j, j]`` and the first ``kl`` rows hold
fill-in.

Status codes returned by :func:`run_trajectory`: 0 success, 1 Newton did not
converge, 2 singular Jacobian, 3 non-finite residual.
"""

from __future__ import annotations

import numpy as np
from numba import njit

OK = 0
NOT_CONVERGED = 1
SINGULAR = 2
NON_FINITE = 3


@njit(cache=True, nogil=True, error_model="numpy")
def gbtrf(ab, n, kl, ku, ipiv):
    """In-place band LU; returns 0 or the 1-based index of a zero pivot."""
    kv = kl + ku
    ju = 0
    for j in range(n):
        km = min(kl, n - 1 - j)
        jp = 0
        vmax = abs(ab[kv, j])
        for i in range(1, km + 1):
            v = abs(ab[kv + i, j])
            if v > vmax:
                vmax = v
                jp = i
        ipiv[j] = j + jp
        if ab[kv + jp, j] == 0.0:
            return j + 1
        ju = max(ju, min(j + ku + jp, n - 1))
        if jp != 0:
            for c in range(j, ju + 1):
                r1 = kv + j - c
                r2 = r1 + jp
                tmp = ab[r1, c]
                ab[r1, c] = ab[r2, c]
                ab[r2, c] = tmp
        if km > 0:
            inv = 1.0 / ab[kv, j]
            for i in range(1, km + 1):
                ab[kv + i, j] *= inv
            for c in range(j + 1, ju + 1):
                ujc = ab[kv + j - c, c]
                if ujc != 0.0:
                    base = kv + j - c
                    for i in range(1, km + 1):
                        ab[base + i, c] -= ab[kv + i, j] * ujc
    return 0


@njit(cache=True, nogil=True, error_model="numpy")
def gbtrs(ab, n, kl, ku, ipiv, b):
    """Solve with the factors from :func:`gbtrf`; ``b`` is overwritten."""
    kv = kl + ku
    for j in range(n - 1):
        km = min(kl, n - 1 - j)
        piv = ipiv[j]
        if piv != j:
            tmp = b[piv]
            b[piv] = b[j]
            b[j] = tmp
        bj = b[j]
        if bj != 0.0:
            for i in range(1, km + 1):
                b[j + i] -= ab[kv + i, j] * bj
    for j in range(n - 1, -1, -1):
        b[j] /= ab[kv, j]
        bj = b[j]
        lm = min(j, kv)
        for i in range(1, lm + 1):
            b[j - i] -= ab[kv - i, j] * bj


@njit(cache=True, nogil=True, error_model="numpy")
def banded_matvec(loc, p, n_el, x, out):
    """``out = K x`` for the global matrix assembled from one local matrix."""
    for i in range(out.size):
        out[i] = 0.0
    for e in range(n_el):
        o = e * p
        for a in range(p + 1):
            s = 0.0
            for b in range(p + 1):
                s += loc[a, b] * x[o + b]
            out[o + a] += s


@njit(cache=True, nogil=True, error_model="numpy")
def nonlinear_load(u, p, n_el, phi, wq, linear, out):
    """``out_i = (f(u_h), phi_i)`` with ``f(s) = s^3 - s``; zero in linear mode."""
    for i in range(out.size):
        out[i] = 0.0
    if linear:
        return
    nq = wq.size
    for e in range(n_el):
        o = e * p
        for q in range(nq):
            uq = 0.0
            for a in range(p + 1):
                uq += phi[q, a] * u[o + a]
            fq = wq[q] * (uq * uq * uq - uq)
            for a in range(p + 1):
                out[o + a] += fq * phi[q, a]


@njit(cache=True, nogil=True, error_model="numpy")
def potential_integral(u, p, n_el, phi, wq):
    """``int (u_h^2 - 1)^2 / 4 dx``; exact with ``2p + 1`` Gauss points."""
    total = 0.0
    nq = wq.size
    for e in range(n_el):
        o = e * p
        for q in range(nq):
            uq = 0.0
            for a in range(p + 1):
                uq += phi[q, a] * u[o + a]
            s = uq * uq - 1.0
            total += wq[q] * 0.25 * s * s
    return total


@njit(cache=True, nogil=True, error_model="numpy")
def constant_jacobian(ab, p, n_el, m_loc, s_loc, k):
    """Fill ``ab`` with the state-independent Jacobian part.

    Row ``2i`` is the ``w`` equation (``-S`` on u, ``M`` on w), row ``2i+1`` the
    ``u`` equation (``M`` on u, ``kS`` on w); columns follow ``x``.
    """
    kv = 2 * (2 * p + 1)
    ab[:, :] = 0.0
    for e in range(n_el):
        o = e * p
        for a in range(p + 1):
            rw = 2 * (o + a)
            ru = rw + 1
            for b in range(p + 1):
                cu = 2 * (o + b)
                cw = cu + 1
                ab[kv + ru - cu, cu] += m_loc[a, b]
                ab[kv + ru - cw, cw] += k * s_loc[a, b]
                ab[kv + rw - cu, cu] -= s_loc[a, b]
                ab[kv + rw - cw, cw] += m_loc[a, b]


@njit(cache=True, nogil=True, error_model="numpy")
def _add_fprime_block(ab, x, p, n_el, phi, wq):
    """Subtract the ``f'(u)``-weighted mass matrix from the (w, u) block."""
    kv = 2 * (2 * p + 1)
    nq = wq.size
    for e in range(n_el):
        o = e * p
        for q in range(nq):
            uq = 0.0
            for a in range(p + 1):
                uq += phi[q, a] * x[2 * (o + a)]
            g = wq[q] * (3.0 * uq * uq - 1.0)
            for a in range(p + 1):
                ga = g * phi[q, a]
                rw = 2 * (o + a)
                for b in range(p + 1):
                    cu = 2 * (o + b)
                    ab[kv + rw - cu, cu] -= ga * phi[q, b]


@njit(cache=True, nogil=True, error_model="numpy")
def mixed_residual(x, u_prev, load, p, n_el, phi, wq, m_loc, s_loc, k, linear,
                   inv_lumped, res):
    """Mixed residual of the interleaved iterate ``x`` into ``res``.

    Rows ``2i``: ``M w - S u - F(u)``; rows ``2i+1``: ``M (u - u_prev) + k S w - b``.
    Putting the stiff ``w`` equation first places the dominant entries ``-S`` on
    the diagonal, so partial pivoting rarely swaps rows.
    Returns the lumped-mass dual norm ``sqrt(sum_i r_i^2 / m_i)``.
    """
    nd = u_prev.size
    nq = wq.size
    for i in range(nd):
        res[2 * i] = 0.0
        res[2 * i + 1] = -load[i]
    for e in range(n_el):
        o = e * p
        for a in range(p + 1):
            ru = 0.0
            rw = 0.0
            for b in range(p + 1):
                ub = x[2 * (o + b)]
                wb = x[2 * (o + b) + 1]
                ru += m_loc[a, b] * (ub - u_prev[o + b]) + k * s_loc[a, b] * wb
                rw += m_loc[a, b] * wb - s_loc[a, b] * ub
            res[2 * (o + a)] += rw
            res[2 * (o + a) + 1] += ru
        if not linear:
            for q in range(nq):
                uq = 0.0
                for a in range(p + 1):
                    uq += phi[q, a] * x[2 * (o + a)]
                fq = wq[q] * (uq * uq * uq - uq)
                for a in range(p + 1):
                    res[2 * (o + a)] -= fq * phi[q, a]
    acc = 0.0
    for i in range(nd):
        acc += (res[2 * i] ** 2 + res[2 * i + 1] ** 2) * inv_lumped[i]
    return np.sqrt(acc)


@njit(cache=True, nogil=True, error_model="numpy")
def newton_step(x, u_prev, load, p, n_el, phi, wq, m_loc, s_loc, k, linear,
                inv_lumped, tol, max_iter, history, ab_const, ab, ipiv, res, trial, dx):
    """Damped Newton for one backward Euler step, updating ``x`` in place.

    ``ab_const`` comes from :func:`constant_jacobian`; the remaining arrays are
    workspace.  Returns ``(status, iterations, final_residual)``; ``history[i]``
    holds the residual norm after iterate ``i`` (entry 0 is the initial guess).
    """
    n2 = x.size
    kl = 2 * p + 1
    rnorm = mixed_residual(x, u_prev, load, p, n_el, phi, wq, m_loc, s_loc, k, linear,
                           inv_lumped, res)
    history[0] = rnorm
    if not np.isfinite(rnorm):
        return NON_FINITE, 0, rnorm
    if rnorm <= tol:
        return OK, 0, rnorm
    for it in range(1, max_iter + 1):
        # explicit loops: numba's 2-D slice assignment is an order of magnitude slower
        for r in range(ab.shape[0]):
            for c in range(n2):
                ab[r, c] = ab_const[r, c]
        if not linear:
            _add_fprime_block(ab, x, p, n_el, phi, wq)
        if gbtrf(ab, n2, kl, kl, ipiv) != 0:
            history[it] = rnorm
            return SINGULAR, it, rnorm
        for i in range(n2):
            dx[i] = -res[i]
        gbtrs(ab, n2, kl, kl, ipiv, dx)
        step = 1.0
        new_norm = rnorm
        for _ in range(12):
            for i in range(n2):
                trial[i] = x[i] + step * dx[i]
            new_norm = mixed_residual(trial, u_prev, load, p, n_el, phi, wq, m_loc, s_loc,
                                      k, linear, inv_lumped, res)
            if np.isfinite(new_norm) and new_norm < rnorm:
                break
            step *= 0.5
        if not np.isfinite(new_norm):
            history[it] = new_norm
            return NON_FINITE, it, new_norm
        # the last trial is kept even without decrease: that only happens at round-off
        dx_max = 0.0
        x_max = 0.0
        for i in range(n2):
            dx_max = max(dx_max, abs(trial[i] - x[i]))
            x[i] = trial[i]
            x_max = max(x_max, abs(x[i]))
        rnorm = new_norm
        history[it] = rnorm
        if rnorm <= tol:
            return OK, it, rnorm
        if dx_max <= 4.0 * 2.220446049250313e-16 * (1.0 + x_max):
            # stagnated: the update no longer changes the iterate
            return OK, it, rnorm
    return NOT_CONVERGED, max_iter, rnorm


@njit(cache=True, nogil=True, error_model="numpy")
def _energy_terms(u, p, n_el, phi, wq, s_loc, tmp):
    banded_matvec(s_loc, p, n_el, u, tmp)
    grad = 0.0
    for i in range(u.size):
        grad += u[i] * tmp[i]
    return 0.5 * grad + potential_integral(u, p, n_el, phi, wq)


@njit(cache=True, nogil=True, error_model="numpy")
def _ah_norm(u, p, n_el, m_loc, s_loc, mab, mpiv, tmp, z):
    """``||A_h u||`` with ``A_h = M^{-1} S`` using the factored mass matrix."""
    banded_matvec(s_loc, p, n_el, u, tmp)
    for i in range(u.size):
        z[i] = tmp[i]
    gbtrs(mab, u.size, p, p, mpiv, z)
    acc = 0.0
    for i in range(u.size):
        acc += tmp[i] * z[i]
    return np.sqrt(max(acc, 0.0))


@njit(cache=True, nogil=True, error_model="numpy")
def run_trajectory(u0, w0, loads, p, n_el, phi, wq, m_loc, s_loc, mab, mpiv, k, linear,
                   inv_lumped, tol, max_iter, checkpoint_steps,
                   u_out, w_out, iters, final_res, energy, ah_norm, dissipation,
                   fail_history):
    """Integrate ``loads.shape[0]`` steps from ``(u0, w0)``.

    ``checkpoint_steps`` holds sorted step indices (0 = initial state) whose
    states are copied into ``u_out``/``w_out``.  ``energy`` and ``ah_norm`` have
    one entry per state, ``dissipation`` the running sum of ``k |w|_1^2``.
    Returns ``(status, failing_step)``.
    """
    nd = u0.size
    n_steps = loads.shape[0]
    x = np.zeros(2 * nd)
    for i in range(nd):
        x[2 * i] = u0[i]
        x[2 * i + 1] = w0[i]
    u = u0.copy()
    tmp = np.zeros(nd)
    z = np.zeros(nd)
    history = np.zeros(max_iter + 1)
    kl = 2 * p + 1
    ab_const = np.zeros((3 * kl + 1, 2 * nd))
    constant_jacobian(ab_const, p, n_el, m_loc, s_loc, k)
    ab = np.zeros_like(ab_const)
    ipiv = np.zeros(2 * nd, dtype=np.int64)
    res = np.zeros(2 * nd)
    trial = np.zeros(2 * nd)
    dx = np.zeros(2 * nd)
    ck = 0
    if ck < checkpoint_steps.size and checkpoint_steps[ck] == 0:
        u_out[ck, :] = u0
        w_out[ck, :] = w0
        ck += 1
    energy[0] = _energy_terms(u, p, n_el, phi, wq, s_loc, tmp)
    ah_norm[0] = _ah_norm(u, p, n_el, m_loc, s_loc, mab, mpiv, tmp, z)
    dissipation[0] = 0.0
    for n in range(n_steps):
        for i in range(history.size):
            history[i] = np.nan
        status, it, rn = newton_step(x, u, loads[n], p, n_el, phi, wq, m_loc, s_loc, k,
                                     linear, inv_lumped, tol, max_iter, history, ab_const, ab,
                                     ipiv, res, trial, dx)
        iters[n] = it
        final_res[n] = rn
        if status != OK:
            fail_history[:] = history
            return status, n + 1
        for i in range(nd):
            u[i] = x[2 * i]
            tmp[i] = x[2 * i + 1]
        banded_matvec(s_loc, p, n_el, tmp, z)
        wsw = 0.0
        for i in range(nd):
            wsw += tmp[i] * z[i]
        dissipation[n + 1] = dissipation[n] + k * wsw
        energy[n + 1] = _energy_terms(u, p, n_el, phi, wq, s_loc, tmp)
        ah_norm[n + 1] = _ah_norm(u, p, n_el, m_loc, s_loc, mab, mpiv, tmp, z)
        while ck < checkpoint_steps.size and checkpoint_steps[ck] == n + 1:
            for i in range(nd):
                u_out[ck, i] = x[2 * i]
                w_out[ck, i] = x[2 * i + 1]
            ck += 1
    return OK, 0

"""Inner loops shared by the solvers.

Each kernel has a loop version (compiled by numba when enabled) and a numpy
version. ``dual_cd`` and ``kde_row_sums`` dispatch on the active backend.
"""

import numpy as np

from ._accel import NUMBA_AVAILABLE, njit

# status codes returned by the coordinate-ascent kernels
CD_CONVERGED = 0
CD_MAX_SWEEPS = 1
CD_DUAL_UNBOUNDED = 2


@njit
def _cd_sweeps_loop(X, y, W, alpha, sqnorm, max_sweeps, tol, dual_bound):
    n, d = X.shape
    C = W.shape[0]
    viol = np.inf
    for sweep in range(max_sweeps):
        viol = 0.0
        for i in range(n):
            yi = y[i]
            if sqnorm[i] == 0.0:
                # a zero input can never satisfy a unit margin
                return sweep + 1, np.inf, CD_DUAL_UNBOUNDED
            for c in range(C):
                if c == yi:
                    continue
                m = 0.0
                for k in range(d):
                    m += (W[yi, k] - W[c, k]) * X[i, k]
                g = 1.0 - m
                a = alpha[i, c]
                pg = g if a > 0.0 else max(g, 0.0)
                if abs(pg) > viol:
                    viol = abs(pg)
                if pg != 0.0:
                    na = max(0.0, a + g / (2.0 * sqnorm[i]))
                    delta = na - a
                    if delta != 0.0:
                        for k in range(d):
                            W[yi, k] += delta * X[i, k]
                            W[c, k] -= delta * X[i, k]
                        alpha[i, c] = na
        if viol <= tol:
            return sweep + 1, viol, CD_CONVERGED
        dual = 0.0
        for i in range(n):
            for c in range(C):
                dual += alpha[i, c]
        wsq = 0.0
        for c in range(C):
            for k in range(d):
                wsq += W[c, k] * W[c, k]
        if dual - 0.5 * wsq > dual_bound:
            return sweep + 1, viol, CD_DUAL_UNBOUNDED
    return max_sweeps, viol, CD_MAX_SWEEPS


def _cd_sweeps_numpy(X, y, W, alpha, sqnorm, max_sweeps, tol, dual_bound):
    n = X.shape[0]
    C = W.shape[0]
    viol = np.inf
    for sweep in range(max_sweeps):
        viol = 0.0
        for i in range(n):
            yi = y[i]
            x = X[i]
            if sqnorm[i] == 0.0:
                return sweep + 1, np.inf, CD_DUAL_UNBOUNDED
            for c in range(C):
                if c == yi:
                    continue
                g = 1.0 - float(np.dot(W[yi] - W[c], x))
                a = alpha[i, c]
                pg = g if a > 0.0 else max(g, 0.0)
                viol = max(viol, abs(pg))
                if pg != 0.0:
                    na = max(0.0, a + g / (2.0 * sqnorm[i]))
                    delta = na - a
                    if delta != 0.0:
                        W[yi] += delta * x
                        W[c] -= delta * x
                        alpha[i, c] = na
        if viol <= tol:
            return sweep + 1, viol, CD_CONVERGED
        if alpha.sum() - 0.5 * float(np.sum(W * W)) > dual_bound:
            return sweep + 1, viol, CD_DUAL_UNBOUNDED
    return max_sweeps, viol, CD_MAX_SWEEPS


def dual_cd(X, y, W, alpha, sqnorm, max_sweeps, tol, dual_bound):
    """Run coordinate-ascent sweeps on the multiclass max-margin dual in place.

    ``W`` (C x d) and ``alpha`` (n x C) are updated in place. Returns
    ``(sweeps, max_projected_gradient, status)``.
    """
    fn = _cd_sweeps_loop if NUMBA_AVAILABLE else _cd_sweeps_numpy
    sweeps, viol, status = fn(X, y, W, alpha, sqnorm, int(max_sweeps), float(tol), float(dual_bound))
    return int(sweeps), float(viol), int(status)


@njit
def _kde_row_sums_loop(F, inv_two_h2):
    n, m = F.shape
    out = np.empty(n)
    for i in range(n):
        s = 0.0
        for j in range(n):
            d2 = 0.0
            for k in range(m):
                t = F[i, k] - F[j, k]
                d2 += t * t
            s += np.exp(-d2 * inv_two_h2)
        out[i] = s
    return out


def _kde_row_sums_numpy(F, inv_two_h2, block=512):
    n = F.shape[0]
    out = np.empty(n)
    for start in range(0, n, block):
        diff = F[start:start + block, None, :] - F[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        out[start:start + block] = np.exp(-d2 * inv_two_h2).sum(axis=1)
    return out


def kde_row_sums(F, h):
    """Return ``sum_j exp(-|F_i - F_j|^2 / (2 h^2))`` for every row ``i``."""
    F = np.ascontiguousarray(F, dtype=np.float64)
    inv = 1.0 / (2.0 * h * h)
    if NUMBA_AVAILABLE:
        return _kde_row_sums_loop(F, inv)
    return _kde_row_sums_numpy(F, inv)

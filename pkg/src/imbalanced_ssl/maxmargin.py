"""Min-norm multiclass max-margin classifier.

Solves ``min sum_y |w_y|^2`` subject to ``w_y.x - w_c.x >= 1`` for every labeled
point ``(x, y)`` and every ``c != y``, by coordinate ascent on the dual of the
equivalent ``1/2 sum_y |w_y|^2`` problem. Each dual variable ``alpha[i, c]``
belongs to one constraint; the primal is ``w_y = sum alpha x`` over constraints
where ``y`` is the true class, minus the same sum where ``y`` is the competitor.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from . import kernels
from .datagen import Dataset
from .errors import ConfigError, InfeasibleError
from .features import FeatureMap

MARGIN_TOL = 1e-4
KKT_TOL = 1e-6


@dataclass
class QpSolution:
    feature_map: FeatureMap
    objective: float
    min_margin: float
    kkt_residual: float
    iterations: int
    converged: bool
    dual: np.ndarray | None = None


def margins(W, inputs, labels):
    """All constraint margins ``w_y.x - w_c.x`` as an ``(n, C)`` array, ``+inf`` at ``c == y``."""
    scores = inputs @ W.T
    n = inputs.shape[0]
    own = scores[np.arange(n), labels]
    out = own[:, None] - scores
    out[np.arange(n), labels] = np.inf
    return out


def check_margins(fm: FeatureMap, ds: Dataset) -> float:
    """Smallest multiclass margin of ``fm`` on ``ds``."""
    if fm.m != ds.class_count:
        raise ConfigError(f"feature map has {fm.m} rows but the dataset has {ds.class_count} classes")
    if ds.n == 0:
        return float("inf")
    return float(margins(fm.W, ds.inputs, ds.labels).min())


def _lp_feasible(X, y, C):
    """Exact separability test: is there any W with all margins >= 1?"""
    n, d = X.shape
    rows = []
    for i in range(n):
        for c in range(C):
            if c == y[i]:
                continue
            a = np.zeros((C, d))
            a[y[i]] = -X[i]
            a[c] = X[i]
            rows.append(a.ravel())
    if not rows:
        return True
    res = linprog(
        np.zeros(C * d), A_ub=np.array(rows), b_ub=-np.ones(len(rows)), bounds=(None, None), method="highs"
    )
    return res.status == 0


def solve_maxmargin_qp(
    ds: Dataset,
    tol=1e-7,
    margin_tol=MARGIN_TOL,
    kkt_tol=KKT_TOL,
    max_sweeps=10**6,
    dual_bound=1e12,
    lp_screen_limit=4000,
    polish_limit=10**7,
) -> QpSolution:
    """Solve the max-margin QP on ``ds``.

    ``tol`` bounds the largest projected dual gradient at termination. When the
    ascent has not converged after its first block of sweeps and the problem has
    at most ``lp_screen_limit`` constraints, an LP separability test decides
    infeasibility early; otherwise a dual objective above ``dual_bound`` does.
    If the sweeps run out on a problem whose constraint matrix has at most
    ``polish_limit`` entries, an active-set solve on the current support
    finishes the job.
    """
    C = ds.class_count
    if C < 2:
        raise ConfigError("need at least two classes")
    X = np.ascontiguousarray(ds.inputs, dtype=np.float64)
    y = np.ascontiguousarray(ds.labels, dtype=np.int64)
    n, d = X.shape
    W = np.zeros((C, d))
    alpha = np.zeros((n, C))
    sqnorm = np.einsum("ij,ij->i", X, X)

    block = 1000
    done = 0
    screened = False
    status = kernels.CD_MAX_SWEEPS
    while done < max_sweeps:
        sweeps, viol, status = kernels.dual_cd(X, y, W, alpha, sqnorm, min(block, max_sweeps - done), tol, dual_bound)
        done += sweeps
        if status == kernels.CD_DUAL_UNBOUNDED:
            raise InfeasibleError(f"dual objective exceeded {dual_bound:g} after {done} sweeps; data not separable")
        if status == kernels.CD_CONVERGED:
            gap = _slackness_total(W, alpha, X, y)
            # large multipliers amplify small margin errors; tighten until the
            # total complementary slackness (the duality gap) is below kkt_tol / 10
            if gap <= 0.1 * kkt_tol or tol <= 1e-14:
                break
            tol *= 0.1
            status = kernels.CD_MAX_SWEEPS
            continue
        if not screened and n * (C - 1) <= lp_screen_limit:
            screened = True
            if not _lp_feasible(X, y, C):
                raise InfeasibleError("no classifier attains a positive margin on this data")

    solver = "dual_cd"
    if status != kernels.CD_CONVERGED and n * (C - 1) * C * d <= polish_limit:
        polished = _active_set_polish(X, y, C, alpha)
        if polished is not None:
            W, alpha = polished
            status = kernels.CD_CONVERGED
            solver = "dual_cd+active_set"

    fm = FeatureMap(W, "supervised", {"solver": solver, "sweeps": done})
    min_margin, kkt = _diagnostics(W, alpha, X, y)
    converged = status == kernels.CD_CONVERGED and min_margin >= 1 - margin_tol and kkt <= kkt_tol
    return QpSolution(fm, float(np.sum(W * W)), min_margin, kkt, done, bool(converged), alpha)


def _constraint_rows(X, y, C, pairs):
    d = X.shape[1]
    A = np.zeros((len(pairs), C * d))
    for k, (i, c) in enumerate(pairs):
        A[k, y[i] * d:(y[i] + 1) * d] = X[i]
        A[k, c * d:(c + 1) * d] = -X[i]
    return A


def _active_set_polish(X, y, C, alpha, max_rounds=50):
    """Exact KKT point from the support of ``alpha``, refined by dropping
    negative multipliers and adding violated constraints.

    Coordinate ascent crawls on badly conditioned data (nearly collinear points
    of different classes); the support it has found is usually right, and one
    least-squares solve on it lands on the optimum. Returns ``None`` if no
    KKT point is reached.
    """
    n, d = X.shape
    pairs = [(i, c) for i in range(n) for c in range(C) if c != y[i]]
    A = _constraint_rows(X, y, C, pairs)
    a = np.array([alpha[i, c] for i, c in pairs])
    active = a > 1e-12 * max(a.max(initial=0.0), 1e-300)
    for _ in range(max_rounds):
        if not active.any():
            return None
        As = A[active]
        # least-norm solve on As itself; the normal equations would square its conditioning
        w, *_ = np.linalg.lstsq(As, np.ones(As.shape[0]), rcond=None)
        lam, *_ = np.linalg.lstsq(As.T, w, rcond=None)
        marg = A @ w
        neg = lam < -1e-12 * max(np.abs(lam).max(), 1.0)
        viol = (marg < 1.0 - 1e-10) & ~active
        if not neg.any() and not viol.any():
            if np.max(np.abs(As @ w - 1.0)) > 1e-8:
                return None
            full = np.zeros((n, C))
            idx = np.flatnonzero(active)
            for k, v in zip(idx, np.maximum(lam, 0.0)):
                full[pairs[k]] = v
            return w.reshape(C, d), full
        where = np.flatnonzero(active)
        active[where[neg]] = False
        active |= viol
    return None


def _slackness_total(W, alpha, X, y):
    m = margins(W, X, y)
    mask = np.isfinite(m)
    return float(np.sum(np.abs(alpha[mask] * (m[mask] - 1.0))))


def _diagnostics(W, alpha, X, y):
    if X.shape[0] == 0:
        return float("inf"), 0.0
    m = margins(W, X, y)
    mask = np.isfinite(m)
    min_margin = float(m[mask].min()) if mask.any() else float("inf")
    kkt = float(np.max(np.abs(alpha[mask] * (m[mask] - 1.0)), initial=0.0))
    return min_margin, kkt


def brute_force_maxmargin(ds: Dataset, max_constraints=20) -> QpSolution:
    """Exact optimum by enumerating active constraint sets (tiny problems only).

    For every subset of constraints held with equality, the least-norm solution
    of that linear system is a candidate; the feasible candidate of smallest
    norm is the optimum.
    """
    C = ds.class_count
    X, y = ds.inputs, ds.labels
    n, d = X.shape
    pairs = [(i, c) for i in range(n) for c in range(C) if c != y[i]]
    if len(pairs) > max_constraints:
        raise ConfigError(f"{len(pairs)} constraints exceeds the brute-force limit of {max_constraints}")
    A = np.zeros((len(pairs), C * d))
    for k, (i, c) in enumerate(pairs):
        row = np.zeros((C, d))
        row[y[i]] = X[i]
        row[c] = -X[i]
        A[k] = row.ravel()

    best = None
    best_obj = np.inf
    for size in range(0, len(pairs) + 1):
        for subset in itertools.combinations(range(len(pairs)), size):
            if size == 0:
                w = np.zeros(C * d)
            else:
                As = A[list(subset)]
                w, *_ = np.linalg.lstsq(As, np.ones(size), rcond=None)
                if np.max(np.abs(As @ w - 1.0)) > 1e-9:
                    continue
            if len(pairs) and np.min(A @ w) < 1.0 - 1e-9:
                continue
            obj = float(w @ w)
            if obj < best_obj - 1e-15:
                best_obj, best = obj, w
    if best is None:
        raise InfeasibleError("no active set yields a feasible classifier")
    W = best.reshape(C, d)
    m = margins(W, X, y)
    min_margin = float(m[np.isfinite(m)].min()) if len(pairs) else float("inf")
    return QpSolution(FeatureMap(W, "supervised", {"solver": "brute_force"}), best_obj, min_margin, 0.0, 0, True)

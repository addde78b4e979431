"""Spectral self-supervised features.

The positive-pair objective ``-E[<W(x+xi), W(x+xi')>] + 1/2 |W^T W|_F^2`` has
expectation ``-tr(W M W^T) + 1/2 |W^T W|_F^2`` with ``M = E[x x^T]``, whose
minimizers are ``W^T W = `` top-m part of ``M``. ``solve_spectral`` returns that
minimizer directly; ``ssl_loss_and_grad`` gives the sampled objective for
iterative training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datagen import Dataset
from .errors import ConfigError, ConvergenceError
from .features import FeatureMap

E2_INDEX = 1
DEGENERATE_GAP = 1e-8


@dataclass
class SecondMoment:
    M: np.ndarray
    n_source: int


@dataclass
class SpectralReport:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    e2_coefficients: np.ndarray
    eigengap: float
    degenerate: bool
    iterations: list


def empirical_second_moment(ds: Dataset) -> SecondMoment:
    if ds.n == 0:
        raise ConfigError("cannot form a second moment from an empty dataset")
    X = ds.inputs
    M = X.T @ X / ds.n
    return SecondMoment(0.5 * (M + M.T), ds.n)


def top_eigenpairs(M, k, tol=1e-10, max_iter=100_000, seed=0, oversample=None):
    """Leading ``k`` eigenpairs of a symmetric PSD matrix.

    Block power iteration: a block of ``k + oversample`` vectors is multiplied
    by ``M``, re-orthonormalized, and rotated by a Rayleigh-Ritz step; the top
    ``k`` Ritz pairs are accepted once every residual ``|M v - lam v|`` is at
    most ``tol * max(1, lam_1)``. After that, iteration continues while the
    residuals still shrink, for at most as many rounds again, since the
    eigenvector error scales with residual over gap. Oversampling makes the rate depend on
    ``lam_{k+oversample+1} / lam_k`` rather than on adjacent gaps. Eigenvectors
    are sign-normalized so their largest-magnitude entry is positive.
    """
    M = np.asarray(M, dtype=np.float64)
    d = M.shape[0]
    if M.shape != (d, d):
        raise ConfigError("matrix must be square")
    if not 1 <= k <= d:
        raise ConfigError(f"need 1 <= k <= {d}, got {k}")
    p = max(5, k) if oversample is None else oversample
    b = min(d, k + p)
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((d, b)))
    res = np.full(k, np.inf)
    done_at = None
    best = None
    for it in range(1, max_iter + 1):
        MQ = M @ Q
        T = Q.T @ MQ
        theta, S = np.linalg.eigh(0.5 * (T + T.T))
        order = np.argsort(theta)[::-1]
        theta, S = theta[order], S[:, order]
        V = Q @ S
        MV = MQ @ S
        res = np.linalg.norm(MV[:, :k] - V[:, :k] * theta[:k], axis=0)
        scale = max(1.0, abs(theta[0]))
        if done_at is None and np.all(res <= tol * scale):
            done_at = it
        if done_at is not None:
            # refine: vector error is residual / gap, so push toward roundoff
            r = res.max()
            if best is not None and r >= best[0]:
                theta, V, res = best[1], best[2], best[3]
                break
            best = (r, theta, V, res)
            if r <= 64 * np.finfo(float).eps * scale or it >= 2 * done_at:
                break
        Q, _ = np.linalg.qr(MV)
    else:
        if done_at is not None:
            theta, V, res = best[1], best[2], best[3]
        else:
            raise ConvergenceError(
                f"top-{k} eigenpairs did not converge in {max_iter} iterations (max residual {res.max():.3e})",
                residual=float(res.max()),
            )
    vals = theta[:k].copy()
    vecs = V[:, :k].T.copy()
    for i in range(k):
        if vecs[i, np.argmax(np.abs(vecs[i]))] < 0:
            vecs[i] = -vecs[i]
    return vals, vecs, it


def solve_spectral(M: SecondMoment | np.ndarray, m: int, tol=1e-10, max_iter=100_000):
    """Rank-``m`` spectral features: rows ``sqrt(max(lam_i, 0)) v_i``."""
    mat = M.M if isinstance(M, SecondMoment) else np.asarray(M, dtype=np.float64)
    d = mat.shape[0]
    if not 1 <= m <= d:
        raise ConfigError(f"rank must lie in [1, {d}], got {m}")
    k = min(m + 1, d)
    vals, vecs, iters = top_eigenpairs(mat, k, tol=tol, max_iter=max_iter)
    gap = float(vals[m - 1] - vals[m]) if k > m else float(vals[m - 1])
    W = np.sqrt(np.maximum(vals[:m], 0.0))[:, None] * vecs[:m]
    report = SpectralReport(
        eigenvalues=vals[:m],
        eigenvectors=vecs[:m],
        e2_coefficients=vecs[:m, E2_INDEX].copy() if d > E2_INDEX else np.zeros(m),
        eigengap=gap,
        degenerate=bool(abs(gap) < DEGENERATE_GAP),
        iterations=iters,
    )
    return FeatureMap(W, "ssl_spectral", {"rank": m}), report


def population_loss(W, M):
    """Perturbation-averaged objective ``-tr(W M W^T) + 1/2 |W W^T|_F^2`` and its gradient."""
    G = W @ W.T
    WM = W @ M
    loss = -float(np.sum(WM * W)) + 0.5 * float(np.sum(G * G))
    grad = -2.0 * WM + 2.0 * G @ W
    return loss, grad


def ssl_loss_and_grad(W, batch, perturb_scale, rng, weights=None):
    """Sampled positive-pair loss on ``batch`` rows and its exact gradient in ``W``.

    Every row gets fresh perturbations ``xi, xi'`` (standard normal times
    ``perturb_scale``; ``xi`` block drawn before ``xi'``). With ``weights``, each
    example's term, regularizer included, is multiplied by its weight.
    """
    W = np.asarray(W, dtype=np.float64)
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if perturb_scale < 0:
        raise ConfigError("perturb_scale must be non-negative")
    if batch.shape[1] != W.shape[1]:
        raise ConfigError(f"batch dimension {batch.shape[1]} does not match W with {W.shape[1]} columns")
    B = batch.shape[0]
    a = batch + perturb_scale * rng.standard_normal(batch.shape)
    b = batch + perturb_scale * rng.standard_normal(batch.shape)
    w = np.ones(B) if weights is None else np.asarray(weights, dtype=np.float64)
    Za = a @ W.T
    Zb = b @ W.T
    inner = np.einsum("ij,ij->i", Za, Zb)
    G = W @ W.T
    wbar = float(w.mean())
    loss = -float(w @ inner) / B + 0.5 * wbar * float(np.sum(G * G))
    grad = -((Za * w[:, None]).T @ b + (Zb * w[:, None]).T @ a) / B + 2.0 * wbar * (G @ W)
    return loss, grad


def per_example_loss(W, inputs):
    """Perturbation-averaged loss of each row: ``-|W x|^2 + 1/2 |W W^T|_F^2``."""
    Z = np.asarray(inputs) @ W.T
    G = W @ W.T
    return -np.einsum("ij,ij->i", Z, Z) + 0.5 * float(np.sum(G * G))


class SslObjective:
    """The positive-pair loss as a flat-parameter objective for the training engine.

    ``loss_and_grad(params, batch_idx, weights, rng)`` evaluates the sampled loss
    on rows ``batch_idx`` of ``inputs``; ``weights`` is per batch row or None.
    """

    def __init__(self, inputs, m, perturb_scale):
        self.inputs = np.asarray(inputs, dtype=np.float64)
        self.m = int(m)
        self.d = self.inputs.shape[1]
        self.perturb_scale = float(perturb_scale)
        self.param_dim = self.m * self.d

    @property
    def n(self):
        return self.inputs.shape[0]

    def unflatten(self, params):
        return np.asarray(params).reshape(self.m, self.d)

    def init_params(self, rng, scale=None):
        scale = 1.0 / np.sqrt(self.d) if scale is None else scale
        return scale * rng.standard_normal(self.param_dim)

    def loss_and_grad(self, params, batch_idx, weights, rng):
        loss, grad = ssl_loss_and_grad(
            self.unflatten(params), self.inputs[batch_idx], self.perturb_scale, rng, weights
        )
        return loss, grad.ravel()

    def features(self, params, inputs=None):
        X = self.inputs if inputs is None else inputs
        return X @ self.unflatten(params).T

    def example_losses(self, params, inputs, rng, draws=64):
        """Per-row sampled loss averaged over ``draws`` perturbation pairs, with the standard error."""
        W = self.unflatten(params)
        inputs = np.asarray(inputs, dtype=np.float64)
        G = W @ W.T
        reg = 0.5 * float(np.sum(G * G))
        samples = np.empty((draws, inputs.shape[0]))
        for t in range(draws):
            a = inputs + self.perturb_scale * rng.standard_normal(inputs.shape)
            b = inputs + self.perturb_scale * rng.standard_normal(inputs.shape)
            samples[t] = -np.einsum("ij,ij->i", a @ W.T, b @ W.T) + reg
        return samples.mean(axis=0), samples.std(axis=0, ddof=1) / np.sqrt(draws) if draws > 1 else 0.0

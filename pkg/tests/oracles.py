"""Independent reference implementations used only by the tests."""

import numpy as np


def jacobi_eigh(A, tol=1e-15, max_sweeps=100):
    """Cyclic Jacobi rotations on a symmetric matrix. Returns (values desc, vectors as rows)."""
    A = np.array(A, dtype=np.float64)
    n = A.shape[0]
    V = np.eye(n)
    for _ in range(max_sweeps):
        off = np.linalg.norm(A - np.diag(np.diag(A)))  # direct, a difference of squares cancels
        if off <= tol * max(1.0, np.abs(A).max()):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if A[p, q] == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * A[p, q])
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta**2 + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t**2 + 1.0)
                s = t * c
                J = np.eye(n)
                J[p, p] = J[q, q] = c
                J[p, q] = s
                J[q, p] = -s
                A = J.T @ A @ J
                V = V @ J
    vals = np.diag(A)
    order = np.argsort(vals)[::-1]
    return vals[order], V[:, order].T


def toy_reference(d, n1, n2, n3, seed, tau=None, rho=None):
    """Row-by-row re-implementation of the toy sampler's documented stream order."""
    tau = d**0.2 if tau is None else tau
    rho = d**-0.2 if rho is None else rho
    rng = np.random.default_rng(seed)
    rows, labels = [], []
    for label, count in enumerate((n1, n2, n3)):
        q = rng.integers(0, 2, size=count) if label < 2 else np.zeros(count, dtype=int)
        xi = rng.standard_normal((count, d))
        for i in range(count):
            base = np.zeros(d)
            if label == 0:
                base[0], base[1] = 1.0, -q[i] * tau
            elif label == 1:
                base[0], base[1] = -1.0, -q[i] * tau
            else:
                base[1] = 1.0
            rows.append(base + rho * xi[i])
            labels.append(label)
    return np.array(rows).reshape(-1, d), np.array(labels)


def epsilon_grid(g, rho, p, h=1e-3):
    """Maximize eps.g over the 3-d p-ball by a grid on (eps_1, eps_2) at step ``h * rho``.

    The maximizer sits on the sphere and the last coordinate then takes the
    sign of g_3 with the magnitude that puts the point on the sphere.
    """
    g = np.asarray(g, dtype=np.float64)
    t = np.arange(-rho, rho + 0.5 * h * rho, h * rho)
    E1, E2 = np.meshgrid(t, t, indexing="ij")
    rest = rho**p - np.abs(E1) ** p - np.abs(E2) ** p
    ok = rest >= 0
    E3 = np.where(ok, np.sign(g[2]) * np.maximum(rest, 0.0) ** (1.0 / p), 0.0)
    val = np.where(ok, E1 * g[0] + E2 * g[1] + E3 * g[2], -np.inf)
    k = np.unravel_index(np.argmax(val), val.shape)
    return np.array([E1[k], E2[k], E3[k]]), float(val[k])


def random_psd(rng, n, rank=None):
    rank = n if rank is None else rank
    A = rng.standard_normal((n, rank))
    return A @ A.T


def finite_diff_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g

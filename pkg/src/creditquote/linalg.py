"""Small dense linear-algebra helpers and deterministic RNG streams.

Matrices here are tiny (context dimension d, typically <= 100), so an
O(d^3)-per-sweep Jacobi eigensolver is perfectly adequate and keeps the
eigenvalue path independent of the LAPACK-backed oracle used in tests.
"""
from __future__ import annotations

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve


def min_eigenvalue(m, tol: float = 1e-10) -> float:
    """Minimum eigenvalue of a symmetric matrix via cyclic Jacobi sweeps.

    Raises ValueError for NaN entries or matrices that are asymmetric
    beyond ``tol`` (relative to the largest entry).
    """
    a = np.array(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("expected a square matrix")
    if np.isnan(a).any():
        raise ValueError("matrix contains NaN entries")
    scale = max(1.0, float(np.abs(a).max()))
    if float(np.abs(a - a.T).max()) > tol * scale:
        raise ValueError("asymmetric matrix")
    a = 0.5 * (a + a.T)
    d = a.shape[0]
    if d == 1:
        return float(a[0, 0])

    norm = max(float(np.linalg.norm(a)), 1e-300)
    for _ in range(100):  # sweeps; quadratic convergence kicks in fast
        off = np.sqrt(max(np.sum(a * a) - np.sum(np.diag(a) ** 2), 0.0))
        if off <= tol * norm:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.hypot(1.0, theta))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.hypot(1.0, t)
                s = t * c
                rot_p = c * a[:, p] - s * a[:, q]
                rot_q = s * a[:, p] + c * a[:, q]
                a[:, p], a[:, q] = rot_p, rot_q
                rot_p = c * a[p, :] - s * a[q, :]
                rot_q = s * a[p, :] + c * a[q, :]
                a[p, :], a[q, :] = rot_p, rot_q
    return float(a.diagonal().min())


def ridge_solve(X, y, alpha: float) -> np.ndarray:
    """Solve argmin ||X theta - y||^2 + alpha ||theta||^2 via Cholesky."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("design/response shape mismatch")
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    d = X.shape[1]
    gram = X.T @ X + alpha * np.eye(d)
    try:
        factor = cho_factor(gram, lower=True)
    except LinAlgError as exc:
        raise ValueError("rank deficient") from exc
    return cho_solve(factor, X.T @ y)


def make_rng(seed: int, *subkeys: int) -> np.random.Generator:
    """Deterministic counter-based generator, splittable by integer subkeys.

    Identical (seed, subkeys) yield identical streams on every platform;
    sub-streams for (replication, bond, ...) are independent regardless of
    scheduling order.
    """
    entropy = [int(seed)] + [int(k) for k in subkeys]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def categorical(rng: np.random.Generator, weights) -> int:
    """Draw an index with probability proportional to ``weights``."""
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0 or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be a nonnegative finite vector")
    total = w.sum()
    if total <= 0:
        raise ValueError("weights must sum to a positive value")
    cum = np.cumsum(w)
    u = rng.random() * total
    return int(np.searchsorted(cum, u, side="right").clip(0, w.size - 1))

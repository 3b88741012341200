"""Two-stage estimator: pooled MLE, per-bond L2-regularized refinement
toward the pooled estimate, the regularization schedule, and the ball
projection.

Stage I is a smooth problem solved by damped Newton with backtracking and
a gradient-descent fallback when the Hessian is near-singular.  Stage II
adds the non-smooth group penalty lambda ||theta - theta_bar|| and is
solved by proximal gradient (block soft-threshold toward theta_bar).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .distributions import NoiseSpec
from .likelihood import ObservationBatch, batch_objective

MAX_ITER = 10_000


@dataclass
class EstimatorState:
    """Per-episode estimates and bookkeeping for the two-stage policy."""

    episode: int
    theta_bar: np.ndarray
    theta_hat: Dict[int, np.ndarray] = field(default_factory=dict)
    counts: Dict[int, int] = field(default_factory=dict)
    lambdas: Dict[int, float] = field(default_factory=dict)
    W: float = 1.0


def project_ball(theta, W: float) -> np.ndarray:
    """Euclidean projection onto the ball of radius W."""
    if not (W > 0):
        raise ValueError("W must be positive")
    theta = np.asarray(theta, dtype=float)
    norm = float(np.linalg.norm(theta))
    if norm <= W:
        return theta.copy()
    return theta * (W / norm)


def lambda_schedule(mode: str, d: int, N_j: int, M: int,
                    u_F: float = 1.0, x_bar: float = 1.0) -> float:
    """Stage II regularization strength.

    ``paper_theory`` uses the analysis-driven rate with the likelihood
    slope bound u_F and context bound x_bar; ``experiment`` uses the
    0.1 sqrt(d / N_j) rule the synthetic studies run with.
    """
    if N_j <= 0:
        raise ValueError("N_j must be at least 1; use the pooled fallback instead")
    if mode == "paper_theory":
        return math.sqrt(8.0 * u_F**2 * x_bar**2 * d * math.log(2.0 * d * d * M) / N_j)
    if mode == "experiment":
        return 0.1 * math.sqrt(d / N_j)
    raise ValueError(f"unknown lambda mode {mode!r}")


def _as_batch(observations) -> ObservationBatch:
    if isinstance(observations, ObservationBatch):
        return observations
    return ObservationBatch.from_observations(list(observations))


def stage1_fit(observations, noise: NoiseSpec, init=None, tol: float = 1e-8,
               max_iter: int = MAX_ITER, norm_cap: Optional[float] = None,
               ridge: float = 0.0) -> np.ndarray:
    """Pooled (or single-bond) MLE via damped Newton with backtracking.

    ``norm_cap`` stops early once the iterate norm exceeds the cap; useful
    for degenerate all-censored samples whose MLE escapes to infinity
    (the caller projects onto the W-ball anyway).  ``ridge`` adds
    0.5 * ridge * ||theta||^2 to the objective; callers pass a d/n-decaying
    value so underdetermined early-episode fits stay bounded while large
    samples are essentially unpenalized.
    """
    batch = _as_batch(observations)
    d = batch.X.shape[1]
    theta = np.zeros(d) if init is None else np.asarray(init, dtype=float).copy()
    if norm_cap is not None:
        theta = project_ball(theta, norm_cap)

    def objective(th):
        v, g, h = batch_objective(th, batch, noise)
        if ridge > 0.0:
            v = v + 0.5 * ridge * float(th @ th)
            g = g + ridge * th
            h = h + ridge * np.eye(d)
        return v, g, h

    value, grad, hess = objective(theta)
    if not np.isfinite(value):
        raise ValueError("non-finite objective at init")
    if np.any(theta):
        # a warm start left over from a degenerate earlier fit can be worse
        # than the origin; start from whichever scores better
        v0, g0, h0 = objective(np.zeros(d))
        if v0 < value:
            theta = np.zeros(d)
            value, grad, hess = v0, g0, h0
    stalls = 0
    for _ in range(max_iter):
        gnorm = float(np.linalg.norm(grad))
        if gnorm < tol:
            break
        if norm_cap is not None and float(np.linalg.norm(theta)) > norm_cap:
            break
        # damped Newton step; tiny jitter keeps rank-deficient Hessians usable
        jitter = 1e-12 * (1.0 + float(np.trace(hess)))
        try:
            factor = cho_factor(hess + jitter * np.eye(d), lower=True)
            step = cho_solve(factor, grad)
        except LinAlgError:
            step = grad
        if not np.all(np.isfinite(step)) or float(grad @ step) <= 0.0:
            # near-singular solves can return a numerically non-descent
            # direction; plain gradient descent is always safe
            step = grad
        # on flat (linearly extended) stretches the Hessian is near zero and
        # the solve overshoots; keep the step length bounded
        cap = 10.0 * (1.0 + float(np.linalg.norm(theta)))
        snorm = float(np.linalg.norm(step))
        if snorm > cap:
            step = step * (cap / snorm)
        t = 1.0
        accepted = False
        pin = 1e-12 * (1.0 + float(np.linalg.norm(theta)))
        for _bt in range(60):
            if t * snorm < pin:
                break  # any acceptable move would be a kink-pin anyway
            cand = theta - t * step
            v_new, g_new, h_new = objective(cand)
            if np.isfinite(v_new) and v_new <= value - 1e-4 * t * float(grad @ step):
                progress = value - v_new
                theta, value, grad, hess = cand, v_new, g_new, h_new
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        # the censored objective has kinks (log Fbar is not differentiable
        # at the lower support edge); once moves or improvements collapse
        # the iterate is pinned at a kink and the gradient cannot vanish
        if t * float(np.linalg.norm(step)) < 1e-12 * (1.0 + float(np.linalg.norm(theta))):
            break
        stalls = stalls + 1 if progress < 1e-9 * (1.0 + abs(value)) else 0
        if stalls >= 3:
            break
    return theta


def _prox_shift(u: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    """Prox of radius * ||. - center||: block soft-threshold toward center."""
    diff = u - center
    norm = float(np.linalg.norm(diff))
    if norm <= radius:
        return center.copy()
    return center + diff * (1.0 - radius / norm)


def _first_order_gap(grad: np.ndarray, theta: np.ndarray, center: np.ndarray,
                     lam: float) -> float:
    """Distance to the subgradient optimality condition of the penalized problem."""
    diff = theta - center
    norm = float(np.linalg.norm(diff))
    if norm > 1e-12:
        return float(np.linalg.norm(grad + lam * diff / norm))
    return max(0.0, float(np.linalg.norm(grad)) - lam)


def prox_gradient(objective, init: np.ndarray, center: np.ndarray, lam: float,
                  tol: float = 1e-8, max_iter: int = MAX_ITER) -> np.ndarray:
    """Minimize objective(theta) + lam ||theta - center|| by proximal gradient.

    ``objective`` returns (value, gradient, hessian); the Hessian trace
    seeds the backtracked step size.
    """
    theta = np.asarray(init, dtype=float).copy()
    d = theta.size
    value, grad, hess = objective(theta)
    if not np.isfinite(value):
        raise ValueError("non-finite objective at init")
    L = max(float(np.trace(hess)) / d, 1.0)
    best = theta.copy()
    best_gap = _first_order_gap(grad, theta, center, lam)
    for _ in range(max_iter):
        if best_gap <= tol:
            break
        cand = _prox_shift(theta - grad / L, center, lam / L)
        step = cand - theta
        v_new, g_new, _ = objective(cand)
        # backtrack until the quadratic upper bound holds
        while (not np.isfinite(v_new)) or v_new > value + float(grad @ step) \
                + 0.5 * L * float(step @ step) + 1e-14:
            L *= 2.0
            if L > 1e16:
                break
            cand = _prox_shift(theta - grad / L, center, lam / L)
            step = cand - theta
            v_new, g_new, _ = objective(cand)
        if L > 1e16:
            break
        if float(np.linalg.norm(step)) < 1e-14 * (1.0 + float(np.linalg.norm(theta))):
            theta, value, grad = cand, v_new, g_new
            gap = _first_order_gap(grad, theta, center, lam)
            if gap < best_gap:
                best, best_gap = theta.copy(), gap
            break
        theta, value, grad = cand, v_new, g_new
        gap = _first_order_gap(grad, theta, center, lam)
        if gap < best_gap:
            best, best_gap = theta.copy(), gap
        L *= 0.7  # allow the step to grow back
    return best


def stage2_fit(observations_of_j, theta_bar, lambda_j: float, noise: NoiseSpec,
               tol: float = 1e-8, max_iter: int = MAX_ITER,
               norm_cap: Optional[float] = None) -> np.ndarray:
    """Per-bond regularized MLE pulled toward the pooled estimate.

    The penalty is smooth away from theta_bar, so after the subgradient
    check at the center the problem is solved by damped Newton on the
    penalized objective; a proximal-gradient pass is the fallback when the
    Newton iterates stall.  ``norm_cap`` stops early once the iterate
    strays that far from theta_bar, which happens on degenerate samples
    whose penalized MLE still escapes (the caller projects onto the W-ball
    anyway).
    """
    if lambda_j < 0:
        raise ValueError("lambda_j must be nonnegative")
    batch = _as_batch(observations_of_j)
    theta_bar = np.asarray(theta_bar, dtype=float)
    d = theta_bar.size

    def objective(theta):
        return batch_objective(theta, batch, noise)

    v0, g0, h0 = objective(theta_bar)
    if float(np.linalg.norm(g0)) <= lambda_j:
        return theta_bar.copy()

    def penalized(theta):
        v, g, h = objective(theta)
        diff = theta - theta_bar
        r = float(np.linalg.norm(diff))
        u = diff / r
        vp = v + lambda_j * r
        gp = g + lambda_j * u
        hp = h + (lambda_j / r) * (np.eye(d) - np.outer(u, u))
        return vp, gp, hp

    # leave the kink with one proximal step, backtracked until it actually
    # descends (the Hessian trace only seeds the step size), then Newton on
    # the smooth part
    L = max(float(np.trace(h0)), 1.0)
    theta = None
    for _bt in range(60):
        cand = _prox_shift(theta_bar - g0 / L, theta_bar, lambda_j / L)
        diff = float(np.linalg.norm(cand - theta_bar))
        if diff < 1e-14:
            return theta_bar.copy()
        v_new, g_new, h_new = penalized(cand)
        if np.isfinite(v_new) and v_new < v0:
            theta, value, grad, hess = cand, v_new, g_new, h_new
            break
        L *= 2.0
    if theta is None:
        return theta_bar.copy()
    stalls = 0
    for _ in range(max_iter):
        if float(np.linalg.norm(grad)) <= tol:
            return theta
        if norm_cap is not None and \
                float(np.linalg.norm(theta - theta_bar)) > norm_cap:
            return theta
        jitter = 1e-12 * (1.0 + float(np.trace(hess)))
        try:
            factor = cho_factor(hess + jitter * np.eye(d), lower=True)
            step = cho_solve(factor, grad)
        except LinAlgError:
            step = grad
        if not np.all(np.isfinite(step)) or float(grad @ step) <= 0.0:
            # near-singular solves can return a numerically non-descent
            # direction; plain gradient descent is always safe
            step = grad
        cap = 10.0 * (1.0 + float(np.linalg.norm(theta)))
        snorm = float(np.linalg.norm(step))
        if snorm > cap:
            step = step * (cap / snorm)
        t = 1.0
        accepted = False
        pin = 1e-12 * (1.0 + float(np.linalg.norm(theta)))
        for _bt in range(60):
            if t * snorm < pin:
                return theta  # any acceptable move would be a kink-pin anyway
            cand = theta - t * step
            if float(np.linalg.norm(cand - theta_bar)) < 1e-14:
                t *= 0.5
                continue
            v_new, g_new, h_new = penalized(cand)
            if np.isfinite(v_new) and v_new <= value - 1e-4 * t * float(grad @ step):
                progress = value - v_new
                theta, value, grad, hess = cand, v_new, g_new, h_new
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        # pinned at a kink of the censored objective; see stage1_fit
        if t * float(np.linalg.norm(step)) < 1e-12 * (1.0 + float(np.linalg.norm(theta))):
            return theta
        stalls = stalls + 1 if progress < 1e-9 * (1.0 + abs(value)) else 0
        if stalls >= 3:
            return theta
    else:
        return theta
    # Newton stalled before reaching the tolerance; finish with ISTA
    return prox_gradient(objective, theta, theta_bar, lambda_j,
                         tol=tol, max_iter=max_iter)

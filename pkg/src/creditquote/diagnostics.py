"""Runtime verification of the modeling assumptions and the proof-side
covariance events, reported per episode and globally.

Everything here reports findings; nothing is fatal.  The curvature scan
checks A(r) = 2V'(r) - V(r)V''(r)/V'(r) <= 0 over the yield range of
interest, the noise-sigma condition compares the Gaussian density floor to
the maximum modified duration, and the likelihood constants are obtained
by grid maximization over the evaluation box.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import math

import numpy as np

from . import bond as bond_mod
from . import likelihood
from .bond import BondPrimitives
from .distributions import NORMAL, NoiseSpec, log_derivs
from .linalg import make_rng, min_eigenvalue
from .policies import episode_index


@dataclass
class CurvatureScan:
    r_bar: float
    grid_points: int
    n_primitives: int
    n_violations: int
    max_value: float


@dataclass
class NoiseSigmaCheck:
    delta: float
    lhs: float            # Gaussian density floor at offset delta
    rhs: float            # max over primitives of -V'(0)/V(0)
    holds: bool


@dataclass
class LikelihoodConstants:
    box_limit: float
    u_F: float
    ell_F: float
    L_F: float


@dataclass
class EpisodeCovariance:
    episode: int
    n_samples: int
    lambda_min_pooled: float
    lambda_min_per_bond: Dict[int, float]
    counts: Dict[int, int]
    event_pooled: Optional[bool] = None   # E_k^o against a known Sigma
    event_per_bond: Dict[int, bool] = field(default_factory=dict)
    arrival_event: Dict[int, bool] = field(default_factory=dict)  # N_k^j


@dataclass
class DiagnosticsReport:
    curvature: CurvatureScan
    noise_sigma: NoiseSigmaCheck
    constants: LikelihoodConstants
    episodes: List[EpisodeCovariance]
    realized_x_bar: float
    clip_count: int

    def to_dict(self) -> dict:
        return asdict(self)


def scan_curvature(primitives: Sequence[BondPrimitives], r_bar: float = 0.2,
                   grid_points: int = 2048) -> CurvatureScan:
    grid = np.linspace(0.0, r_bar, grid_points)
    violations = 0
    max_val = -math.inf
    for prim in primitives:
        a = bond_mod.curvature_A(prim, grid)
        m = float(np.max(a))
        max_val = max(max_val, m)
        if m > 1e-9:
            violations += 1
    return CurvatureScan(r_bar=r_bar, grid_points=grid_points,
                         n_primitives=len(primitives),
                         n_violations=violations, max_value=max_val)


def check_noise_sigma(primitives: Sequence[BondPrimitives], sigma: float,
                      delta: float = 0.005) -> NoiseSigmaCheck:
    lhs = math.sqrt(1.0 / (2.0 * math.pi)) / sigma * math.exp(-0.5 * (delta / sigma) ** 2)
    rhs = max(bond_mod.modified_duration(p, 0.0) for p in primitives)
    return NoiseSigmaCheck(delta=delta, lhs=lhs, rhs=rhs, holds=lhs > rhs)


def likelihood_constants(noise: NoiseSpec, box_limit: float,
                         grid_points: int = 4001) -> LikelihoodConstants:
    """Grid-maximized slope bound u_F, curvature floor ell_F, and the
    Lipschitz bound L_F over |x| <= box_limit.

    For a truncated support the grid is intersected with the interior of
    the support, where the log-derivatives are defined.
    """
    lo, hi = -box_limit, box_limit
    if noise.kind != NORMAL:
        lo = max(lo, noise.lo + 1e-9)
        hi = min(hi, noise.hi - 1e-9)
    xs = np.linspace(lo, hi, grid_points)
    ld = log_derivs(noise, xs)
    u_F = float(np.max(np.minimum(-ld.dlogFbar, -ld.dlogf)))
    # the censored branch's curvature vanishes in the deep upper tail, so
    # the usable strong-convexity floor is the density branch's constant
    ell_F = float(np.min(-ld.d2logf))
    L_F = float(np.max(np.abs(ld.d2logFbar) + np.abs(ld.d2logf)))
    return LikelihoodConstants(box_limit=box_limit, u_F=u_F, ell_F=ell_F, L_F=L_F)


def _sample_cov(X: np.ndarray) -> np.ndarray:
    return X.T @ X / X.shape[0]


def episode_covariances(contexts: np.ndarray, bond_ids: np.ndarray,
                        rounds: np.ndarray, M: int,
                        sigma_min_pooled: Optional[float] = None,
                        sigma_min_per_bond: Optional[Dict[int, float]] = None,
                        pi: Optional[np.ndarray] = None) -> List[EpisodeCovariance]:
    """Per-episode minimum eigenvalues of the sample covariances, with the
    half-of-expected event flags when the true quantities are known."""
    out: List[EpisodeCovariance] = []
    episodes = np.array([episode_index(int(t))[0] for t in rounds])
    for k in np.unique(episodes):
        mask = episodes == k
        X = contexts[mask]
        ids = bond_ids[mask]
        lam_pooled = min_eigenvalue(_sample_cov(X)) if X.shape[0] else 0.0
        per_bond: Dict[int, float] = {}
        counts: Dict[int, int] = {}
        for j in range(M):
            sel = ids == j
            counts[j] = int(np.count_nonzero(sel))
            if counts[j] >= 1:
                per_bond[j] = min_eigenvalue(_sample_cov(X[sel]))
        ep = EpisodeCovariance(episode=int(k), n_samples=int(X.shape[0]),
                               lambda_min_pooled=lam_pooled,
                               lambda_min_per_bond=per_bond, counts=counts)
        if sigma_min_pooled is not None:
            ep.event_pooled = lam_pooled >= 0.5 * sigma_min_pooled
        if sigma_min_per_bond is not None:
            ep.event_per_bond = {j: per_bond.get(j, 0.0) >= 0.5 * sigma_min_per_bond[j]
                                 for j in sigma_min_per_bond}
        if pi is not None:
            tau_k = episode_index(int(rounds[mask][0]))[1]
            ep.arrival_event = {j: counts.get(j, 0) >= 0.25 * tau_k * pi[j]
                                for j in range(M)}
        out.append(ep)
    return out


def pooled_event_failure_rates(d: int, ks: Sequence[int], n_seeds: int,
                               base_seed: int = 0,
                               normalize_contexts: bool = True) -> Dict[int, float]:
    """Empirical failure frequency of the pooled eigenvalue event E_k^o.

    Episode k estimates use the previous episode's 2^(k-2) context draws;
    contexts are i.i.d. standard normal (optionally normalized to the unit
    sphere, for which the true covariance is I/d).
    """
    sigma_min = (1.0 / d) if normalize_contexts else 1.0
    rates: Dict[int, float] = {}
    for k in ks:
        n = 1 << (k - 2)
        fails = 0
        for s in range(n_seeds):
            rng = make_rng(base_seed, s, k)
            X = rng.standard_normal((n, d))
            if normalize_contexts:
                X = X / np.linalg.norm(X, axis=1, keepdims=True)
            lam = min_eigenvalue(_sample_cov(X)) if n >= 1 else 0.0
            if lam < 0.5 * sigma_min:
                fails += 1
        rates[k] = fails / n_seeds
    return rates


def check_assumptions(primitives: Sequence[BondPrimitives], noise: NoiseSpec,
                      contexts: Optional[np.ndarray] = None,
                      bond_ids: Optional[np.ndarray] = None,
                      rounds: Optional[np.ndarray] = None,
                      M: int = 1, W: float = 5.0, y_bar: float = 0.2,
                      r_bar: float = 0.2, delta: float = 0.005,
                      pi: Optional[np.ndarray] = None) -> DiagnosticsReport:
    """Assemble the full diagnostics report from sampled primitives and,
    when available, recorded contexts."""
    curvature = scan_curvature(primitives, r_bar=r_bar)
    sigma_check = check_noise_sigma(primitives, noise.sigma, delta=delta)
    x_bar = 1.0
    episodes: List[EpisodeCovariance] = []
    if contexts is not None and bond_ids is not None and rounds is not None:
        x_bar = float(np.max(np.linalg.norm(contexts, axis=1)))
        episodes = episode_covariances(contexts, bond_ids, rounds, M, pi=pi)
    constants = likelihood_constants(noise, box_limit=y_bar + W * x_bar)
    return DiagnosticsReport(curvature=curvature, noise_sigma=sigma_check,
                             constants=constants, episodes=episodes,
                             realized_x_bar=x_bar,
                             clip_count=likelihood.clip_count())

"""Censored per-observation log-likelihood, its gradient/Hessian, and the
batched negative-log-likelihood objectives used by both estimation stages.

A won quote reveals the competitor yield and contributes log f(y - <theta, x>);
a lost quote only reveals the censoring event and contributes
log Fbar(V^-1(p) - <theta, x>).  The quote yield V^-1(p) is computed once
per observation and cached, never re-inverted inside optimizer loops.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtr

from . import bond as bond_mod
from . import distributions as dist
from .bond import BondPrimitives
from .distributions import NoiseSpec, TRUNCATED_NORMAL

# Margin keeping clipped residuals strictly inside a truncated support.
_CLIP_MARGIN = 1e-9

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

# Hazard cap for the censored branch near the upper truncation bound; the
# negative log-survival is continued linearly once its slope reaches this,
# a Huber-style wall that stays convex and numerically tame.
_WALL_SLOPE = 1e4

_wall_cache: dict = {}

_clip_count = 0


def clip_count() -> int:
    """Number of residuals clipped into the noise support so far."""
    return _clip_count


def reset_clip_count() -> None:
    global _clip_count
    _clip_count = 0


@dataclass
class Observation:
    """One RFQ outcome: context, quote, censoring indicator, yield if won."""

    bond_id: int
    x: np.ndarray
    quote: float
    won: bool
    y: Optional[float]
    primitives: BondPrimitives
    quote_yield: Optional[float] = None  # V^-1(quote), cached lazily

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        if not np.all(np.isfinite(self.x)) or not np.isfinite(self.quote):
            raise ValueError("non-finite context or quote")
        if self.won and self.y is None:
            raise ValueError("won observation requires the observed yield")
        if not self.won:
            self.y = None

    def ensure_quote_yield(self) -> float:
        if self.quote_yield is None:
            self.quote_yield = bond_mod.yield_of_price(self.primitives, self.quote)
        return self.quote_yield


class ObservationBatch:
    """Packed arrays for fast batched likelihood evaluation.

    ``base`` holds the observed yield for won rows and the quote yield for
    lost rows, so the residual is always base - X theta.
    """

    def __init__(self, X: np.ndarray, base: np.ndarray, won: np.ndarray,
                 bond_ids: np.ndarray):
        self.X = X
        self.base = base
        self.won = won
        self.bond_ids = bond_ids
        self.n = X.shape[0]

    @classmethod
    def from_observations(cls, observations: Sequence[Observation]) -> "ObservationBatch":
        n = len(observations)
        if n == 0:
            raise ValueError("no observations")
        d = observations[0].x.size
        X = np.empty((n, d))
        base = np.empty(n)
        won = np.empty(n, dtype=bool)
        ids = np.empty(n, dtype=np.int64)
        for i, o in enumerate(observations):
            X[i] = o.x
            won[i] = o.won
            ids[i] = o.bond_id
            base[i] = o.y if o.won else o.ensure_quote_yield()
        return cls(X, base, won, ids)

    def restrict(self, bond_id: int) -> "ObservationBatch":
        mask = self.bond_ids == bond_id
        if not mask.any():
            raise ValueError("no observations")
        return ObservationBatch(self.X[mask], self.base[mask],
                                self.won[mask], self.bond_ids[mask])


def _wall_point(noise: NoiseSpec) -> float:
    """Residual at which the censored-branch hazard reaches _WALL_SLOPE."""
    key = (noise.mu, noise.sigma, noise.lo, noise.hi)
    cached = _wall_cache.get(key)
    if cached is None:
        from scipy.optimize import brentq

        def excess_hazard(r):
            return dist.pdf(noise, r) / dist.sf(noise, r) - _WALL_SLOPE

        lo = noise.lo + _CLIP_MARGIN
        hi = noise.hi - 1e-12
        if excess_hazard(lo) >= 0:
            cached = lo
        else:
            cached = float(brentq(excess_hazard, lo, hi, xtol=1e-15))
        _wall_cache[key] = cached
    return cached


def _branch_terms(raw: np.ndarray, won: np.ndarray, noise: NoiseSpec):
    """Per-row log-likelihood value, slope in the residual, and eta >= 0.

    The won branch evaluates log f with the residual clipped into the
    truncated support and a tangent-linear extension outside (bounded
    influence under misspecification).  The lost branch evaluates log Fbar
    exactly: flat at zero below the support (a certain loss carries no
    information), and continued linearly with slope -_WALL_SLOPE past the
    point where the hazard reaches that cap.  Both branches stay concave
    in the residual with value and slope consistent, so Newton-type
    solvers see no spurious plateaus.  Clips are counted for diagnostics.
    """
    global _clip_count
    raw = np.asarray(raw, dtype=float)
    won = np.asarray(won, dtype=bool)
    if noise.kind != TRUNCATED_NORMAL:
        ld = dist.log_derivs(noise, raw)
        ll = np.where(won, dist.log_pdf(noise, raw), dist.log_sf(noise, raw))
        slope = np.where(won, ld.dlogf, ld.dlogFbar)
        eta = -np.where(won, ld.d2logf, ld.d2logFbar)
        return ll, slope, eta

    lo_c = noise.lo + _CLIP_MARGIN
    hi_c = noise.hi - _CLIP_MARGIN
    rho = np.where(won, np.clip(raw, lo_c, hi_c),
                   np.clip(raw, lo_c, _wall_point(noise)))
    _clip_count += int(np.count_nonzero(rho != raw))
    excess = raw - rho

    # inlined truncated-normal log f / log Fbar and their derivatives; a
    # single pass over z keeps this hot path cheap
    sig = noise.sigma
    z = (rho - noise.mu) / sig
    logphi = -0.5 * z * z - _LOG_SQRT_2PI
    log_mass = math.log(noise._mass)
    log_denom_hi = np.log(ndtr(noise._beta) - ndtr(z))
    lpdf = logphi - math.log(sig) - log_mass
    lsf = log_denom_hi - log_mass
    hbar = np.exp(logphi - log_denom_hi) / sig
    zs = z / sig

    slope = np.where(won, -zs, -hbar)
    # a lost quote whose residual sits below the support is a sure loss:
    # exactly flat, no pull
    slope = np.where(~won & (excess < 0), 0.0, slope)
    ll = np.where(won, lpdf, lsf) + slope * excess
    eta = np.where(won, 1.0 / (sig * sig), hbar * (hbar - zs))
    eta = np.where(excess != 0.0, 0.0, eta)
    return ll, slope, eta


def loglik(theta, obs: Observation, noise: NoiseSpec) -> float:
    theta = np.asarray(theta, dtype=float)
    mean = float(theta @ obs.x)
    raw = (obs.y if obs.won else obs.ensure_quote_yield()) - mean
    ll, _, _ = _branch_terms(np.asarray([raw]), np.asarray([obs.won]), noise)
    return float(ll[0])


def loglik_grad(theta, obs: Observation, noise: NoiseSpec) -> np.ndarray:
    """Gradient of the log-likelihood w.r.t. theta (ascent direction)."""
    theta = np.asarray(theta, dtype=float)
    mean = float(theta @ obs.x)
    raw = (obs.y if obs.won else obs.ensure_quote_yield()) - mean
    _, slope, _ = _branch_terms(np.asarray([raw]), np.asarray([obs.won]), noise)
    return -float(slope[0]) * obs.x


def batch_objective(theta, observations, noise: NoiseSpec,
                    bond_id: Optional[int] = None):
    """Negative mean log-likelihood with gradient and Hessian.

    ``observations`` may be a list of Observation or an ObservationBatch.
    When ``bond_id`` is given the objective is restricted to that bond's
    rows (Stage II scope).  The Hessian is sum eta_t x x^T / n with
    eta_t >= 0 under log-concavity, hence positive semidefinite.
    """
    if not isinstance(observations, ObservationBatch):
        observations = ObservationBatch.from_observations(list(observations))
    if bond_id is not None:
        observations = observations.restrict(bond_id)
    theta = np.asarray(theta, dtype=float)
    X, base, won = observations.X, observations.base, observations.won
    n = observations.n

    ll, slope, eta = _branch_terms(base - X @ theta, won, noise)

    value = -float(ll.mean())
    gradient = (X * slope[:, None]).sum(axis=0) / n
    hessian = (X * eta[:, None]).T @ X / n
    return value, gradient, hessian

"""Noise distributions: pdf/cdf/survival, log-derivatives, reversed hazard.

Supports the plain normal and the truncated normal used by the synthetic
market generator.  All functions accept scalars or arrays and are
vectorized; the log-derivative helpers are the building blocks of the
censored likelihood.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np
from scipy.special import log_ndtr, ndtr, ndtri

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

NORMAL = "normal"
TRUNCATED_NORMAL = "truncated_normal"


@dataclass(frozen=True)
class NoiseSpec:
    """Noise family for the best-competitor yield residual.

    ``lo``/``hi`` are only meaningful for the truncated normal; they must
    be finite with lo < hi.
    """

    kind: str
    mu: float
    sigma: float
    lo: float = -math.inf
    hi: float = math.inf

    def __post_init__(self):
        if self.kind not in (NORMAL, TRUNCATED_NORMAL):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if not (self.sigma > 0):
            raise ValueError("sigma must be positive")
        if self.kind == TRUNCATED_NORMAL:
            if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
                raise ValueError("truncation bounds must be finite")
            if not self.lo < self.hi:
                raise ValueError("truncation requires lo < hi")

    @cached_property
    def _alpha(self) -> float:
        return (self.lo - self.mu) / self.sigma

    @cached_property
    def _beta(self) -> float:
        return (self.hi - self.mu) / self.sigma

    @cached_property
    def _ndtr_alpha(self) -> float:
        return float(ndtr(self._alpha))

    @cached_property
    def _ndtr_beta(self) -> float:
        return float(ndtr(self._beta))

    @cached_property
    def _mass(self) -> float:
        # probability of the base normal landing inside [lo, hi]
        return self._ndtr_beta - self._ndtr_alpha


def _z(spec: NoiseSpec, x):
    return (np.asarray(x, dtype=float) - spec.mu) / spec.sigma


def _maybe_scalar(value, like):
    if np.isscalar(like) or np.ndim(like) == 0:
        return float(value)
    return value


def pdf(spec: NoiseSpec, x):
    if np.ndim(x) == 0:
        xv = float(x)
        if spec.kind == TRUNCATED_NORMAL and not spec.lo <= xv <= spec.hi:
            return 0.0
        z = (xv - spec.mu) / spec.sigma
        out = math.exp(-0.5 * z * z - _LOG_SQRT_2PI) / spec.sigma
        return out / spec._mass if spec.kind == TRUNCATED_NORMAL else out
    z = _z(spec, x)
    out = np.exp(-0.5 * z * z - _LOG_SQRT_2PI) / spec.sigma
    if spec.kind == TRUNCATED_NORMAL:
        out = out / spec._mass
        xs = np.asarray(x, dtype=float)
        out = np.where((xs < spec.lo) | (xs > spec.hi), 0.0, out)
    return _maybe_scalar(out, x)


def cdf(spec: NoiseSpec, x):
    if np.ndim(x) == 0:
        z = (float(x) - spec.mu) / spec.sigma
        if spec.kind == NORMAL:
            return float(ndtr(z))
        raw = (float(ndtr(z)) - spec._ndtr_alpha) / spec._mass
        return min(max(raw, 0.0), 1.0)
    z = _z(spec, x)
    if spec.kind == NORMAL:
        out = ndtr(z)
    else:
        raw = (ndtr(z) - spec._ndtr_alpha) / spec._mass
        out = np.clip(raw, 0.0, 1.0)
    return _maybe_scalar(out, x)


def sf(spec: NoiseSpec, x):
    """Survival function 1 - F(x), computed without cancellation."""
    if np.ndim(x) == 0:
        z = (float(x) - spec.mu) / spec.sigma
        if spec.kind == NORMAL:
            return float(ndtr(-z))
        raw = (spec._ndtr_beta - float(ndtr(z))) / spec._mass
        return min(max(raw, 0.0), 1.0)
    z = _z(spec, x)
    if spec.kind == NORMAL:
        out = ndtr(-z)
    else:
        raw = (spec._ndtr_beta - ndtr(z)) / spec._mass
        out = np.clip(raw, 0.0, 1.0)
    return _maybe_scalar(out, x)


def log_cdf(spec: NoiseSpec, x):
    z = _z(spec, x)
    if spec.kind == NORMAL:
        out = log_ndtr(z)
    else:
        with np.errstate(divide="ignore"):
            out = np.log(np.clip((ndtr(z) - spec._ndtr_alpha) / spec._mass, 0.0, 1.0))
    return _maybe_scalar(out, x)


def log_sf(spec: NoiseSpec, x):
    z = _z(spec, x)
    if spec.kind == NORMAL:
        out = log_ndtr(-z)
    else:
        with np.errstate(divide="ignore"):
            out = np.log(np.clip((spec._ndtr_beta - ndtr(z)) / spec._mass, 0.0, 1.0))
    return _maybe_scalar(out, x)


def log_pdf(spec: NoiseSpec, x):
    z = _z(spec, x)
    out = -0.5 * z * z - _LOG_SQRT_2PI - math.log(spec.sigma)
    if spec.kind == TRUNCATED_NORMAL:
        out = out - math.log(spec._mass)
        xs = np.asarray(x, dtype=float)
        out = np.where((xs < spec.lo) | (xs > spec.hi), -np.inf, out)
    return _maybe_scalar(out, x)


class LogDerivs(NamedTuple):
    dlogF: np.ndarray
    dlogFbar: np.ndarray
    dlogf: np.ndarray
    d2logF: np.ndarray
    d2logFbar: np.ndarray
    d2logf: np.ndarray


def log_derivs(spec: NoiseSpec, x) -> LogDerivs:
    """First and second derivatives of log F, log Fbar, and log f at x.

    For the normal family (log F)' is the reversed hazard rate and
    -(log Fbar)' is the hazard rate; both second derivatives are
    nonpositive (log-concavity).  Raises at points where F or Fbar
    vanishes, since the corresponding log-derivative is undefined.
    """
    z = _z(spec, x)
    sig = spec.sigma
    if spec.kind == TRUNCATED_NORMAL:
        inside = (z > spec._alpha) & (z < spec._beta)
        if not np.all(inside):
            raise ValueError("degenerate likelihood point")
    logphi = -0.5 * z * z - _LOG_SQRT_2PI

    if spec.kind == NORMAL:
        lF = log_ndtr(z)
        lFbar = log_ndtr(-z)
    else:
        denom_lo = ndtr(z) - spec._ndtr_alpha
        denom_hi = spec._ndtr_beta - ndtr(z)
        if np.any(denom_lo <= 0) or np.any(denom_hi <= 0):
            raise ValueError("degenerate likelihood point")
        with np.errstate(divide="ignore"):
            lF = np.log(denom_lo)
            lFbar = np.log(denom_hi)
        # the truncation constant cancels inside the hazard ratios below

    h = np.exp(logphi - lF) / sig       # reversed hazard f/F
    hbar = np.exp(logphi - lFbar) / sig  # hazard f/Fbar
    zs = z / sig

    dlogF = h
    dlogFbar = -hbar
    dlogf = -zs
    d2logF = -h * (zs + h)
    d2logFbar = hbar * (zs - hbar)
    d2logf = np.full_like(np.asarray(z, dtype=float), -1.0 / (sig * sig))
    if np.isscalar(x) or np.ndim(x) == 0:
        return LogDerivs(*(float(v) for v in
                           (dlogF, dlogFbar, dlogf, d2logF, d2logFbar, d2logf)))
    return LogDerivs(dlogF, dlogFbar, dlogf, d2logF, d2logFbar, d2logf)


def reversed_hazard(spec: NoiseSpec, x):
    """h(x) = f(x) / F(x); strictly decreasing for the normal family."""
    f = pdf(spec, x)
    F = cdf(spec, x)
    if np.any(np.asarray(F) <= 0):
        raise ValueError("reversed hazard undefined where F(x) = 0")
    return _maybe_scalar(np.asarray(f) / np.asarray(F), x)


def sample(spec: NoiseSpec, rng: np.random.Generator, size=None):
    """Deterministic inverse-CDF sampling from the noise distribution."""
    if spec.kind == NORMAL:
        return spec.mu + spec.sigma * rng.standard_normal(size)
    lo_m = spec._ndtr_alpha
    u = rng.random(size)
    return spec.mu + spec.sigma * ndtri(lo_m + u * spec._mass)

"""Fixed-coupon bond analytics: the yield-to-price map, its derivatives,
the inverse map, modified duration, and the curvature functional used by
the assumption diagnostics.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

# Yield bracket for inversion: wide enough for any quote the policies emit.
YIELD_MIN = -0.5
YIELD_MAX = 2.0


@dataclass(frozen=True)
class BondPrimitives:
    """Coupon rate, par value, and future payment times (years)."""

    coupon_rate: float
    par: float
    payment_times: np.ndarray
    _cashflows: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        times = np.asarray(self.payment_times, dtype=float)
        if times.ndim != 1 or times.size == 0:
            raise ValueError("payment_times must be a nonempty vector")
        if np.any(times <= 0) or np.any(np.diff(times) <= 0):
            raise ValueError("payment_times must be positive and strictly increasing")
        if not (0.0 <= self.coupon_rate <= 1.0):
            raise ValueError("coupon_rate must lie in [0, 1]")
        if not (self.par > 0):
            raise ValueError("par must be positive")
        cf = np.full(times.size, self.coupon_rate * self.par)
        cf[-1] += self.par
        object.__setattr__(self, "payment_times", times)
        object.__setattr__(self, "_cashflows", cf)

    @property
    def n_payments(self) -> int:
        return int(self.payment_times.size)


def _check_yield(y):
    if np.ndim(y) == 0:
        if y <= -1.0:
            raise ValueError("yield out of domain")
    elif np.any(np.asarray(y) <= -1.0):
        raise ValueError("yield out of domain")


def price(b: BondPrimitives, y):
    """Discounted cash-flow value at yield y: sum_i cf_i / (1+y)^tau_i.

    Strictly decreasing and convex in y.  Accepts scalar or array yields.
    """
    _check_yield(y)
    if np.ndim(y) == 0:
        # (1+y)^(-tau) as exp(-tau log1p(y)) for accuracy near y = 0
        l = math.log1p(float(y))
        return float(np.exp(-l * b.payment_times) @ b._cashflows)
    l = np.log1p(np.asarray(y, dtype=float))
    disc = np.exp(-np.multiply.outer(l, b.payment_times))
    return disc @ b._cashflows


def price_derivs(b: BondPrimitives, y):
    """Analytic (V', V'', V''') of the yield-to-price map.

    Sign pattern is (-, +, -) for every valid primitive set.
    """
    _check_yield(y)
    l = np.log1p(np.asarray(y, dtype=float))
    tau = b.payment_times
    cf = b._cashflows
    base = np.exp(-np.multiply.outer(l, tau))
    d1 = -(base * tau) @ cf * np.exp(-l)
    d2 = (base * (tau * (tau + 1.0))) @ cf * np.exp(-2.0 * l)
    d3 = -(base * (tau * (tau + 1.0) * (tau + 2.0))) @ cf * np.exp(-3.0 * l)
    if np.ndim(y) == 0:
        return float(d1), float(d2), float(d3)
    return d1, d2, d3


def price_curve(b: BondPrimitives, y: float):
    """(V, V', V'') at a scalar yield in one cash-flow pass."""
    _check_yield(y)
    l = math.log1p(float(y))
    tau = b.payment_times
    disc = np.exp(-l * tau) * b._cashflows
    v = float(disc.sum())
    e = math.exp(-l)
    d1 = -float((disc * tau).sum()) * e
    d2 = float((disc * (tau * (tau + 1.0))).sum()) * e * e
    return v, d1, d2


def yield_of_price(b: BondPrimitives, p: float, tol: float = 1e-12) -> float:
    """Invert the yield-to-price map inside the [YIELD_MIN, YIELD_MAX] bracket."""
    p_hi = price(b, YIELD_MIN)
    p_lo = price(b, YIELD_MAX)
    if not (p_lo < p <= p_hi):
        raise ValueError("price out of range")
    y = brentq(lambda r: price(b, r) - p, YIELD_MIN, YIELD_MAX,
               xtol=1e-15, rtol=8.9e-16, maxiter=200)
    if abs(price(b, y) - p) >= tol * max(1.0, abs(p)):
        raise ValueError("yield inversion did not converge")
    return float(y)


def modified_duration(b: BondPrimitives, y):
    v = price(b, y)
    d1, _, _ = price_derivs(b, y)
    return -d1 / v


def curvature_A(b: BondPrimitives, r):
    """Curvature functional 2 V'(r) - V(r) V''(r) / V'(r).

    Nonpositive on the yields of interest for the primitives the synthetic
    generator draws; the diagnostics module scans it on a grid.
    """
    v = price(b, r)
    d1, d2, _ = price_derivs(b, r)
    if np.any(np.asarray(d1) == 0.0):
        raise ValueError("vanishing price derivative")
    return 2.0 * d1 - v * d2 / d1

"""Optimal-quote solver: maximize (p - gamma) F(V^-1(p) - b) subject to
p <= p_cap.

The search runs on the yield axis, where the objective
g(r) = (V(r) - gamma) F(r - b) is smooth and V^-1 never needs explicit
evaluation: a 512-point coarse grid guarantees the global maximizer of the
sampled objective, and golden-section refinement around the best cell
polishes it.  The first-order-condition residual
Psi(r, b) = V'(r) F(r - b) + (V(r) - gamma) f(r - b) is reported so callers
can audit interior optima.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from . import bond as bond_mod
from . import distributions as dist
from .bond import BondPrimitives
from .distributions import NoiseSpec

GRID_POINTS = 512
_INV_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

DEFAULT_YIELD_BOX = (-0.1, 1.0)
DEFAULT_CAP_FACTOR = 1.5  # p_cap defaults to 1.5 x par


class PriceGrid:
    """Precomputed V(r) on the coarse yield grid, shareable across quotes
    on the same bond within a round."""

    def __init__(self, primitives: BondPrimitives,
                 yield_box: Tuple[float, float] = DEFAULT_YIELD_BOX):
        self.primitives = primitives
        self.yield_box = yield_box
        self.r = np.linspace(yield_box[0], yield_box[1], GRID_POINTS)
        self.v = bond_mod.price(primitives, self.r)
        self._quote_cache: Dict[Tuple[float, float, float, float], tuple] = {}
        self._cap_yields: Dict[float, float] = {}

    def cap_yield(self, p_cap: float) -> float:
        r = self._cap_yields.get(p_cap)
        if r is None:
            r = bond_mod.yield_of_price(self.primitives, p_cap)
            self._cap_yields[p_cap] = r
        return r


@dataclass
class QuoteProblem:
    primitives: BondPrimitives
    noise: NoiseSpec
    b: float  # predicted mean competitor yield <theta, x>
    gamma: float = 0.0
    p_cap: Optional[float] = None
    yield_box: Tuple[float, float] = DEFAULT_YIELD_BOX

    def __post_init__(self):
        if self.p_cap is None:
            self.p_cap = DEFAULT_CAP_FACTOR * self.primitives.par
        r_lo, r_hi = self.yield_box
        if not r_lo < r_hi:
            raise ValueError("yield_box must satisfy r_lo < r_hi")
        if not self.p_cap > self.gamma:
            raise ValueError("price cap must exceed gamma")
        if not bond_mod.price(self.primitives, r_hi) < self.p_cap:
            raise ValueError("price cap unattainable inside the yield box")


def expected_reward(q: QuoteProblem, p: float) -> float:
    """(p - gamma) F(V^-1(p) - b); errors if p falls outside the image of
    the yield box."""
    r_lo, r_hi = q.yield_box
    p_hi = bond_mod.price(q.primitives, r_lo)
    p_lo = bond_mod.price(q.primitives, r_hi)
    if not (p_lo <= p <= p_hi):
        raise ValueError("price outside the image of the yield box")
    r = bond_mod.yield_of_price(q.primitives, p)
    return (p - q.gamma) * dist.cdf(q.noise, r - q.b)


def foc_residual(q: QuoteProblem, r: float) -> float:
    """Psi(r, b) with the gamma shift: V'(r) F(r-b) + (V(r)-gamma) f(r-b)."""
    v = bond_mod.price(q.primitives, r)
    d1, _, _ = bond_mod.price_derivs(q.primitives, r)
    return d1 * dist.cdf(q.noise, r - q.b) + (v - q.gamma) * dist.pdf(q.noise, r - q.b)


def optimal_quote(q: QuoteProblem, tol: float = 1e-10,
                  grid: Optional[PriceGrid] = None):
    """Maximize the expected reward over p in (price(r_hi), p_cap].

    Returns (p_star, r_star, |Psi(r_star, b)|, cap_binding).  ``grid`` may
    carry a precomputed price grid for the same primitives and yield box.
    """
    if grid is None or grid.primitives is not q.primitives \
            or grid.yield_box != q.yield_box:
        grid = PriceGrid(q.primitives, q.yield_box)
    cache_key = (q.b, q.gamma, q.p_cap, tol)
    cached = grid._quote_cache.get(cache_key)
    if cached is not None:
        return cached

    r_lo, r_hi = q.yield_box
    rs, vs = grid.r, grid.v
    feasible = vs <= q.p_cap
    cap_reachable = not bool(feasible[0])  # price(r_lo) > p_cap

    g = (vs - q.gamma) * dist.cdf(q.noise, rs - q.b)
    g_feas = np.where(feasible, g, -np.inf)
    if not np.any(np.isfinite(g_feas)):
        raise ValueError("reward non-finite over the whole grid")
    i = int(np.argmax(g_feas))

    prim = q.primitives

    def gfun(r: float) -> float:
        v = bond_mod.price(prim, r)
        if v > q.p_cap:
            return -math.inf
        return (v - q.gamma) * dist.cdf(q.noise, r - q.b)

    a = rs[max(i - 1, 0)]
    c = rs[min(i + 1, GRID_POINTS - 1)]
    # bracket width worth tol in relative price
    d1_here = abs(bond_mod.price_derivs(prim, rs[i])[0])
    r_eps = tol * max(1.0, abs(vs[i])) / max(d1_here, 1e-12)

    r_star = None
    if 0 < i < GRID_POINTS - 1:
        r_star = _refine_foc(q, a, c, rs[i], r_eps)
    if r_star is None:
        # boundary cell or no sign change: golden-section on the reward
        x1 = c - _INV_GOLDEN * (c - a)
        x2 = a + _INV_GOLDEN * (c - a)
        f1, f2 = gfun(x1), gfun(x2)
        while (c - a) > r_eps:
            if f1 < f2:
                a, x1, f1 = x1, x2, f2
                x2 = a + _INV_GOLDEN * (c - a)
                f2 = gfun(x2)
            else:
                c, x2, f2 = x2, x1, f1
                x1 = c - _INV_GOLDEN * (c - a)
                f1 = gfun(x1)
        r_star = 0.5 * (a + c)
    p_star = bond_mod.price(prim, r_star)

    cap_binding = False
    if cap_reachable or p_star > q.p_cap:
        r_cap = grid.cap_yield(q.p_cap)
        g_here = (p_star - q.gamma) * dist.cdf(q.noise, r_star - q.b)
        g_cap = (q.p_cap - q.gamma) * dist.cdf(q.noise, r_cap - q.b)
        if p_star > q.p_cap or g_here <= g_cap:
            r_star, p_star, cap_binding = r_cap, q.p_cap, True

    result = (float(p_star), float(r_star), abs(foc_residual(q, r_star)), cap_binding)
    grid._quote_cache[cache_key] = result
    return result


def _psi_pair(q: QuoteProblem, r: float) -> Tuple[float, float]:
    """Psi and its derivative in r at the current problem."""
    v, d1, d2 = bond_mod.price_curve(q.primitives, r)
    x = r - q.b
    F = dist.cdf(q.noise, x)
    f = dist.pdf(q.noise, x)
    fp = -f * (x - q.noise.mu) / (q.noise.sigma ** 2)  # f' (zero where f is)
    psi = d1 * F + (v - q.gamma) * f
    dpsi = d2 * F + 2.0 * d1 * f + (v - q.gamma) * fp
    return psi, dpsi


def _refine_foc(q: QuoteProblem, a: float, c: float, r0: float,
                r_eps: float) -> Optional[float]:
    """Safeguarded Newton on Psi inside [a, c]; None if Psi has no sign
    change over the bracket (boundary or plateau optimum)."""
    psi_a, _ = _psi_pair(q, a)
    psi_c, _ = _psi_pair(q, c)
    if not (psi_a > 0.0 > psi_c):
        return None
    lo, hi = a, c
    r = r0
    for _ in range(80):
        psi, dpsi = _psi_pair(q, r)
        if psi > 0.0:
            lo = r
        elif psi < 0.0:
            hi = r
        else:
            return r
        r_new = r - psi / dpsi if dpsi < 0.0 else None
        if r_new is None or not (lo < r_new < hi):
            r_new = 0.5 * (lo + hi)
        if abs(r_new - r) < max(1e-12, r_eps) or hi - lo < 1e-15:
            return r_new
        r = r_new
    return 0.5 * (lo + hi)


def gfun_at_cap(q: QuoteProblem, prim: BondPrimitives) -> float:
    r_cap = bond_mod.yield_of_price(prim, q.p_cap)
    return (q.p_cap - q.gamma) * dist.cdf(q.noise, r_cap - q.b)

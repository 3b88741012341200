"""Pricing policies behind a common interface: the two-stage multi-task
learner, pooled learning, individual per-bond learning, and the
clairvoyant benchmark that knows the true coefficients.

All learning policies follow the doubling episode schedule: episode k has
length 2^(k-1) and its estimates are fit on the previous episode's
observations only.  Episode 1 has no data; every learning policy quotes
with the zero coefficient vector there (a fixed cold-start convention that
contributes O(1) regret).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .bond import BondPrimitives
from .distributions import NoiseSpec
from .estimation import (EstimatorState, lambda_schedule, project_ball,
                         stage1_fit, stage2_fit)
from .likelihood import Observation, ObservationBatch
from .pricing import DEFAULT_YIELD_BOX, PriceGrid, QuoteProblem, optimal_quote

TSMT = "tsmt"
POOLING = "pooling"
INDIVIDUAL = "individual"
ORACLE = "oracle"


def episode_index(t: int) -> Tuple[int, int]:
    """Episode k containing round t under lengths 1, 2, 4, 8, ...

    Returns (k, tau_k); episode k covers rounds [2^(k-1), 2^k - 1].
    """
    if t < 1:
        raise ValueError("rounds are 1-based")
    k = int(t).bit_length()
    return k, 1 << (k - 1)


@dataclass
class PolicyConfig:
    """Shared knobs: known noise family, coefficient bound, solver
    tolerances.  ``lambda_scale`` multiplies the stage II schedule; the
    simulation front end raises it to match the unit-norm context scale."""

    noise: NoiseSpec
    W: float = 5.0
    gamma: float = 0.0
    p_cap: Optional[float] = None
    yield_box: Tuple[float, float] = DEFAULT_YIELD_BOX
    lambda_mode: str = "experiment"
    lambda_scale: float = 1.0
    u_F: float = 1.0
    x_bar: float = 1.0
    fit_tol: float = 1e-8
    quote_tol: float = 1e-8
    max_fit_iter: int = 10_000


class BasePolicy:
    """Episode buffering, refit triggering, and quoting shared by all kinds."""

    kind = "base"

    def __init__(self, cfg: PolicyConfig, M: int, d: int):
        self.cfg = cfg
        self.M = M
        self.d = d
        self.episode = 1
        self.buffer: List[Observation] = []
        self.last_t = 0

    # -- episode machinery -------------------------------------------------

    def _advance(self, t: int) -> None:
        k, _ = episode_index(t)
        if t < self.last_t:
            raise ValueError("out-of-order round index")
        self.last_t = t
        while self.episode < k:
            self._refit(self.buffer)
            self.buffer = []
            self.episode += 1

    def observe(self, obs: Observation, t: int) -> None:
        self._advance(t)
        self.buffer.append(obs)

    # -- quoting -----------------------------------------------------------

    def theta_for(self, bond_id: int) -> np.ndarray:
        raise NotImplementedError

    def _refit(self, observations: List[Observation]) -> None:
        raise NotImplementedError

    def quote_full(self, t: int, bond_id: int, x: np.ndarray,
                   primitives: BondPrimitives, grid: Optional[PriceGrid] = None):
        """Returns (price, yield, foc_residual, cap_binding, theta_used)."""
        self._advance(t)
        if not 0 <= bond_id < self.M:
            raise ValueError(f"unknown bond id {bond_id}")
        theta = project_ball(self.theta_for(bond_id), self.cfg.W)
        b = float(x @ theta)
        problem = QuoteProblem(primitives, self.cfg.noise, b,
                               gamma=self.cfg.gamma, p_cap=self.cfg.p_cap,
                               yield_box=self.cfg.yield_box)
        p, r, foc, cap = optimal_quote(problem, tol=self.cfg.quote_tol, grid=grid)
        return p, r, foc, cap, theta

    def quote(self, t: int, bond_id: int, x: np.ndarray,
              primitives: BondPrimitives, grid: Optional[PriceGrid] = None) -> float:
        return self.quote_full(t, bond_id, x, primitives, grid)[0]


class OraclePolicy(BasePolicy):
    """Quotes with fixed per-bond coefficients (the simulation truth, or a
    ridge fit in replay mode); ignores feedback."""

    kind = ORACLE

    def __init__(self, cfg: PolicyConfig, thetas: np.ndarray):
        thetas = np.asarray(thetas, dtype=float)
        super().__init__(cfg, M=thetas.shape[0], d=thetas.shape[1])
        self.thetas = thetas

    def theta_for(self, bond_id: int) -> np.ndarray:
        return self.thetas[bond_id]

    def _refit(self, observations: List[Observation]) -> None:
        pass


class PoolingPolicy(BasePolicy):
    """One shared coefficient vector fit on all bonds' data."""

    kind = POOLING

    def __init__(self, cfg: PolicyConfig, M: int, d: int):
        super().__init__(cfg, M, d)
        self.theta_bar = np.zeros(d)

    def theta_for(self, bond_id: int) -> np.ndarray:
        return self.theta_bar

    def _refit(self, observations: List[Observation]) -> None:
        if not observations:
            return
        self.theta_bar = stage1_fit(
            observations, self.cfg.noise, init=self.theta_bar,
            tol=self.cfg.fit_tol, max_iter=self.cfg.max_fit_iter,
            norm_cap=4.0 * self.cfg.W, ridge=self.d / len(observations))


class TSMTPolicy(BasePolicy):
    """Two-stage multi-task learner: pooled MLE, then per-bond regularized
    refinement toward the pooled estimate."""

    kind = TSMT

    def __init__(self, cfg: PolicyConfig, M: int, d: int):
        super().__init__(cfg, M, d)
        self.state = EstimatorState(episode=1, theta_bar=np.zeros(d), W=cfg.W)

    def theta_for(self, bond_id: int) -> np.ndarray:
        return self.state.theta_hat.get(bond_id, self.state.theta_bar)

    def _refit(self, observations: List[Observation]) -> None:
        if not observations:
            return
        cfg = self.cfg
        batch = ObservationBatch.from_observations(observations)
        theta_bar = stage1_fit(batch, cfg.noise, init=self.state.theta_bar,
                               tol=cfg.fit_tol, max_iter=cfg.max_fit_iter,
                               norm_cap=4.0 * cfg.W, ridge=self.d / batch.n)
        state = EstimatorState(episode=self.episode + 1, theta_bar=theta_bar,
                               W=cfg.W)
        counts = np.bincount(batch.bond_ids, minlength=self.M)
        for j in range(self.M):
            n_j = int(counts[j])
            state.counts[j] = n_j
            if n_j == 0:
                continue
            lam = cfg.lambda_scale * lambda_schedule(
                cfg.lambda_mode, self.d, n_j, self.M,
                u_F=cfg.u_F, x_bar=cfg.x_bar)
            state.lambdas[j] = lam
            state.theta_hat[j] = stage2_fit(
                batch.restrict(j), theta_bar, lam, cfg.noise,
                tol=cfg.fit_tol, max_iter=cfg.max_fit_iter,
                norm_cap=4.0 * cfg.W)
        self.state = state


class IndividualPolicy(BasePolicy):
    """Unregularized per-bond MLE, falling back to the pooled estimate for
    bonds with no prior-episode data."""

    kind = INDIVIDUAL

    def __init__(self, cfg: PolicyConfig, M: int, d: int):
        super().__init__(cfg, M, d)
        self.theta_bar = np.zeros(d)
        self.theta_j: Dict[int, np.ndarray] = {}

    def theta_for(self, bond_id: int) -> np.ndarray:
        return self.theta_j.get(bond_id, self.theta_bar)

    def _refit(self, observations: List[Observation]) -> None:
        if not observations:
            return
        cfg = self.cfg
        batch = ObservationBatch.from_observations(observations)
        self.theta_bar = stage1_fit(batch, cfg.noise, init=self.theta_bar,
                                    tol=cfg.fit_tol, max_iter=cfg.max_fit_iter,
                                    norm_cap=4.0 * cfg.W, ridge=self.d / batch.n)
        prev = self.theta_j
        self.theta_j = {}
        for j in np.unique(batch.bond_ids):
            # unregularized per-bond MLE warm-started from the bond's own
            # previous estimate; pooled information only serves zero-data
            # bonds through theta_for's fallback
            sub = batch.restrict(int(j))
            self.theta_j[int(j)] = stage1_fit(
                sub, cfg.noise, init=prev.get(int(j)),
                tol=cfg.fit_tol, max_iter=cfg.max_fit_iter,
                norm_cap=4.0 * cfg.W)


def make_policy(kind: str, cfg: PolicyConfig, M: int, d: int,
                thetas: Optional[np.ndarray] = None) -> BasePolicy:
    if kind == TSMT:
        return TSMTPolicy(cfg, M, d)
    if kind == POOLING:
        return PoolingPolicy(cfg, M, d)
    if kind == INDIVIDUAL:
        return IndividualPolicy(cfg, M, d)
    if kind == ORACLE:
        if thetas is None:
            raise ValueError("oracle policy requires the true coefficients")
        return OraclePolicy(cfg, thetas)
    raise ValueError(f"unknown policy kind {kind!r}")

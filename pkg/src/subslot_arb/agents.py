"""Arbitrage agents: the always-on simple agent and the risk-averse agent.

Profits are written for both directions with ``d = +1`` (buy on DEX, sell on
CEX at the bid) and ``d = -1`` (sell on DEX, buy on CEX at the ask)::

    success:  d * Q * (cex_entry - dex_exec)
    close:    d * Q * (cex_entry - cex_close)

where ``cex_close`` is the ask for ``d = +1`` and the bid for ``d = -1``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from ._solver import CLOSE, RETRY, WAIT, solve_kernel
from .amm import BUY_ON_DEX

ACTIONS = ("close", "retry", "wait")


@dataclass(frozen=True)
class AgentParams:
    alpha: float = 0.35
    lam: float = 0.01
    theta: float = 0.0
    k_max: int = 3
    m_retry_guard: int = 3
    wait_max: int = 3
    n_paths: int = 16

    def __post_init__(self):
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must lie in [0, 1]")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.n_paths < 1 or self.k_max < 1:
            raise ValueError("n_paths and k_max must be >= 1")
        if self.wait_max < 0 or self.m_retry_guard < 0:
            raise ValueError("wait_max and m_retry_guard must be >= 0")

    def retry_guard(self, M: int) -> int:
        """Retry guard clipped so a one-step slot still allows retries."""
        return min(self.m_retry_guard, M - 1)


@dataclass(frozen=True)
class BeliefModel:
    """The agent's price model for expectations.

    Log-mid is a Gaussian walk with per-second volatility ``sigma``; bid and
    ask sit ``beta_halfspread`` either side of mid. The DEX price refreshes at
    slot boundaries to mid plus a basis that follows an AR(1) whose
    persistence ``basis_persistence`` is quoted per 12-second slot.
    ``basis_persistence = 1`` with ``basis_std = 0`` freezes the basis.
    """

    sigma: float
    beta_halfspread: float = 0.0
    basis_std: float = 0.0
    basis_persistence: float = 0.0
    fee: float = 0.0
    M: int = 12
    delta: float = 1.0

    @classmethod
    def from_calibration(cls, cal, fee: float, M: int) -> "BeliefModel":
        return cls(cal.sigma, cal.beta_halfspread, cal.basis_std, cal.basis_persistence, fee, M)

    def slot_ar(self) -> tuple[float, float]:
        """AR(1) coefficient and innovation std for one slot of length M * delta."""
        rho12 = self.basis_persistence
        if rho12 >= 1.0:
            return 1.0, 0.0
        rho = math.copysign(abs(rho12) ** (self.M * self.delta / 12.0), rho12)
        return rho, self.basis_std * math.sqrt(max(1.0 - rho * rho, 0.0))


@dataclass(frozen=True)
class Opportunity:
    direction: int  # BUY_ON_DEX or SELL_ON_DEX
    size: float  # Q, base units moved through the pool
    quote_amount: float  # quote paid (buy) or received (sell), fee included
    cex_bid: float
    cex_ask: float
    dex_price: float  # pool spot before the trade
    post_price: float  # pool spot after the trade

    @property
    def cex_entry(self) -> float:
        return self.cex_bid if self.direction == BUY_ON_DEX else self.cex_ask

    @property
    def exec_price(self) -> float:
        return self.quote_amount / self.size

    @property
    def success_profit(self) -> float:
        return self.direction * self.size * (self.cex_entry - self.exec_price)


@dataclass
class FallbackState:
    k: int
    m: int
    q: float
    entry_price: float
    direction: int = BUY_ON_DEX
    waits_used: int = 0

    def check(self, params: AgentParams, M: int) -> None:
        if not (0 <= self.k <= params.k_max and 0 <= self.m <= M and self.q > 0):
            raise ValueError(f"fallback state out of bounds: {self}")


@dataclass(frozen=True)
class Decision:
    action: str
    u_close: float
    u_retry: float  # nan when unavailable
    u_wait: float  # nan when unavailable

    @property
    def utilities(self) -> tuple[float, float, float]:
        return self.u_close, self.u_retry, self.u_wait

    @property
    def available(self) -> tuple[bool, bool, bool]:
        return tuple(not math.isnan(u) for u in self.utilities)


@dataclass
class FallbackSolution:
    value: float  # utility of the chosen root action
    value_std: float  # std of per-path root values
    path_values: np.ndarray
    decision: Decision
    actions: np.ndarray  # (k_max + 1, M + 1) action codes, -1 unreachable
    utilities: np.ndarray  # (k_max + 1, M + 1, 3), nan where unavailable

    def policy(self) -> dict[tuple[int, int], str]:
        ks, ms = np.nonzero(self.actions >= 0)
        return {(int(k), int(m)): ACTIONS[self.actions[k, m]] for k, m in zip(ks, ms)}


# ---------------------------------------------------------------------------
# Simple agent
# ---------------------------------------------------------------------------


def close_price(direction: int, bid: float, ask: float) -> float:
    return ask if direction == BUY_ON_DEX else bid


def close_profit(direction: int, q: float, entry: float, bid: float, ask: float) -> float:
    return direction * q * (entry - close_price(direction, bid, ask))


def simple_agent_step(opp: Opportunity, landed: bool, next_bid: float | None = None, next_ask: float | None = None) -> float:
    """Realized profit of the simple agent on one opportunity.

    On failure the position is closed one step later at ``next_bid`` /
    ``next_ask``.
    """
    if landed:
        return opp.success_profit
    if next_bid is None or next_ask is None:
        raise ValueError("failure profit needs the next quote")
    return close_profit(opp.direction, opp.size, opp.cex_entry, next_bid, next_ask)


# ---------------------------------------------------------------------------
# Risk-averse agent
# ---------------------------------------------------------------------------


def mixture_moments(x_success: float, ef: float, vf: float, alpha: float) -> tuple[float, float]:
    """Mean and variance of success-or-fallback profit."""
    mean = alpha * x_success + (1.0 - alpha) * ef
    var = alpha * (1.0 - alpha) * (x_success - ef) ** 2 + (1.0 - alpha) * vf
    return mean, var


def solve_fallback(
    state: FallbackState,
    params: AgentParams,
    belief: BeliefModel,
    rng: np.random.Generator,
    mid: float,
    dex_price: float,
    lead: int = 0,
) -> FallbackSolution:
    """Backward induction with Monte Carlo statistics at every node.

    ``mid`` and ``dex_price`` are the prices observed now; the root node sits
    ``lead`` seconds ahead (0 for a live decision, 1 when valuing a fallback
    from the entry point). Forced closure applies at ``k == k_max``.
    """
    M = belief.M
    state.check(params, M)
    k0, m0, w0 = state.k, state.m, state.waits_used
    J = params.k_max - k0
    S = lead + J * M - m0 if J >= 1 else lead
    N = params.n_paths
    z_mid = rng.standard_normal((N, S))
    z_eta = rng.standard_normal((N, J))
    rho, eta_sd = belief.slot_ar()
    v_root, actions, utils = solve_kernel(
        z_mid, z_eta, float(mid), float(dex_price), float(dex_price - mid),
        float(state.entry_price), int(state.direction), float(state.q),
        float(belief.sigma * math.sqrt(belief.delta)), float(belief.beta_halfspread), float(belief.fee),
        float(rho), float(eta_sd), float(params.alpha), float(params.lam),
        int(params.k_max), int(M), int(params.retry_guard(M)), int(params.wait_max),
        int(k0), int(m0), int(w0), int(lead),
    )
    u = utils[k0, m0]
    act = int(actions[k0, m0])
    if act < 0:
        raise RuntimeError("no action available at the root node")
    decision = Decision(ACTIONS[act], float(u[CLOSE]), float(u[RETRY]), float(u[WAIT]))
    return FallbackSolution(float(u[act]), float(np.std(v_root)), v_root, decision, actions, utils)


def fallback_moments(opp: Opportunity, params: AgentParams, belief: BeliefModel, rng: np.random.Generator, mid: float) -> tuple[float, float]:
    """Mean and variance of the fallback value one step after a failed entry.

    On failure the competing arbitrage has parked the pool at ``post_price``.
    """
    state = FallbackState(k=1, m=1, q=opp.size, entry_price=opp.cex_entry, direction=opp.direction)
    sol = solve_fallback(state, params, belief, rng, mid, opp.post_price, lead=1)
    v = sol.path_values
    return float(v.mean()), float(v.var())


def entry_value(opp: Opportunity, params: AgentParams, belief: BeliefModel, rng: np.random.Generator) -> tuple[float, float, bool]:
    """Expected profit, its std, and whether the risk-adjusted value clears theta."""
    xs = opp.success_profit
    if params.alpha >= 1.0:
        mean, var = xs, 0.0
    else:
        mid = 0.5 * (opp.cex_bid + opp.cex_ask)
        ef, vf = fallback_moments(opp, params, belief, rng, mid)
        mean, var = mixture_moments(xs, ef, vf, params.alpha)
    sd = math.sqrt(var)
    return mean, sd, mean - params.lam * sd >= params.theta


@dataclass
class TraceRow:
    slot: int
    subslot: int
    k: int
    action: str
    u_close: float
    u_retry: float
    u_wait: float
    realized_pnl: float = float("nan")


TRACE_HEADER = ("slot", "subslot", "k", "action", "u_close", "u_retry", "u_wait", "realized_pnl")


def write_trace_csv(path: str | Path, rows: Sequence[TraceRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_HEADER)
        for r in rows:
            w.writerow((r.slot, r.subslot, r.k, r.action, repr(r.u_close), repr(r.u_retry), repr(r.u_wait), repr(r.realized_pnl)))


class Market(Protocol):
    """Realized prices seen by a live fallback episode (time in seconds)."""

    def quote(self, t: int) -> tuple[float, float]: ...

    def dex_price(self, t: int) -> float: ...

    def land_retry(self, t: int, direction: int, q: float) -> float | None:
        """Attempt the DEX leg at execution time ``t``; exec price or None."""


@dataclass
class EpisodeResult:
    pnl: float
    landed_on_entry: bool
    trace: list[TraceRow] = field(default_factory=list)


def risk_averse_agent_step(
    opp: Opportunity,
    t0: int,
    params: AgentParams,
    belief: BeliefModel,
    rng: np.random.Generator,
    market: Market,
    landing_rng: np.random.Generator,
) -> EpisodeResult:
    """Run one entered opportunity to completion against a realized market.

    The entry leg lands with probability alpha. On failure the policy is
    re-solved at every decision point from realized quotes; retries land at
    the next slot boundary through ``market.land_retry``.
    """
    if landing_rng.random() < params.alpha:
        return EpisodeResult(opp.success_profit, True)
    M = belief.M
    d, q, entry = opp.direction, opp.size, opp.cex_entry
    state = FallbackState(k=1, m=1, q=q, entry_price=entry, direction=d)
    slot_start = t0
    trace: list[TraceRow] = []
    while True:
        t = slot_start + state.m
        bid, ask = market.quote(t)
        if state.k >= params.k_max:
            pnl = close_profit(d, q, entry, bid, ask)
            trace.append(TraceRow(t // M, state.m, state.k, "close", pnl, math.nan, math.nan, pnl))
            return EpisodeResult(pnl, False, trace)
        sol = solve_fallback(state, params, belief, rng, 0.5 * (bid + ask), market.dex_price(t))
        dec = sol.decision
        row = TraceRow(t // M, state.m, state.k, dec.action, *dec.utilities)
        trace.append(row)
        if dec.action == "close":
            row.realized_pnl = close_profit(d, q, entry, bid, ask)
            return EpisodeResult(row.realized_pnl, False, trace)
        if dec.action == "wait":
            state.m += 1
            state.waits_used += 1
            continue
        t_land = slot_start + M
        px = market.land_retry(t_land, d, q)
        if px is not None:
            row.realized_pnl = d * q * (entry - px)
            return EpisodeResult(row.realized_pnl, False, trace)
        slot_start = t_land
        state.k += 1
        state.m = 0
        state.waits_used = 0

"""Paired 12-second / 1-second execution experiments.

Time advances in 1-second steps. Every step the DEX price evolves through
the price engine. At execution points (every slot boundary under the 12-second
regime, every second under the 1-second regime) queued retries land or fail,
then any arbitrage opportunity is contested: Agent 1 wins it with probability
alpha if it attempts, otherwise Agent 2 takes it. Agent 1 fallback episodes
make decisions every second regardless of regime.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable


from . import rng as rngmod
from .agents import (
    AgentParams,
    BeliefModel,
    FallbackState,
    Opportunity,
    TraceRow,
    close_price,
    entry_value,
    solve_fallback,
)
from .amm import (
    BUY_ON_DEX,
    PoolState,
    Side,
    amount_in_for_out,
    execute_swap,
    optimal_arb_size,
    repriced,
    spot_price,
)
from .market_data import (
    CalibrationConstants,
    DataError,
    NoiseDistribution,
    TickSeries,
    calibrate,
    load_dex_prices,
    load_ticks,
)
from .price_engine import (
    SLOT_SECONDS,
    EngineConfig,
    ReversionModel,
    advance,
    default_noise_distribution,
    fit_reversion_prices,
    sample_noise_trades,
    synth_cex,
    synth_dex_reference,
)

log = logging.getLogger(__name__)

SIMPLE = "simple"
RISK_AVERSE = "risk_averse"
AGENT_MODELS = (SIMPLE, RISK_AVERSE)


@dataclass(frozen=True)
class RegimeConfig:
    tau: int = 12
    delta: int = 1

    def __post_init__(self):
        if self.delta < 1 or self.tau % self.delta or SLOT_SECONDS % self.tau:
            raise ValueError("tau must be a multiple of delta and divide 12 seconds")

    @property
    def M(self) -> int:
        return self.tau // self.delta

    @property
    def name(self) -> str:
        return f"{self.tau}s"


SLOW = RegimeConfig(12)
FAST = RegimeConfig(1)


@dataclass(frozen=True)
class MarketSpec:
    """Where market data come from: synthetic generators or CSV/JSON files."""

    p0: float = 3000.0
    sigma: float = 1e-4
    beta_halfspread: float = 2e-6
    tracking: float = 0.3
    error_correction: float = 0.02
    resid_std: float = 1e-5
    noise_scale_bp: float = 3.0
    base_reserve: float = 1000.0
    ticks_path: str | None = None
    dex_path: str | None = None
    noise_path: str | None = None
    calibration_path: str | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    regime: RegimeConfig = SLOW
    engine: EngineConfig = EngineConfig()
    fee: float = 0.0005
    agent_model: str = SIMPLE
    params: AgentParams = AgentParams()
    market: MarketSpec = MarketSpec()
    n_slots: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.agent_model not in AGENT_MODELS:
            raise ValueError(f"agent_model must be one of {AGENT_MODELS}")
        if self.n_slots < 1:
            raise ValueError("n_slots must be >= 1")


@dataclass
class AgentMetrics:
    txn_count: int = 0
    eth_volume: float = 0.0
    usdc_volume: float = 0.0
    pnl: float = 0.0


@dataclass
class RunMetrics:
    agent1: AgentMetrics = field(default_factory=AgentMetrics)
    agent2: AgentMetrics = field(default_factory=AgentMetrics)
    opportunities: int = 0
    entries: int = 0
    declines: int = 0
    retry_fills: int = 0
    forced_closes: int = 0
    truncated: bool = False

    @property
    def txn_count(self) -> int:
        return self.agent1.txn_count

    @property
    def eth_volume(self) -> float:
        return self.agent1.eth_volume

    @property
    def usdc_volume(self) -> float:
        return self.agent1.usdc_volume

    @property
    def pnl(self) -> float:
        return self.agent1.pnl

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MarketInputs:
    """Everything a run reads from the market, shared by paired runs."""

    ticks: TickSeries
    bid: list[float]
    ask: list[float]
    mid: list[float]
    cex_return: list[float]  # cex_return[t] is the mid return ending at t
    reversion: ReversionModel
    noise_dist: NoiseDistribution
    noise_by_second: dict[int, list[int]]
    calibration: CalibrationConstants
    horizon: int  # seconds simulated
    truncated: bool = False


def prepare_market(spec: MarketSpec, seed: int, n_slots: int, window_seconds: int = 300, tail: int = 64) -> MarketInputs:
    """Load or synthesize CEX quotes, reversion fits, noise schedule, calibration."""
    horizon = n_slots * SLOT_SECONDS
    need = horizon + 1 + tail
    truncated = False
    if spec.ticks_path:
        ticks = load_ticks(spec.ticks_path).to_grid(1000)
        if len(ticks) < need:
            truncated = True
            horizon = max((len(ticks) - 1 - tail) // SLOT_SECONDS, 0) * SLOT_SECONDS
            if horizon == 0:
                raise DataError("tick file too short for a single slot")
            log.warning("tick data exhausted: horizon truncated to %d seconds", horizon)
        dex = load_dex_prices(spec.dex_path) if spec.dex_path else None
    else:
        ticks = synth_cex(seed, need, spec.sigma, spec.beta_halfspread, spec.p0)
        dex = synth_dex_reference(seed, ticks, spec.tracking, spec.error_correction, spec.resid_std)

    mid = ticks.mid
    if dex is not None:
        dex_on_grid = dex.values_at(ticks.timestamp_ms)
        reversion = fit_reversion_prices(mid, dex_on_grid, window_seconds)
    else:
        reversion = ReversionModel.constant(0.0, 0.0, window_seconds=window_seconds)
        log.warning("no DEX reference series: reversion is a no-op")

    if spec.calibration_path:
        cal = CalibrationConstants.load(spec.calibration_path)
    else:
        cal = calibrate(ticks, dex)

    if spec.noise_path:
        noise_dist = NoiseDistribution.load(spec.noise_path)
    else:
        noise_dist = default_noise_distribution(spec.noise_scale_bp)

    streams = rngmod.RngStreams(seed)
    noise_by_second: dict[int, list[int]] = {}
    for block in range(horizon // SLOT_SECONDS):
        for pos, imp in sample_noise_trades(noise_dist, SLOT_SECONDS, streams):
            noise_by_second.setdefault(block * SLOT_SECONDS + pos + 1, []).append(imp)

    mid_l = mid.tolist()
    ret = [0.0] + [mid_l[i] / mid_l[i - 1] - 1.0 for i in range(1, len(mid_l))]
    return MarketInputs(
        ticks, ticks.bid.tolist(), ticks.ask.tolist(), mid_l, ret, reversion, noise_dist,
        noise_by_second, cal, horizon, truncated,
    )


def detect_opportunity(pool: PoolState, bid: float, ask: float) -> Opportunity | None:
    """An opportunity exists iff the pool sits strictly outside the fee band."""
    size = optimal_arb_size(pool, bid, ask)
    if size is None:
        return None
    res = execute_swap(pool, size.side, size.amount_in)
    return Opportunity(
        size.direction, res.base_amount, res.quote_amount, bid, ask,
        spot_price(pool), spot_price(res.new_pool),
    )


@dataclass
class _Episode:
    id: int
    direction: int
    q: float
    entry: float
    k: int = 1
    m: int = 1
    waits: int = 0
    slot_start: int = 0
    simple: bool = False
    last_row: TraceRow | None = None


class Simulation:
    """One run: a fixed regime, configuration, fee tier, agent model and seed."""

    def __init__(self, config: ExperimentConfig, market: MarketInputs):
        self.cfg = config
        self.mkt = market
        self.regime = config.regime
        self.params = config.params
        self.M = config.regime.M
        self.pool = PoolState.from_price(config.market.base_reserve, market.mid[0], config.fee)
        self.observed_dex = spot_price(self.pool)
        streams = rngmod.RngStreams(config.seed)
        self.landing_rng = streams[rngmod.ARB_LANDING]
        self.belief_rng = streams[rngmod.BELIEF_MC]
        self.belief = BeliefModel.from_calibration(market.calibration, config.fee, self.M)
        self.simple = config.agent_model == SIMPLE
        self.metrics = RunMetrics(truncated=market.truncated)
        self.events: list[dict] = []
        self.trace: list[TraceRow] = []
        self._next_id = 0
        self._due: dict[int, list[_Episode]] = {}  # decision time -> episodes
        self._retries: dict[int, list[_Episode]] = {}  # execution time -> episodes
        self._post: list[_Episode] = []
        if market.truncated:
            self._emit(0, "truncated", {"horizon_seconds": market.horizon})

    # -- bookkeeping --------------------------------------------------------

    def _emit(self, t: int, kind: str, payload: dict) -> dict:
        ev = {
            "timestamp": int(self.mkt.ticks.timestamp_ms[t]),
            "slot": t // SLOT_SECONDS,
            "subslot": t % SLOT_SECONDS,
            "event_kind": kind,
            "payload": payload,
        }
        self.events.append(ev)
        apply_event(self.metrics, ev)
        return ev

    def _set_pool(self, pool: PoolState) -> None:
        if pool.k < self.pool.k:
            raise AssertionError("pool invariant decreased")
        self.pool = pool

    # -- the clock ----------------------------------------------------------

    def run(self) -> RunMetrics:
        for n in range(self.mkt.horizon // SLOT_SECONDS):
            self.run_slot(n)
        self.finish()
        return self.metrics

    def run_slot(self, n: int) -> None:
        """Advance through Ethereum slot ``n`` (12 one-second steps)."""
        for t in range(n * SLOT_SECONDS, (n + 1) * SLOT_SECONDS):
            self.step(t)

    def step(self, t: int) -> None:
        cfg = self.cfg.engine
        if t > 0 and (cfg.reversion_enabled or cfg.noise_enabled):
            impacts = self.mkt.noise_by_second.get(t, ()) if cfg.noise_enabled else ()
            model = self.mkt.reversion if cfg.reversion_enabled else None
            p = spot_price(self.pool)
            p_new, _ = advance(p, t, None, model, self.mkt.cex_return[t], impacts)
            if p_new != p:
                self._set_pool(repriced(self.pool, p_new))
            if impacts:
                self._emit(t, "noise", {"impacts_bp": list(impacts), "price": spot_price(self.pool)})

        is_exec = t % self.regime.tau == 0
        if is_exec:
            self.observed_dex = spot_price(self.pool)

        for ep in self._due.pop(t, ()):
            self._decide(ep, t)
        if is_exec:
            for ep in self._retries.pop(t, ()):
                self._land_retry(ep, t)
            self._contest(t)
            self.observed_dex = spot_price(self.pool)
            post, self._post = self._post, []
            for ep in post:
                self._decide(ep, t)

    def finish(self) -> None:
        """Close whatever is still open at the end of the horizon."""
        t = self.mkt.horizon
        open_eps = {ep.id: ep for eps in (*self._due.values(), *self._retries.values()) for ep in eps}
        for ep_id in sorted(open_eps):
            self._close(open_eps[ep_id], t, "horizon")
        self._due.clear()
        self._retries.clear()

    # -- agent actions --------------------------------------------------------

    def _contest(self, t: int) -> None:
        bid, ask = self.mkt.bid[t], self.mkt.ask[t]
        opp = detect_opportunity(self.pool, bid, ask)
        if opp is None:
            return
        payload = {
            "direction": opp.direction, "size": opp.size, "quote_amount": opp.quote_amount,
            "bid": bid, "ask": ask, "dex_price": opp.dex_price, "post_price": opp.post_price,
        }
        if self.simple:
            enter = True
        else:
            mean, sd, enter = entry_value(opp, self.params, self.belief, self.belief_rng)
            payload.update(expected=mean, std=sd)
        landed = enter and self.landing_rng.random() < self.params.alpha
        winner = 1 if landed else 2
        payload.update(agent1_enters=enter, winner=winner)
        self._emit(t, "opportunity", payload)

        side = Side.BUY_BASE if opp.direction == BUY_ON_DEX else Side.SELL_BASE
        res = execute_swap(self.pool, side, opp.quote_amount if side is Side.BUY_BASE else opp.size)
        self._set_pool(res.new_pool)
        self._emit(t, "fill", {
            "agent": winner, "kind": "arb", "direction": opp.direction, "q": opp.size,
            "quote": opp.quote_amount, "entry": opp.cex_entry, "price": opp.exec_price,
            "pnl": opp.success_profit,
        })
        if landed:
            # Agent 2 sold on the CEX too and unwinds at once
            px = close_price(opp.direction, bid, ask)
            self._emit(t, "cex_close", {
                "agent": 2, "reason": "lost", "direction": opp.direction, "q": opp.size,
                "entry": opp.cex_entry, "price": px, "pnl": opp.direction * opp.size * (opp.cex_entry - px),
            })
        elif enter:
            ep = _Episode(self._next_id, opp.direction, opp.size, opp.cex_entry, slot_start=t, simple=self.simple)
            self._next_id += 1
            self._emit(t, "episode_open", {"episode": ep.id, "direction": ep.direction, "q": ep.q, "entry": ep.entry})
            self._due.setdefault(t + 1, []).append(ep)

    def _close(self, ep: _Episode, t: int, reason: str) -> None:
        px = close_price(ep.direction, self.mkt.bid[t], self.mkt.ask[t])
        pnl = ep.direction * ep.q * (ep.entry - px)
        self._emit(t, "cex_close", {
            "agent": 1, "reason": reason, "episode": ep.id, "direction": ep.direction, "q": ep.q,
            "entry": ep.entry, "price": px, "pnl": pnl,
        })
        if ep.last_row is not None:
            ep.last_row.realized_pnl = pnl

    def _decide(self, ep: _Episode, t: int) -> None:
        if ep.simple:
            self._close(ep, t, "simple")
            return
        state = FallbackState(ep.k, ep.m, ep.q, ep.entry, ep.direction, ep.waits)
        sol = solve_fallback(state, self.params, self.belief, self.belief_rng, self.mkt.mid[t], self.observed_dex)
        dec = sol.decision
        ep.last_row = TraceRow(t // self.regime.tau, ep.m, ep.k, dec.action, *dec.utilities)
        self.trace.append(ep.last_row)
        self._emit(t, "decision", {
            "episode": ep.id, "k": ep.k, "m": ep.m, "waits": ep.waits, "action": dec.action,
            "u_close": dec.u_close, "u_retry": dec.u_retry, "u_wait": dec.u_wait,
        })
        if dec.action == "close":
            self._close(ep, t, "close")
        elif dec.action == "wait":
            ep.m += 1
            ep.waits += 1
            self._due.setdefault(t + 1, []).append(ep)
        else:
            self._retries.setdefault(ep.slot_start + self.regime.tau, []).append(ep)

    def _land_retry(self, ep: _Episode, t: int) -> None:
        landed = self.landing_rng.random() < self.params.alpha
        if landed:
            if ep.direction == BUY_ON_DEX:
                res = execute_swap(self.pool, Side.BUY_BASE, amount_in_for_out(self.pool, Side.BUY_BASE, ep.q))
                quote = res.amount_in
            else:
                res = execute_swap(self.pool, Side.SELL_BASE, ep.q)
                quote = res.amount_out
            self._set_pool(res.new_pool)
            price = quote / ep.q
            pnl = ep.direction * ep.q * (ep.entry - price)
            self._emit(t, "fill", {
                "agent": 1, "kind": "retry", "episode": ep.id, "direction": ep.direction, "q": ep.q,
                "quote": quote, "entry": ep.entry, "price": price, "pnl": pnl,
            })
            if ep.last_row is not None:
                ep.last_row.realized_pnl = pnl
            return
        ep.k += 1
        self._emit(t, "retry_failed", {"episode": ep.id, "k": ep.k})
        if ep.k >= self.params.k_max:
            self._close(ep, t, "forced")
            return
        ep.m = 0
        ep.waits = 0
        ep.slot_start = t
        self._post.append(ep)


def apply_event(metrics: RunMetrics, ev: dict) -> None:
    """Fold one event into the metrics; replaying a log reproduces a run."""
    kind = ev["event_kind"]
    p = ev["payload"]
    if kind == "opportunity":
        metrics.opportunities += 1
        if p["agent1_enters"]:
            metrics.entries += 1
        else:
            metrics.declines += 1
    elif kind == "fill":
        a = metrics.agent1 if p["agent"] == 1 else metrics.agent2
        a.txn_count += 1
        a.eth_volume += p["q"]
        a.usdc_volume += p["quote"]
        a.pnl += p["pnl"]
        if p["kind"] == "retry":
            metrics.retry_fills += 1
    elif kind == "cex_close":
        a = metrics.agent1 if p["agent"] == 1 else metrics.agent2
        a.pnl += p["pnl"]
        if p["reason"] == "forced":
            metrics.forced_closes += 1


def replay_metrics(events: Iterable[dict]) -> RunMetrics:
    metrics = RunMetrics()
    for ev in events:
        if ev["event_kind"] == "truncated":
            metrics.truncated = True
        apply_event(metrics, ev)
    return metrics


def run_experiment(config: ExperimentConfig, market: MarketInputs | None = None) -> tuple[RunMetrics, list[dict]]:
    if market is None:
        market = prepare_market(config.market, config.seed, config.n_slots, config.engine.window_seconds,
                                tail=config.params.k_max * SLOT_SECONDS + 16)
    sim = Simulation(config, market)
    metrics = sim.run()
    return metrics, sim.events


def dump_events(events: Iterable[dict]) -> str:
    return "".join(json.dumps(ev, sort_keys=True) + "\n" for ev in events)


def write_event_log(path: str | Path, events: Iterable[dict]) -> None:
    Path(path).write_text(dump_events(events), encoding="utf-8")


def read_event_log(path: str | Path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]

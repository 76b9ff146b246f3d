"""Experiment matrix, percent-change tables and cross-pool aggregation."""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Mapping, Sequence

from .agents import AgentParams
from .amm import FEE_TIERS
from .price_engine import SLOT_SECONDS, EngineConfig
from .sim import (
    AGENT_MODELS,
    FAST,
    RISK_AVERSE,
    SIMPLE,
    SLOW,
    ExperimentConfig,
    MarketInputs,
    MarketSpec,
    RunMetrics,
    prepare_market,
    run_experiment,
    write_event_log,
)

log = logging.getLogger(__name__)

METRICS = ("pnl", "eth_volume", "usdc_volume", "txns")
HEADER = ("Configuration", "ΔPnL", "ΔETH Vol.", "ΔUSDC Vol.", "ΔTxns")
MODEL_NAMES = {SIMPLE: "Simple", RISK_AVERSE: "Risk-averse"}
ENGINE_CONFIGS = tuple(EngineConfig(rev, noise) for rev in (False, True) for noise in (False, True))
ROBUSTNESS_ALPHAS = (0.2, 0.35, 0.5)
ROBUSTNESS_LAMS = (0.0, 0.01, 0.03)


class MatrixError(RuntimeError):
    pass


@dataclass(frozen=True)
class WeightVector:
    """Per-fee-tier weights for combining pool-level deltas."""

    txn_weights: tuple[float, ...] = (0.037, 0.331, 0.632)
    volume_weights: tuple[float, ...] = (0.286, 0.503, 0.211)
    fees: tuple[float, ...] = FEE_TIERS

    def __post_init__(self):
        for name in ("txn_weights", "volume_weights"):
            w = getattr(self, name)
            if len(w) != len(self.fees):
                raise ValueError(f"{name} needs one entry per fee tier")
            if abs(math.fsum(w) - 1.0) > 1e-9:
                raise ValueError(f"{name} must sum to 1 (got {math.fsum(w)!r})")
            if any(x < 0 for x in w):
                raise ValueError(f"{name} must be non-negative")


DEFAULT_WEIGHTS = WeightVector()


@dataclass(frozen=True)
class MetricDeltas:
    """Percent changes from the 12-second to the 1-second regime."""

    pnl: float = math.nan
    eth_volume: float = math.nan
    usdc_volume: float = math.nan
    txns: float = math.nan

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.pnl, self.eth_volume, self.usdc_volume, self.txns)


def percent_change(fast: float, slow: float) -> float:
    """100 * (fast - slow) / slow, or nan when the slow value is zero."""
    if slow == 0:
        return math.nan
    return 100.0 * (fast - slow) / slow


def deltas_between(fast: RunMetrics, slow: RunMetrics) -> MetricDeltas:
    a, b = fast.agent1, slow.agent1
    return MetricDeltas(
        percent_change(a.pnl, b.pnl),
        percent_change(a.eth_volume, b.eth_volume),
        percent_change(a.usdc_volume, b.usdc_volume),
        percent_change(a.txn_count, b.txn_count),
    )


def aggregate_weighted(per_pool: Sequence[MetricDeltas], weights: WeightVector = DEFAULT_WEIGHTS) -> MetricDeltas:
    """Linear combination of pool deltas: transactions by transaction share,
    everything else by volume share. Pools must follow ``weights.fees`` order."""
    if len(per_pool) != len(weights.fees):
        raise ValueError(f"expected {len(weights.fees)} pool deltas, got {len(per_pool)}")

    def mix(attr: str, w: Sequence[float]) -> float:
        return math.fsum(wi * getattr(d, attr) for wi, d in zip(w, per_pool))

    return MetricDeltas(
        mix("pnl", weights.volume_weights),
        mix("eth_volume", weights.volume_weights),
        mix("usdc_volume", weights.volume_weights),
        mix("txns", weights.txn_weights),
    )


def sum_metrics(runs: Sequence[RunMetrics]) -> RunMetrics:
    total = RunMetrics()
    for r in runs:
        for dst, src in ((total.agent1, r.agent1), (total.agent2, r.agent2)):
            dst.txn_count += src.txn_count
            dst.eth_volume += src.eth_volume
            dst.usdc_volume += src.usdc_volume
            dst.pnl += src.pnl
        total.opportunities += r.opportunities
        total.entries += r.entries
        total.declines += r.declines
        total.retry_fills += r.retry_fills
        total.forced_closes += r.forced_closes
        total.truncated = total.truncated or r.truncated
    return total


@dataclass(frozen=True)
class MatrixConfig:
    market: MarketSpec = MarketSpec()
    params: AgentParams = AgentParams()
    seeds: tuple[int, ...] = (0,)
    n_slots: int = 500
    fee_tiers: tuple[float, ...] = FEE_TIERS
    agent_models: tuple[str, ...] = AGENT_MODELS
    window_seconds: int = 300
    weights: WeightVector = DEFAULT_WEIGHTS
    workers: int = 1
    out_dir: str = "out"
    write_event_logs: bool = False

    def __post_init__(self):
        if tuple(self.fee_tiers) != tuple(self.weights.fees):
            raise ValueError("fee tiers must match the weight vector's tiers")
        if not self.seeds:
            raise ValueError("at least one seed is required")


@dataclass
class DeltaReport:
    weights: WeightVector
    pools: dict[tuple[str, float, str], MetricDeltas] = field(default_factory=dict)
    combined: dict[tuple[str, str], MetricDeltas] = field(default_factory=dict)
    robustness: dict[tuple[float, float], MetricDeltas] = field(default_factory=dict)
    raw: list[dict] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not self.pools


@dataclass(frozen=True)
class RunKey:
    seed: int
    engine: EngineConfig
    fee: float
    model: str
    regime: str
    alpha: float
    lam: float


@lru_cache(maxsize=8)
def _market(spec: MarketSpec, seed: int, n_slots: int, window: int, tail: int) -> MarketInputs:
    return prepare_market(spec, seed, n_slots, window, tail)


def _run_one(args: tuple[MatrixConfig, RunKey]) -> tuple[RunKey, RunMetrics, list[dict] | None]:
    mc, key = args
    params = replace(mc.params, alpha=key.alpha, lam=key.lam)
    regime = SLOW if key.regime == SLOW.name else FAST
    cfg = ExperimentConfig(regime, replace(key.engine, window_seconds=mc.window_seconds, seed=key.seed),
                           key.fee, key.model, params, mc.market, mc.n_slots, key.seed)
    market = _market(mc.market, key.seed, mc.n_slots, mc.window_seconds, params.k_max * SLOT_SECONDS + 16)
    try:
        metrics, events = run_experiment(cfg, market)
    except Exception as exc:
        raise MatrixError(f"run failed for {describe(key)}: {exc}") from exc
    return key, metrics, (events if mc.write_event_logs else None)


def describe(key: RunKey) -> str:
    return (f"seed={key.seed} config='{key.engine.label}' fee={key.fee:g} model={key.model} "
            f"regime={key.regime} alpha={key.alpha:g} lam={key.lam:g}")


def matrix_keys(mc: MatrixConfig, robustness: bool = False) -> list[RunKey]:
    keys = []
    for seed in mc.seeds:
        for eng in ENGINE_CONFIGS:
            for fee in mc.fee_tiers:
                for model in mc.agent_models:
                    for regime in (SLOW.name, FAST.name):
                        keys.append(RunKey(seed, eng, fee, model, regime, mc.params.alpha, mc.params.lam))
        if robustness:
            eng = EngineConfig(True, True)
            for alpha in ROBUSTNESS_ALPHAS:
                for lam in ROBUSTNESS_LAMS:
                    if (alpha, lam) == (mc.params.alpha, mc.params.lam) and RISK_AVERSE in mc.agent_models:
                        continue  # already in the main matrix
                    for fee in mc.fee_tiers:
                        for regime in (SLOW.name, FAST.name):
                            keys.append(RunKey(seed, eng, fee, RISK_AVERSE, regime, alpha, lam))
    return keys


def run_matrix(mc: MatrixConfig, robustness: bool = False, event_log_dir=None) -> DeltaReport:
    """Run every (seed, configuration, fee tier, agent model, regime) cell."""
    keys = matrix_keys(mc, robustness)
    jobs = [(mc, k) for k in keys]
    if mc.workers > 1:
        with ProcessPoolExecutor(mc.workers) as pool:
            results = list(pool.map(_run_one, jobs, chunksize=4))
    else:
        results = [_run_one(j) for j in jobs]
    log.info("completed %d runs", len(results))

    by_key: dict[RunKey, RunMetrics] = {}
    for key, metrics, events in results:
        by_key[key] = metrics
        if events is not None and event_log_dir is not None:
            name = (f"events_s{key.seed}_{'r' if key.engine.reversion_enabled else 'n'}"
                    f"{'N' if key.engine.noise_enabled else 'n'}_f{key.fee:g}_{key.model}_{key.regime}"
                    f"_a{key.alpha:g}_l{key.lam:g}.ndjson")
            write_event_log(event_log_dir / name, events)
    return build_report(by_key, mc)


def _cell(by_key: Mapping[RunKey, RunMetrics], seeds, eng, fee, model, alpha, lam) -> MetricDeltas:
    slow = sum_metrics([by_key[RunKey(s, eng, fee, model, SLOW.name, alpha, lam)] for s in seeds])
    fast = sum_metrics([by_key[RunKey(s, eng, fee, model, FAST.name, alpha, lam)] for s in seeds])
    return deltas_between(fast, slow)


def build_report(by_key: Mapping[RunKey, RunMetrics], mc: MatrixConfig) -> DeltaReport:
    """Pure function of collected run outputs."""
    rep = DeltaReport(mc.weights)
    a0, l0 = mc.params.alpha, mc.params.lam
    for model in mc.agent_models:
        for eng in ENGINE_CONFIGS:
            pools = []
            for fee in mc.fee_tiers:
                d = _cell(by_key, mc.seeds, eng, fee, model, a0, l0)
                rep.pools[(eng.label, fee, model)] = d
                pools.append(d)
            rep.combined[(eng.label, model)] = aggregate_weighted(pools, mc.weights)
    eng = EngineConfig(True, True)
    grid = {}
    try:
        for alpha in ROBUSTNESS_ALPHAS:
            for lam in ROBUSTNESS_LAMS:
                pools = [_cell(by_key, mc.seeds, eng, fee, RISK_AVERSE, alpha, lam) for fee in mc.fee_tiers]
                grid[(alpha, lam)] = aggregate_weighted(pools, mc.weights)
        rep.robustness = grid
    except KeyError:
        pass  # grid not run
    for key in sorted(by_key, key=_sort_key):
        m = by_key[key]
        rep.raw.append({
            "seed": key.seed, "configuration": key.engine.label, "fee": key.fee, "agent_model": key.model,
            "regime": key.regime, "alpha": key.alpha, "lam": key.lam,
            "txn_count": m.agent1.txn_count, "eth_volume": m.agent1.eth_volume,
            "usdc_volume": m.agent1.usdc_volume, "pnl": m.agent1.pnl,
            "agent2_txn_count": m.agent2.txn_count, "agent2_pnl": m.agent2.pnl,
            "opportunities": m.opportunities, "entries": m.entries, "retry_fills": m.retry_fills,
            "forced_closes": m.forced_closes, "truncated": m.truncated,
        })
    return rep


def _sort_key(k: RunKey):
    return (k.seed, k.engine.reversion_enabled, k.engine.noise_enabled, -k.fee, k.model, k.regime, k.alpha, k.lam)


def fmt_pct(x: float) -> str:
    if math.isnan(x):
        return "n/a"
    return f"{round(x):+d}%"


def _fee_label(fee: float) -> str:
    bp = fee * 1e4
    return f"{bp:g} bp" if bp == 1 else f"{bp:g} bps"


def _fixed_width(rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = []
    for j, r in enumerate(rows):
        cells = [r[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(r[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
        if j == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def render_tables(report: DeltaReport) -> tuple[str, str]:
    """Return (fixed-width text, CSV). Percentages round to whole points."""
    if report.empty:
        raise ValueError("cannot render an empty report")
    models = [m for m in AGENT_MODELS if any(k[2] == m for k in report.pools)]
    fees = list(report.weights.fees)
    labels = [e.label for e in ENGINE_CONFIGS]
    blocks = []
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(("table", "agent_model", "pool", *HEADER))

    for model in models:
        for fee in fees:
            title = f"{MODEL_NAMES[model]} agent, {_fee_label(fee)} pool: 12 s -> 1 s"
            rows = [HEADER]
            for lab in labels:
                cells = tuple(fmt_pct(x) for x in report.pools[(lab, fee, model)].as_tuple())
                rows.append((lab, *cells))
                w.writerow(("pool", model, _fee_label(fee), lab, *cells))
            blocks.append(title + "\n" + _fixed_width(rows))

    head = ["Configuration"]
    for model in models:
        head += [f"{MODEL_NAMES[model]} ΔETH Vol.", f"{MODEL_NAMES[model]} ΔTxns"]
    rows = [tuple(head)]
    for lab in labels:
        cells = []
        for model in models:
            d = report.combined[(lab, model)]
            cells += [fmt_pct(d.eth_volume), fmt_pct(d.txns)]
            w.writerow(("combined", model, "weighted", lab, *(fmt_pct(x) for x in d.as_tuple())))
        rows.append((lab, *cells))
    blocks.append("Combined across pools (volume and transaction weights)\n" + _fixed_width(rows))

    avg_rows = [tuple(["Average over", *head[1:]])]
    for name, pair in (("noise configurations", ("no reversion, noise", "reversion, noise")),
                       ("no-noise configurations", ("no reversion, no noise", "reversion, no noise"))):
        vals = []
        for m in models:
            a, b = report.combined[(pair[0], m)], report.combined[(pair[1], m)]
            vals += [fmt_pct((a.eth_volume + b.eth_volume) / 2), fmt_pct((a.txns + b.txns) / 2)]
        avg_rows.append((f"{name} ('{pair[0]}' and '{pair[1]}')", *vals))
    blocks.append("Combined change, averaged over stated configuration pairs\n" + _fixed_width(avg_rows))

    if report.robustness:
        rows = [("alpha", "lambda", "ΔPnL", "ΔETH Vol.", "ΔUSDC Vol.", "ΔTxns")]
        for (alpha, lam), d in sorted(report.robustness.items()):
            cells = tuple(fmt_pct(x) for x in d.as_tuple())
            rows.append((f"{alpha:g}", f"{lam:g}", *cells))
            w.writerow(("robustness", RISK_AVERSE, "weighted", f"alpha={alpha:g} lambda={lam:g}", *cells))
        blocks.append("Risk-averse agent, reversion + noise, combined: sensitivity to alpha and lambda\n"
                      + _fixed_width(rows))
    return "\n\n".join(blocks) + "\n", out.getvalue()


def raw_csv(report: DeltaReport) -> str:
    out = io.StringIO()
    if report.raw:
        w = csv.DictWriter(out, fieldnames=list(report.raw[0]), lineterminator="\n")
        w.writeheader()
        for row in report.raw:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return out.getvalue()

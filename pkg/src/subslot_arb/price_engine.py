"""Subslot DEX price interpolation and synthetic market generators.

A DEX price moves from one second to the next by, in order: a pending
arbitrage fill, a regression-based reversion step driven by the CEX return,
and any noise trades placed on that second.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import rng as rngmod
from .market_data import DexSeries, NoiseDistribution, TickSeries

log = logging.getLogger(__name__)

ARB = "arb"
REVERSION = "reversion"
REVERSION_CLAMPED = "reversion(clamped)"
NOISE = "noise"
CARRY = "carry"

SLOT_SECONDS = 12


@dataclass(frozen=True)
class EngineConfig:
    reversion_enabled: bool = False
    noise_enabled: bool = False
    window_seconds: int = 300
    seed: int = 0

    @property
    def label(self) -> str:
        rev = "reversion" if self.reversion_enabled else "no reversion"
        noise = "noise" if self.noise_enabled else "no noise"
        return f"{rev}, {noise}"


CONFIGURATIONS = tuple(
    (rev, noise) for rev in (False, True) for noise in (False, True)
)


@dataclass(frozen=True)
class ReversionModel:
    """Per-interval OLS of DEX on CEX simple returns.

    Interval ``k`` covers returns stamped in ``(k * window, (k + 1) * window]``
    seconds; returns are stamped with the later of their two timestamps.
    """

    window_seconds: int
    intercept: np.ndarray
    slope: np.ndarray
    residual_variance: np.ndarray
    carried: np.ndarray  # True where coefficients were carried forward

    def interval(self, t: int) -> int:
        k = (int(t) - 1) // self.window_seconds
        return min(max(k, 0), len(self.slope) - 1)

    @classmethod
    def constant(cls, intercept: float, slope: float, n_intervals: int = 1, window_seconds: int = 300) -> "ReversionModel":
        return cls(
            window_seconds,
            np.full(n_intervals, float(intercept)),
            np.full(n_intervals, float(slope)),
            np.zeros(n_intervals),
            np.zeros(n_intervals, dtype=bool),
        )


def ols_line(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float] | None:
    """Closed-form simple regression; None when x has no variance."""
    n = len(x)
    if n < 2:
        return None
    xm, ym = x.mean(), y.mean()
    dx = x - xm
    sxx = float(np.dot(dx, dx))
    if sxx == 0.0:
        return None
    b1 = float(np.dot(dx, y - ym)) / sxx
    b0 = float(ym - b1 * xm)
    resid = y - b0 - b1 * x
    s2 = float(np.dot(resid, resid)) / (n - 2) if n > 2 else 0.0
    return b0, b1, s2


def fit_reversion(cex_returns: Sequence[float], dex_returns: Sequence[float], window_seconds: int = 300) -> ReversionModel:
    """Fit one line per window on 1-second aligned returns.

    ``cex_returns[i]`` and ``dex_returns[i]`` are the returns ending at second
    ``i + 1``. An interval without CEX-return variance reuses the previous
    interval's coefficients (the first such interval falls back to a flat
    slope and the mean DEX return) and is flagged in ``carried``.
    """
    x = np.asarray(cex_returns, dtype=np.float64)
    y = np.asarray(dex_returns, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError("return series must be aligned")
    n_int = max(1, math.ceil(len(x) / window_seconds))
    b0 = np.zeros(n_int)
    b1 = np.zeros(n_int)
    s2 = np.zeros(n_int)
    carried = np.zeros(n_int, dtype=bool)
    for k in range(n_int):
        sl = slice(k * window_seconds, (k + 1) * window_seconds)
        fit = ols_line(x[sl], y[sl])
        if fit is None:
            carried[k] = True
            if k:
                b0[k], b1[k], s2[k] = b0[k - 1], b1[k - 1], s2[k - 1]
            else:
                b0[k] = float(y[sl].mean()) if len(y[sl]) else 0.0
            log.warning("reversion interval %d has no CEX-return variance; coefficients carried", k)
        else:
            b0[k], b1[k], s2[k] = fit
    return ReversionModel(window_seconds, b0, b1, s2, carried)


def fit_reversion_prices(cex_mid: np.ndarray, dex_price: np.ndarray, window_seconds: int = 300) -> ReversionModel:
    cex_mid = np.asarray(cex_mid, dtype=np.float64)
    dex_price = np.asarray(dex_price, dtype=np.float64)
    return fit_reversion(cex_mid[1:] / cex_mid[:-1] - 1.0, dex_price[1:] / dex_price[:-1] - 1.0, window_seconds)


def _revert(model: ReversionModel, last_dex: float, cex_return: float, k: int, floor_fraction: float) -> tuple[float, bool]:
    p = last_dex * (1.0 + model.intercept[k] + model.slope[k] * cex_return)
    if p <= 0.0:
        p = floor_fraction * last_dex
        log.warning("reverted price non-positive in interval %d; clamped to %g", k, p)
        return p, True
    return p, False


def revert_step(model: ReversionModel, last_dex: float, cex_return: float, k: int, floor_fraction: float = 1e-9) -> float:
    """Predicted DEX price one step after ``last_dex`` in interval ``k``.

    A non-positive prediction is clamped to ``floor_fraction * last_dex``
    (and logged).
    """
    return _revert(model, last_dex, cex_return, k, floor_fraction)[0]


def sample_noise_trades(dist: NoiseDistribution, M: int, rng) -> list[tuple[int, int]]:
    """Noise trades for one 12-second block as ``(position, impact_bp)``.

    ``position`` is uniform on ``0..M-1``. ``rng`` is either an
    :class:`~subslot_arb.rng.RngStreams` (separate count / placement / impact
    streams) or a single generator used for all three.
    """
    if dist.is_empty:
        return []
    if isinstance(rng, rngmod.RngStreams):
        g_count, g_place, g_imp = rng[rngmod.NOISE_COUNT], rng[rngmod.NOISE_PLACEMENT], rng[rngmod.NOISE_IMPACT]
    else:
        g_count = g_place = g_imp = rng
    counts = np.fromiter(dist.count_pmf.keys(), dtype=np.int64)
    n = int(counts[_draw_index(g_count, dist.count_pmf)])
    if n == 0:
        return []
    places = g_place.integers(0, M, size=n)
    support = np.fromiter(dist.impact_pmf.keys(), dtype=np.int64)
    cdf = np.cumsum(np.fromiter(dist.impact_pmf.values(), dtype=np.float64))
    u = g_imp.random(n)
    idx = np.minimum(np.searchsorted(cdf, u * cdf[-1], side="right"), len(support) - 1)
    trades = [(int(m), int(support[i])) for m, i in zip(places, idx)]
    trades.sort(key=lambda tr: tr[0])  # stable: draw order kept within a position
    return trades


def _draw_index(g: np.random.Generator, pmf: Mapping[int, float]) -> int:
    cdf = np.cumsum(np.fromiter(pmf.values(), dtype=np.float64))
    u = g.random()
    return min(int(np.searchsorted(cdf, u * cdf[-1], side="right")), len(cdf) - 1)


def apply_noise(price: float, impacts_bp: Sequence[int]) -> float:
    for imp in impacts_bp:
        price = price * (1.0 + imp * 1e-4)
    return price


@dataclass
class SubslotPricePath:
    slot: int
    prices: list[float]  # one per subslot, prices[0] is the boundary price
    provenance: list[str]  # how each subslot price was reached
    end_price: float  # price at the next slot boundary
    end_provenance: str = CARRY
    clamped: bool = False


def advance(
    price: float,
    t: int,
    fill_price: float | None,
    model: ReversionModel | None,
    cex_return: float,
    impacts_bp: Sequence[int],
) -> tuple[float, str]:
    """One second of DEX evolution: arb fill, then reversion, then noise."""
    tags = []
    if fill_price is not None:
        price = fill_price
        tags.append(ARB)
    if model is not None:
        price, clamped = _revert(model, price, cex_return, model.interval(t), 1e-9)
        tags.append(REVERSION_CLAMPED if clamped else REVERSION)
    if impacts_bp:
        price = apply_noise(price, impacts_bp)
        tags.append(NOISE)
    return price, "+".join(tags) if tags else CARRY


def build_subslot_path(
    prev_slot_price: float,
    arb_fills: Mapping[int, float] | None,
    model: ReversionModel | None,
    cex_mid: Sequence[float],
    noise_trades: Sequence[tuple[int, int]] | None,
    config: EngineConfig,
    slot: int = 0,
    M: int = SLOT_SECONDS,
) -> SubslotPricePath:
    """Interpolate one slot of DEX prices at 1-second resolution.

    ``cex_mid`` holds the CEX mid at subslots ``0..M`` (M + 1 values, the last
    one on the next boundary). ``arb_fills`` maps step ``m`` (1..M) to the
    post-fill price of an arbitrage decided at ``m - 1``. Noise placed at
    position ``j`` lands on step ``j + 1``. Reversion intervals are indexed by
    absolute second ``slot * M + m``.
    """
    arb_fills = arb_fills or {}
    by_step: dict[int, list[int]] = {}
    if config.noise_enabled and noise_trades:
        for pos, imp in noise_trades:
            by_step.setdefault(pos + 1, []).append(imp)
    rev = model if config.reversion_enabled else None
    prices = [prev_slot_price]
    prov = [CARRY]
    p = prev_slot_price
    clamped = False
    for m in range(1, M + 1):
        r = cex_mid[m] / cex_mid[m - 1] - 1.0
        p, tag = advance(p, slot * M + m, arb_fills.get(m), rev, r, by_step.get(m, ()))
        clamped = clamped or REVERSION_CLAMPED in tag
        if m < M:
            prices.append(p)
            prov.append(tag)
        else:
            end_tag = tag
    return SubslotPricePath(slot, prices, prov, p, end_tag, clamped)


def write_path_csv(path: str | Path, paths: Sequence[SubslotPricePath]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(("slot", "subslot", "price", "provenance"))
        for sp in paths:
            for m, (p, tag) in enumerate(zip(sp.prices, sp.provenance)):
                w.writerow((sp.slot, m, repr(p), tag))


# ---------------------------------------------------------------------------
# Synthetic market data
# ---------------------------------------------------------------------------


def synth_cex(seed: int, n_seconds: int, sigma: float, beta_halfspread: float, p0: float, start_ms: int = 0) -> TickSeries:
    """Gaussian log-walk mid at 1-second steps with a symmetric half-spread."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    g = rngmod.substream(seed, rngmod.CEX_PATH)
    steps = g.standard_normal(max(n_seconds - 1, 0)) * sigma
    log_mid = np.log(p0) + np.concatenate(([0.0], np.cumsum(steps)))
    mid = np.exp(log_mid) if sigma > 0 else np.full(n_seconds, float(p0))
    ts = start_ms + 1000 * np.arange(n_seconds, dtype=np.int64)
    return TickSeries(ts, (1.0 - beta_halfspread) * mid, (1.0 + beta_halfspread) * mid)


def synth_dex_reference(
    seed: int,
    cex: TickSeries,
    tracking: float = 0.3,
    error_correction: float = 0.02,
    resid_std: float = 1e-5,
) -> DexSeries:
    """A reference DEX price that partially tracks the CEX mid.

    Each second the log price moves by ``tracking`` times the CEX log-return,
    plus a pull of ``error_correction`` on the log basis and Gaussian noise,
    which keeps the basis stationary. Used to fit reversion coefficients and
    basis constants when no historical DEX data are supplied.
    """
    g = rngmod.substream(seed, rngmod.DEX_REFERENCE)
    log_mid = np.log(cex.mid)
    n = len(log_mid)
    eps = g.standard_normal(max(n - 1, 0)) * resid_std
    out = np.empty(n)
    out[0] = log_mid[0]
    for i in range(1, n):
        out[i] = (
            out[i - 1]
            + tracking * (log_mid[i] - log_mid[i - 1])
            + error_correction * (log_mid[i - 1] - out[i - 1])
            + eps[i - 1]
        )
    return DexSeries(cex.timestamp_ms.copy(), np.exp(out))


def default_noise_distribution(scale_bp: float = 3.0) -> NoiseDistribution:
    """Synthetic stand-in: a few trades per block, Laplace-shaped impacts."""
    count = {0: 0.55, 1: 0.25, 2: 0.12, 3: 0.05, 4: 0.03}
    support = np.arange(-30, 31)
    w = np.exp(-np.abs(support) / scale_bp)
    w /= w.sum()
    impact = {int(k): float(v) for k, v in zip(support, w)}
    top = max(impact, key=impact.get)
    impact[top] += 1.0 - math.fsum(impact.values())
    return NoiseDistribution(count, impact)

"""CEX tick and DEX swap ingestion, swap classification and calibration."""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

ARBITRAGE = "arbitrage"
NOISE = "noise"

SLOT_MS = 12_000
MAX_IMPACT_BP = 30
# slack on the ">= fee" test so a trade parked exactly on the fee band survives rounding
BAND_RTOL = 1e-12

TICK_HEADER = ("timestamp_ms", "bid", "ask")
SWAP_HEADER = (
    "block_number",
    "index_in_block",
    "pre_price",
    "post_price",
    "base_delta",
    "quote_delta",
    "pool_fee",
)
DEX_HEADER = ("timestamp_ms", "price")


class DataError(ValueError):
    """A malformed or invariant-violating input record."""


@dataclass(frozen=True)
class TickQuote:
    timestamp_ms: int
    bid: float
    ask: float

    @property
    def mid(self) -> float:
        return 0.5 * (self.bid + self.ask)


@dataclass(frozen=True)
class TickSeries:
    """Best bid/ask quotes stored column-wise."""

    timestamp_ms: np.ndarray
    bid: np.ndarray
    ask: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.timestamp_ms, dtype=np.int64)
        bid = np.asarray(self.bid, dtype=np.float64)
        ask = np.asarray(self.ask, dtype=np.float64)
        if not (ts.shape == bid.shape == ask.shape) or ts.ndim != 1:
            raise DataError("timestamp, bid and ask columns must be 1-d and equally long")
        if len(ts) and not np.all(bid > 0):
            raise DataError("bid must be positive")
        if len(ts) and not np.all(ask >= bid):
            raise DataError("ask must be >= bid")
        if len(ts) > 1 and not np.all(np.diff(ts) > 0):
            raise DataError("timestamps must be strictly increasing")
        object.__setattr__(self, "timestamp_ms", ts)
        object.__setattr__(self, "bid", bid)
        object.__setattr__(self, "ask", ask)

    @classmethod
    def from_quotes(cls, quotes: Iterable[TickQuote]) -> "TickSeries":
        quotes = list(quotes)
        return cls(
            np.array([q.timestamp_ms for q in quotes], dtype=np.int64),
            np.array([q.bid for q in quotes], dtype=np.float64),
            np.array([q.ask for q in quotes], dtype=np.float64),
        )

    def __len__(self) -> int:
        return len(self.timestamp_ms)

    def __iter__(self) -> Iterator[TickQuote]:
        for ts, b, a in zip(self.timestamp_ms, self.bid, self.ask):
            yield TickQuote(int(ts), float(b), float(a))

    def __getitem__(self, i: int) -> TickQuote:
        return TickQuote(int(self.timestamp_ms[i]), float(self.bid[i]), float(self.ask[i]))

    @property
    def mid(self) -> np.ndarray:
        return 0.5 * (self.bid + self.ask)

    def index_at(self, timestamp_ms: int) -> int:
        """Index of the last quote at or before ``timestamp_ms``, or -1."""
        return int(np.searchsorted(self.timestamp_ms, timestamp_ms, side="right")) - 1

    def to_grid(self, step_ms: int = 1000, start_ms: int | None = None, end_ms: int | None = None) -> "TickSeries":
        """Resample onto a regular grid by last-observation-carried-forward."""
        if not len(self):
            return self
        start = int(self.timestamp_ms[0]) if start_ms is None else int(start_ms)
        end = int(self.timestamp_ms[-1]) if end_ms is None else int(end_ms)
        grid = np.arange(start, end + 1, step_ms, dtype=np.int64)
        idx = np.searchsorted(self.timestamp_ms, grid, side="right") - 1
        if np.any(idx < 0):
            raise DataError("grid starts before the first quote")
        return TickSeries(grid, self.bid[idx], self.ask[idx])


@dataclass(frozen=True)
class DexSeries:
    """Reference DEX prices (e.g. pool spot at each block)."""

    timestamp_ms: np.ndarray
    price: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.timestamp_ms, dtype=np.int64)
        px = np.asarray(self.price, dtype=np.float64)
        if ts.shape != px.shape:
            raise DataError("timestamp and price columns differ in length")
        if len(px) and not np.all(px > 0):
            raise DataError("DEX prices must be positive")
        if len(ts) > 1 and not np.all(np.diff(ts) > 0):
            raise DataError("timestamps must be strictly increasing")
        object.__setattr__(self, "timestamp_ms", ts)
        object.__setattr__(self, "price", px)

    def __len__(self) -> int:
        return len(self.price)

    def values_at(self, grid_ms: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.timestamp_ms, grid_ms, side="right") - 1
        if np.any(idx < 0):
            raise DataError("DEX series starts after the requested grid")
        return self.price[idx]


@dataclass(frozen=True)
class SwapEvent:
    block_number: int
    index_in_block: int
    pre_price: float
    post_price: float
    base_delta: float
    quote_delta: float
    pool_fee: float
    block_timestamp_ms: int | None = None

    def __post_init__(self):
        if not (self.pre_price > 0 and self.post_price > 0):
            raise DataError("pre_price and post_price must be positive")
        if self.base_delta * self.quote_delta > 0:
            raise DataError("base_delta and quote_delta must have opposite signs")
        if self.index_in_block < 0:
            raise DataError("index_in_block must be >= 0")

    @property
    def impact_bp(self) -> float:
        return (self.post_price - self.pre_price) / self.pre_price * 1e4


@dataclass
class Classification:
    labeled: list[tuple[SwapEvent, str]]
    rejected: list[tuple[SwapEvent, str]] = field(default_factory=list)


@dataclass(frozen=True)
class NoiseDistribution:
    """Noise-trade count per 12-second block and per-trade impact in bp.

    An empty ``impact_pmf`` is the "no noise" marker: samplers draw nothing.
    """

    count_pmf: Mapping[int, float]
    impact_pmf: Mapping[int, float]

    def __post_init__(self):
        count = {int(k): float(v) for k, v in sorted(self.count_pmf.items())}
        impact = {int(k): float(v) for k, v in sorted(self.impact_pmf.items())}
        if abs(math.fsum(count.values()) - 1.0) > 1e-12:
            raise DataError("count_pmf must sum to 1")
        if any(k < 0 for k in count):
            raise DataError("noise counts must be non-negative")
        if impact:
            if abs(math.fsum(impact.values()) - 1.0) > 1e-12:
                raise DataError("impact_pmf must sum to 1")
            if any(abs(k) > MAX_IMPACT_BP for k in impact):
                raise DataError(f"impact support must lie within +/-{MAX_IMPACT_BP} bp")
        object.__setattr__(self, "count_pmf", count)
        object.__setattr__(self, "impact_pmf", impact)

    @classmethod
    def empty(cls) -> "NoiseDistribution":
        return cls({0: 1.0}, {})

    @property
    def is_empty(self) -> bool:
        return not self.impact_pmf or set(self.count_pmf) == {0}

    def to_dict(self) -> dict:
        return {
            "kind": "noise_distribution",
            "empty": self.is_empty,
            "count_pmf": {str(k): v for k, v in self.count_pmf.items()},
            "impact_pmf_bp": {str(k): v for k, v in self.impact_pmf.items()},
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "NoiseDistribution":
        return cls(
            {int(k): float(v) for k, v in doc["count_pmf"].items()},
            {int(k): float(v) for k, v in doc.get("impact_pmf_bp", {}).items()},
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "NoiseDistribution":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class CalibrationConstants:
    sigma: float
    beta_halfspread: float
    basis_std: float
    basis_persistence: float

    def __post_init__(self):
        if self.sigma < 0:
            raise DataError("sigma must be >= 0")
        if not 0 <= self.beta_halfspread < 1:
            raise DataError("beta_halfspread must lie in [0, 1)")
        if self.basis_std < 0:
            raise DataError("basis_std must be >= 0")
        if not abs(self.basis_persistence) < 1:
            raise DataError("|basis_persistence| must be < 1")

    def to_dict(self) -> dict:
        return {
            "kind": "calibration",
            "sigma": self.sigma,
            "beta_halfspread": self.beta_halfspread,
            "basis_std": self.basis_std,
            "basis_persistence": self.basis_persistence,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "CalibrationConstants":
        doc = json.loads(Path(path).read_text())
        return cls(
            float(doc["sigma"]),
            float(doc["beta_halfspread"]),
            float(doc["basis_std"]),
            float(doc["basis_persistence"]),
        )


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------


def _block_timestamp(swap: SwapEvent, block_times: Mapping[int, int] | None, anchor: tuple[int, int] | None) -> int | None:
    if swap.block_timestamp_ms is not None:
        return swap.block_timestamp_ms
    if block_times is not None:
        return block_times.get(swap.block_number)
    if anchor is not None:
        first_block, first_ms = anchor
        return first_ms + SLOT_MS * (swap.block_number - first_block)
    return None


def is_arbitrage(swap: SwapEvent, cex_ref: float) -> bool:
    """The four-condition arbitrage test against a CEX reference price."""
    if swap.index_in_block != 0:
        return False
    fee = swap.pool_fee
    pre_gap = abs(swap.pre_price - cex_ref)
    post_gap = abs(swap.post_price - cex_ref)
    if not pre_gap / cex_ref > fee:
        return False
    if not post_gap < pre_gap:
        return False
    return post_gap / cex_ref >= fee * (1.0 - BAND_RTOL)


def classify_swaps(
    swaps: Iterable[SwapEvent],
    cex: TickSeries,
    block_times: Mapping[int, int] | None = None,
) -> Classification:
    """Label every swap ``arbitrage`` or ``noise``.

    The CEX reference is the mid of the last quote at or before the block
    timestamp. Block timestamps come from the swap record, then from
    ``block_times``, and otherwise from a 12-second cadence anchored at the
    first quote. Swaps without a usable quote are returned in ``rejected``.
    """
    swaps = sorted(swaps, key=lambda s: (s.block_number, s.index_in_block))
    anchor = None
    if block_times is None and len(cex) and swaps:
        anchor = (swaps[0].block_number, int(cex.timestamp_ms[0]))
    mid = cex.mid
    out = Classification(labeled=[])
    for swap in swaps:
        ts = _block_timestamp(swap, block_times, anchor)
        if ts is None:
            out.rejected.append((swap, f"no timestamp for block {swap.block_number}"))
            continue
        i = cex.index_at(ts)
        if i < 0:
            out.rejected.append((swap, f"no CEX quote at or before {ts} ms (block {swap.block_number})"))
            continue
        label = ARBITRAGE if is_arbitrage(swap, float(mid[i])) else NOISE
        out.labeled.append((swap, label))
    return out


def round_bp(x: float) -> int:
    """Round half away from zero to an integer basis point."""
    return int(math.floor(abs(x) + 0.5)) * (1 if x >= 0 else -1)


def estimate_noise_distribution(labeled: Sequence[tuple[SwapEvent, str]]) -> NoiseDistribution:
    if not labeled:
        raise DataError("at least one block is required")
    blocks = [s.block_number for s, _ in labeled]
    per_block = Counter(s.block_number for s, lab in labeled if lab == NOISE)
    n_blocks = max(blocks) - min(blocks) + 1
    counts = Counter(per_block.values())
    counts[0] += n_blocks - len(per_block)
    count_pmf = {k: v / n_blocks for k, v in counts.items() if v}

    impacts = [round_bp(s.impact_bp) for s, lab in labeled if lab == NOISE]
    impacts = [x for x in impacts if abs(x) <= MAX_IMPACT_BP]
    if not impacts:
        return NoiseDistribution.empty()
    ic = Counter(impacts)
    impact_pmf = {k: v / len(impacts) for k, v in ic.items()}
    return NoiseDistribution(_normalized(count_pmf), _normalized(impact_pmf))


def _normalized(pmf: dict[int, float]) -> dict[int, float]:
    # nudge the largest mass so the sum is 1 to within a few ulps
    total = math.fsum(pmf.values())
    pmf = {k: v / total for k, v in pmf.items()}
    top = max(pmf, key=pmf.get)
    pmf[top] += 1.0 - math.fsum(pmf.values())
    return pmf


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------


def calibrate(cex: TickSeries, dex: DexSeries | None = None, slot_seconds: int = 12) -> CalibrationConstants:
    """Estimate belief-model constants on a 1-second LOCF grid.

    sigma is the sample std of 1-second mid log-returns; the half-spread is
    the mean of (ask - bid) / (ask + bid); the basis (DEX minus CEX mid,
    sampled once per slot) gives a demeaned std and lag-1 autocorrelation.
    """
    if len(cex) < 2:
        raise DataError("calibration needs at least 2 quotes")
    start = int(cex.timestamp_ms[0])
    if dex is not None and len(dex):
        start = max(start, int(dex.timestamp_ms[0]))
    grid = cex.to_grid(1000, start_ms=start)
    mid = grid.mid
    rets = np.diff(np.log(mid))
    sigma = float(np.std(rets, ddof=1)) if len(rets) > 1 else float(np.abs(rets).sum())
    beta = float(np.mean((grid.ask - grid.bid) / (grid.ask + grid.bid)))

    basis_std, rho = 0.0, 0.0
    if dex is not None and len(dex):
        step = slot_seconds
        slot_idx = np.arange(0, len(grid), step)
        eta = dex.values_at(grid.timestamp_ms[slot_idx]) - mid[slot_idx]
        eta = eta - eta.mean()
        basis_std = float(np.sqrt(np.mean(eta**2)))
        denom = float(np.dot(eta, eta))
        if len(eta) > 2 and denom > 0:
            rho = float(np.dot(eta[1:], eta[:-1]) / denom)
            rho = min(max(rho, -0.999), 0.999)
    return CalibrationConstants(sigma, beta, basis_std, rho)


# ---------------------------------------------------------------------------
# CSV loading
# ---------------------------------------------------------------------------


def _read_rows(path: str | Path, header: Sequence[str], optional: Sequence[str] = ()) -> Iterator[tuple[int, dict]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            cols = [c.strip() for c in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file (missing header)") from None
        if tuple(cols[: len(header)]) != tuple(header) or any(c not in optional for c in cols[len(header):]):
            raise DataError(f"{path}: line 1: expected header {','.join(header)}, got {','.join(cols)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(cols):
                raise DataError(f"{path}: line {lineno}: expected {len(cols)} fields, got {len(row)}")
            yield lineno, dict(zip(cols, (c.strip() for c in row)))


def _parse(path, lineno: int, name: str, raw: str, kind=float):
    try:
        if kind is int:
            return int(raw)
        val = float(raw)
    except ValueError:
        raise DataError(f"{path}: line {lineno}: field {name!r}: cannot parse {raw!r}") from None
    if not math.isfinite(val):
        raise DataError(f"{path}: line {lineno}: field {name!r}: non-finite value {raw!r}")
    return val


def load_ticks(path: str | Path) -> TickSeries:
    ts, bids, asks = [], [], []
    for lineno, row in _read_rows(path, TICK_HEADER):
        t = _parse(path, lineno, "timestamp_ms", row["timestamp_ms"], int)
        b = _parse(path, lineno, "bid", row["bid"])
        a = _parse(path, lineno, "ask", row["ask"])
        if b <= 0:
            raise DataError(f"{path}: line {lineno}: field 'bid': must be positive")
        if a < b:
            raise DataError(f"{path}: line {lineno}: field 'ask': ask {a} < bid {b}")
        if ts and t <= ts[-1]:
            raise DataError(f"{path}: line {lineno}: field 'timestamp_ms': not strictly increasing")
        ts.append(t)
        bids.append(b)
        asks.append(a)
    return TickSeries(np.array(ts, dtype=np.int64), np.array(bids), np.array(asks))


def load_swaps(path: str | Path) -> list[SwapEvent]:
    out: list[SwapEvent] = []
    last = None
    for lineno, row in _read_rows(path, SWAP_HEADER, optional=("block_timestamp_ms",)):
        vals = {
            "block_number": _parse(path, lineno, "block_number", row["block_number"], int),
            "index_in_block": _parse(path, lineno, "index_in_block", row["index_in_block"], int),
        }
        for name in SWAP_HEADER[2:]:
            vals[name] = _parse(path, lineno, name, row[name])
        if row.get("block_timestamp_ms"):
            vals["block_timestamp_ms"] = _parse(path, lineno, "block_timestamp_ms", row["block_timestamp_ms"], int)
        key = (vals["block_number"], vals["index_in_block"])
        if last is not None and key <= last:
            raise DataError(f"{path}: line {lineno}: field 'block_number': records not in (block, index) order")
        last = key
        try:
            out.append(SwapEvent(**vals))
        except DataError as exc:
            raise DataError(f"{path}: line {lineno}: {exc}") from None
    return out


def load_dex_prices(path: str | Path) -> DexSeries:
    ts, px = [], []
    for lineno, row in _read_rows(path, DEX_HEADER):
        t = _parse(path, lineno, "timestamp_ms", row["timestamp_ms"], int)
        p = _parse(path, lineno, "price", row["price"])
        if p <= 0:
            raise DataError(f"{path}: line {lineno}: field 'price': must be positive")
        if ts and t <= ts[-1]:
            raise DataError(f"{path}: line {lineno}: field 'timestamp_ms': not strictly increasing")
        ts.append(t)
        px.append(p)
    return DexSeries(np.array(ts, dtype=np.int64), np.array(px))


def write_ticks(path: str | Path, ticks: TickSeries) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TICK_HEADER)
        for q in ticks:
            w.writerow([q.timestamp_ms, repr(q.bid), repr(q.ask)])


def write_dex_prices(path: str | Path, dex: DexSeries) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(DEX_HEADER)
        for t, p in zip(dex.timestamp_ms, dex.price):
            w.writerow([int(t), repr(float(p))])


def write_labeled_swaps(path: str | Path, result: Classification) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow((*SWAP_HEADER, "label"))
        for s, label in result.labeled:
            w.writerow([s.block_number, s.index_in_block, repr(s.pre_price), repr(s.post_price),
                        repr(s.base_delta), repr(s.quote_delta), repr(s.pool_fee), label])

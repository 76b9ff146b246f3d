"""Constant-product (x * y = k) pool with fee-on-input, v2 style.

Fees stay in the reserves, so k never decreases across swaps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

FEE_TIERS = (0.003, 0.0005, 0.0001)


class Side(str, Enum):
    BUY_BASE = "buy_base"  # pay quote, receive base
    SELL_BASE = "sell_base"  # pay base, receive quote


# +1: buy on the DEX, sell on the CEX.  -1: sell on the DEX, buy on the CEX.
BUY_ON_DEX = 1
SELL_ON_DEX = -1


@dataclass(frozen=True, slots=True)
class PoolState:
    base_reserve: float
    quote_reserve: float
    fee: float

    def __post_init__(self):
        if not (self.base_reserve > 0 and self.quote_reserve > 0):
            raise ValueError("reserves must be positive")
        if not 0 <= self.fee < 1:
            raise ValueError("fee must lie in [0, 1)")

    @property
    def k(self) -> float:
        return self.base_reserve * self.quote_reserve

    @classmethod
    def from_price(cls, base_reserve: float, price: float, fee: float) -> "PoolState":
        return cls(base_reserve, base_reserve * price, fee)


@dataclass(frozen=True, slots=True)
class SwapResult:
    side: Side
    amount_in: float
    amount_out: float
    new_pool: PoolState

    @property
    def base_amount(self) -> float:
        return self.amount_out if self.side is Side.BUY_BASE else self.amount_in

    @property
    def quote_amount(self) -> float:
        return self.amount_in if self.side is Side.BUY_BASE else self.amount_out

    @property
    def exec_price(self) -> float:
        """Average quote paid (or received) per base unit, fee included."""
        return self.quote_amount / self.base_amount


@dataclass(frozen=True, slots=True)
class ArbSize:
    direction: int
    amount_in: float

    @property
    def side(self) -> Side:
        return Side.BUY_BASE if self.direction == BUY_ON_DEX else Side.SELL_BASE


def spot_price(pool: PoolState) -> float:
    return pool.quote_reserve / pool.base_reserve


def execute_swap(pool: PoolState, side: Side | str, amount_in: float) -> SwapResult:
    """Swap ``amount_in`` of the input asset; the whole input joins the reserves."""
    side = Side(side)
    if not amount_in > 0:
        raise ValueError("amount_in must be positive")
    x, y = pool.base_reserve, pool.quote_reserve
    net = (1.0 - pool.fee) * amount_in
    k = x * y
    if side is Side.BUY_BASE:
        new_x = k / (y + net)
        # round in the pool's favour so x * y never slips by an ulp
        while new_x * (y + amount_in) < k:
            new_x = math.nextafter(new_x, math.inf)
        out = x - new_x
        if not 0 < out < x:
            raise ValueError("swap would drain the base reserve")
        new = PoolState(new_x, y + amount_in, pool.fee)
    else:
        new_y = k / (x + net)
        while (x + amount_in) * new_y < k:
            new_y = math.nextafter(new_y, math.inf)
        out = y - new_y
        if not 0 < out < y:
            raise ValueError("swap would drain the quote reserve")
        new = PoolState(x + amount_in, new_y, pool.fee)
    return SwapResult(side, amount_in, out, new)


def amount_in_for_out(pool: PoolState, side: Side | str, amount_out: float) -> float:
    """Input needed so that ``execute_swap`` returns ``amount_out``."""
    side = Side(side)
    x, y = pool.base_reserve, pool.quote_reserve
    gamma = 1.0 - pool.fee
    if side is Side.BUY_BASE:
        if not 0 < amount_out < x:
            raise ValueError("requested base exceeds the reserve")
        return (x * y / (x - amount_out) - y) / gamma
    if not 0 < amount_out < y:
        raise ValueError("requested quote exceeds the reserve")
    return (x * y / (y - amount_out) - x) / gamma


def optimal_arb_size(pool: PoolState, cex_bid: float, cex_ask: float) -> ArbSize | None:
    """Size the swap that parks the pool exactly one fee from the CEX quote.

    Buying on the DEX targets ``bid * (1 - f)``, selling targets
    ``ask * (1 + f)``; both come from the quadratic for the post-swap price.
    Returns None when the pool already sits inside that band.
    """
    x, y, f = pool.base_reserve, pool.quote_reserve, pool.fee
    gamma = 1.0 - f
    p = y / x
    lo = cex_bid * (1.0 - f)
    hi = cex_ask * (1.0 + f)
    if p < lo:
        # (y + a)(y + gamma a) = lo x y
        c = lo * x * y - y * y
        b = (1.0 + gamma) * y
        a = 2.0 * c / (b + math.sqrt(b * b + 4.0 * gamma * c))
        return ArbSize(BUY_ON_DEX, a)
    if p > hi:
        # (x + a)(x + gamma a) = x y / hi
        c = x * y / hi - x * x
        b = (1.0 + gamma) * x
        a = 2.0 * c / (b + math.sqrt(b * b + 4.0 * gamma * c))
        return ArbSize(SELL_ON_DEX, a)
    return None


def repriced(pool: PoolState, price: float) -> PoolState:
    """Slide the pool along its own curve to ``price`` without changing k.

    Used for price moves that are not modeled as swaps (reversion, noise).
    The quote reserve is nudged up by ulps if rounding would shrink k.
    """
    if not price > 0:
        raise ValueError("price must be positive")
    k = pool.base_reserve * pool.quote_reserve
    x = math.sqrt(k / price)
    y = k / x
    while x * y < k:
        y = math.nextafter(y, math.inf)
    return PoolState(x, y, pool.fee)

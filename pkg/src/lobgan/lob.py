"""Limit order book with price-then-FIFO matching.

Prices are integer ticks everywhere in here. A market order is a limit order
with ``marketable_only=True``: it matches whatever it can and the residual is
discarded instead of resting.
"""

from __future__ import annotations

import bisect
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple, Optional

logger = logging.getLogger(__name__)

BUY = 1
SELL = -1

# Limit prices used for market orders (any real price is inside these).
MARKET_BUY_PRICE = 2**62
MARKET_SELL_PRICE = 1

DEFAULT_DEPTH = 20


class OrderRejected(ValueError):
    pass


class UndefinedMidPrice(ValueError):
    pass


@dataclass(frozen=True)
class Order:
    id: int
    side: int
    price: int
    volume: int
    timestamp: int = 0
    marketable_only: bool = False

    def __post_init__(self):
        if self.side not in (BUY, SELL):
            raise OrderRejected(f"order {self.id}: side must be +1 or -1, got {self.side}")
        if self.volume < 1:
            raise OrderRejected(f"order {self.id}: volume must be >= 1, got {self.volume}")
        if self.price < 1:
            raise OrderRejected(f"order {self.id}: price must be >= 1 tick, got {self.price}")


def market_order(order_id: int, side: int, volume: int, timestamp: int = 0) -> Order:
    price = MARKET_BUY_PRICE if side == BUY else MARKET_SELL_PRICE
    return Order(order_id, side, price, volume, timestamp, marketable_only=True)


@dataclass(frozen=True)
class Trade:
    buy_order_id: int
    sell_order_id: int
    price: int
    volume: int
    timestamp: int


class SubmitResult(NamedTuple):
    trades: list
    resting: Optional[Order]
    discarded: int = 0


class CancelResult(NamedTuple):
    cancelled: int
    found: bool


@dataclass(frozen=True)
class LOBSnapshot:
    """Aggregated book view, best level first on each side."""

    bids: tuple
    asks: tuple
    timestamp: int = 0
    depth: int = DEFAULT_DEPTH

    @property
    def best_bid(self):
        return self.bids[0] if self.bids else None

    @property
    def best_ask(self):
        return self.asks[0] if self.asks else None


def mid_price(snapshot: LOBSnapshot) -> Fraction:
    """Exact midpoint in ticks; raises when either side is empty."""
    if not snapshot.bids or not snapshot.asks:
        raise UndefinedMidPrice("mid-price undefined: one side of the book is empty")
    return Fraction(snapshot.bids[0][0] + snapshot.asks[0][0], 2)


class _Entry:
    __slots__ = ("order_id", "remaining", "seq", "timestamp")

    def __init__(self, order_id, remaining, seq, timestamp):
        self.order_id = order_id
        self.remaining = remaining
        self.seq = seq
        self.timestamp = timestamp


class PriceLevel:
    """FIFO queue at one price. Backed by an insertion-ordered dict for O(1) removal."""

    __slots__ = ("price", "queue", "volume")

    def __init__(self, price: int):
        self.price = price
        self.queue: dict[int, _Entry] = {}
        self.volume = 0

    def append(self, entry: _Entry):
        self.queue[entry.order_id] = entry
        self.volume += entry.remaining

    def __len__(self):
        return len(self.queue)

    def entries(self):
        return list(self.queue.values())


class _Side:
    """One side of the book. ``prices`` is kept ascending; best is at the end for
    bids and at the front for asks."""

    def __init__(self, side: int):
        self.side = side
        self.levels: dict[int, PriceLevel] = {}
        self.prices: list[int] = []

    def best(self) -> Optional[PriceLevel]:
        if not self.prices:
            return None
        p = self.prices[-1] if self.side == BUY else self.prices[0]
        return self.levels[p]

    def level(self, price: int) -> PriceLevel:
        lvl = self.levels.get(price)
        if lvl is None:
            lvl = PriceLevel(price)
            self.levels[price] = lvl
            bisect.insort(self.prices, price)
        return lvl

    def drop(self, price: int):
        del self.levels[price]
        i = bisect.bisect_left(self.prices, price)
        del self.prices[i]

    def ordered(self, depth=None):
        ps = reversed(self.prices) if self.side == BUY else iter(self.prices)
        out = []
        for p in ps:
            if depth is not None and len(out) >= depth:
                break
            out.append((p, self.levels[p].volume))
        return tuple(out)


@dataclass
class OrderBook:
    symbol: str = ""
    next_sequence: int = 0
    trade_log: list = field(default_factory=list)

    def __post_init__(self):
        self.bids = _Side(BUY)
        self.asks = _Side(SELL)
        self._index: dict[int, tuple[int, int]] = {}  # id -> (side, price)

    def __contains__(self, order_id):
        return order_id in self._index

    def remaining(self, order_id) -> int:
        loc = self._index.get(order_id)
        if loc is None:
            return 0
        side, price = loc
        return self._side(side).levels[price].queue[order_id].remaining

    def _side(self, side):
        return self.bids if side == BUY else self.asks

    def submit_order(self, order: Order) -> SubmitResult:
        if order.id in self._index:
            raise OrderRejected(f"duplicate order id {order.id}")
        if order.volume < 1:
            raise OrderRejected(f"order {order.id}: non-positive volume")

        opposite = self.asks if order.side == BUY else self.bids
        remaining = order.volume
        trades = []
        while remaining:
            level = opposite.best()
            if level is None:
                break
            if order.side == BUY and level.price > order.price:
                break
            if order.side == SELL and level.price < order.price:
                break
            for entry in level.entries():
                qty = min(remaining, entry.remaining)
                if order.side == BUY:
                    trade = Trade(order.id, entry.order_id, level.price, qty, order.timestamp)
                else:
                    trade = Trade(entry.order_id, order.id, level.price, qty, order.timestamp)
                trades.append(trade)
                entry.remaining -= qty
                level.volume -= qty
                remaining -= qty
                if entry.remaining == 0:
                    del level.queue[entry.order_id]
                    del self._index[entry.order_id]
                if not remaining:
                    break
            if not level.queue:
                opposite.drop(level.price)
        self.trade_log.extend(trades)

        if not remaining:
            return SubmitResult(trades, None)
        if order.marketable_only:
            return SubmitResult(trades, None, remaining)
        entry = _Entry(order.id, remaining, self.next_sequence, order.timestamp)
        self.next_sequence += 1
        self._side(order.side).level(order.price).append(entry)
        self._index[order.id] = (order.side, order.price)
        resting = Order(order.id, order.side, order.price, remaining, order.timestamp)
        return SubmitResult(trades, resting)

    def cancel_order(self, order_id: int, volume: Optional[int] = None) -> CancelResult:
        loc = self._index.get(order_id)
        if loc is None:
            logger.debug("cancel: order %s not found", order_id)
            return CancelResult(0, False)
        side, price = loc
        book_side = self._side(side)
        level = book_side.levels[price]
        entry = level.queue[order_id]
        qty = entry.remaining if volume is None else min(max(volume, 0), entry.remaining)
        entry.remaining -= qty
        level.volume -= qty
        if entry.remaining == 0:
            del level.queue[order_id]
            del self._index[order_id]
            if not level.queue:
                book_side.drop(price)
        return CancelResult(qty, True)

    def snapshot(self, depth: int = DEFAULT_DEPTH, timestamp: int = 0) -> LOBSnapshot:
        return LOBSnapshot(self.bids.ordered(depth), self.asks.ordered(depth), timestamp, depth)

    def best_bid(self):
        lvl = self.bids.best()
        return None if lvl is None else (lvl.price, lvl.volume)

    def best_ask(self):
        lvl = self.asks.best()
        return None if lvl is None else (lvl.price, lvl.volume)

    def resting_orders(self):
        """(id, side, price, remaining, seq) for every resting order, bids then asks."""
        out = []
        for s in (self.bids, self.asks):
            for p in s.prices:
                for e in s.levels[p].queue.values():
                    out.append((e.order_id, s.side, p, e.remaining, e.seq))
        return out

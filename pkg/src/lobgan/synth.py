"""Synthetic order process that writes LOBSTER-format days.

There is no public LOBSTER data in the package, so tests, examples and the
acceptance suite run on days produced here. The process:

* interarrival ~ exponential, rate rising as the mid drifts from its anchor;
* direction ~ Bernoulli, tilted against the sign of the recent mid change;
* price = mid rounded to the grid, minus/plus a geometric number of grid steps
  (an offset of zero crosses the spread);
* volume ~ log-normal;
* every resting order gets an exponential lifetime, some get a partial cancel.

Matching runs through :class:`lobgan.lob.OrderBook`, and the output follows
LOBSTER conventions. Fills are type-4 messages against the resting order, a
marketable order's residual is a type-1 add, and the book starts with
pre-session orders that never appear as adds.
"""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from decimal import Decimal

import numpy as np

from .kernel import clock
from .lob import BUY, SELL, Order, OrderBook
from .lobster import (
    DELETE, EXECUTE_VISIBLE, NEW_LIMIT, PARTIAL_CANCEL, LobsterData, LobsterMessage, book_row,
)


@dataclass
class SynthParams:
    grid: int = 100
    initial_mid: int = 1_000_000
    base_rate: float = 2.0
    rate_sensitivity: float = 0.1
    offset_p: float = 0.3
    volume_mu: float = 4.0
    volume_sigma: float = 0.7
    direction_bias: float = 0.2
    direction_lag: int = 20
    mean_lifetime: float = 90.0
    partial_cancel_prob: float = 0.25
    initial_levels: int = 12
    orders_per_level: int = 2
    depth: int = 20
    session_open: str = "09:30:00"


@dataclass
class SyntheticDay:
    data: LobsterData
    orders: np.ndarray  # ground truth: time_ns, id, side, price, volume
    params: SynthParams = field(default_factory=SynthParams)


def _ns_to_decimal(ns: int) -> Decimal:
    s, frac = divmod(ns, 1_000_000_000)
    return Decimal(f"{s}.{frac:09d}")


class _Generator:
    def __init__(self, params: SynthParams, seed: int):
        self.p = params
        self.rng = np.random.default_rng(seed)
        self.book = OrderBook()
        self.messages = []
        self.rows = []
        self.truth = []
        self.cancels = []  # heap of (time, seq, order_id, partial)
        self._cseq = 0
        self.next_id = 10_000_000
        self.piece_id = -1
        self.mid = float(params.initial_mid)
        self.mids = deque(maxlen=params.direction_lag + 1)

    def _emit(self, t, typ, oid, size, price, direction):
        self.messages.append(LobsterMessage(_ns_to_decimal(t), typ, oid, size, price, direction))
        snap = self.book.snapshot(self.p.depth)
        self.rows.append(book_row(snap.bids, snap.asks, self.p.depth))

    def _schedule_cancels(self, t, oid):
        life = self.rng.exponential(self.p.mean_lifetime)
        heapq.heappush(self.cancels, (t + int(life * 1e9), self._cseq, oid, False))
        self._cseq += 1
        if self.rng.random() < self.p.partial_cancel_prob:
            at = t + int(self.rng.random() * life * 1e9)
            heapq.heappush(self.cancels, (at, self._cseq, oid, True))
            self._cseq += 1

    def _update_mid(self):
        bb, ba = self.book.best_bid(), self.book.best_ask()
        if bb and ba:
            self.mid = (bb[0] + ba[0]) / 2

    def seed_book(self, t):
        p = self.p
        base = p.initial_mid
        for lvl in range(p.initial_levels):
            for side in (BUY, SELL):
                price = base - (lvl + 1) * p.grid if side == BUY else base + (lvl + 1) * p.grid
                for _ in range(p.orders_per_level):
                    oid = self.next_id
                    self.next_id += 1
                    self.book.submit_order(Order(oid, side, price, self._volume(), t))
                    self._schedule_cancels(t, oid)
        self._update_mid()

    def _volume(self):
        return max(1, int(round(math.exp(self.rng.normal(self.p.volume_mu, self.p.volume_sigma)))))

    def rate(self):
        p = self.p
        dev = min(abs(self.mid - p.initial_mid) / p.grid, 10.0)
        return p.base_rate * (1.0 + p.rate_sensitivity * dev)

    def cancel_until(self, t_limit):
        while self.cancels and self.cancels[0][0] < t_limit:
            t, _, oid, partial = heapq.heappop(self.cancels)
            rem = self.book.remaining(oid)
            if rem == 0:
                continue
            side, price = self.book._index[oid]
            if partial:
                q = rem // 2
                if q < 1:
                    continue
                self.book.cancel_order(oid, q)
                self._emit(t, PARTIAL_CANCEL, oid, q, price, side)
            else:
                self.book.cancel_order(oid)
                self._emit(t, DELETE, oid, rem, price, side)
            self._update_mid()

    def new_order(self, t):
        p = self.p
        self.mids.append(self.mid)
        trend = np.sign(self.mid - self.mids[0])
        side = BUY if self.rng.random() < 0.5 - p.direction_bias * trend else SELL
        k = int(self.rng.geometric(p.offset_p)) - 1
        if side == BUY:
            price = math.floor(self.mid / p.grid) * p.grid - (k - 1) * p.grid
        else:
            price = math.ceil(self.mid / p.grid) * p.grid + (k - 1) * p.grid
        price = max(price, p.grid)
        volume = self._volume()
        oid = self.next_id
        self.next_id += 1
        self.truth.append((t, oid, side, price, volume))

        remaining = volume
        opposite = self.book.asks if side == BUY else self.book.bids
        while remaining:
            level = opposite.best()
            if level is None or (side == BUY and level.price > price) or (side == SELL and level.price < price):
                break
            first = next(iter(level.queue.values()))
            qty = min(remaining, first.remaining)
            resting_id = first.order_id
            self.book.submit_order(Order(self.piece_id, side, level.price, qty, t, marketable_only=True))
            self.piece_id -= 1
            remaining -= qty
            self._emit(t, EXECUTE_VISIBLE, resting_id, qty, level.price, -side)
        if remaining:
            self.book.submit_order(Order(oid, side, price, remaining, t))
            self._emit(t, NEW_LIMIT, oid, remaining, price, side)
            self._schedule_cancels(t, oid)
        self._update_mid()


def generate_day(n_orders: int = 20_000, seed: int = 0, params: SynthParams | None = None) -> SyntheticDay:
    params = params or SynthParams()
    g = _Generator(params, seed)
    t = clock(params.session_open)
    g.seed_book(t)
    for _ in range(n_orders):
        dt = max(1, int(g.rng.exponential(1.0 / g.rate()) * 1e9))
        t_next = t + dt
        g.cancel_until(t_next)
        t = t_next
        g.new_order(t)
    data = LobsterData(g.messages, np.asarray(g.rows, dtype=np.int64), [])
    return SyntheticDay(data, np.asarray(g.truth, dtype=np.int64), params)

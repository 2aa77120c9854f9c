"""World agents (market replay, CGAN) and the lambda-POV execution agent."""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exchange import FILL, REPLY, TradingAgent
from .features import (
    HISTORY, BookFeatureTracker, InsufficientWarmup, build_feature_window, extract_orders,
)
from .kernel import NS_PER_SECOND
from .lob import BUY, Order, market_order
from .lobster import (
    DELETE, EXECUTE_VISIBLE, NEW_LIMIT, PARTIAL_CANCEL, LobsterData,
)
from .model import Generator, sample_order
from .scaling import Scalers

logger = logging.getLogger(__name__)

DEFAULT_TTL_NS = 300 * NS_PER_SECOND


class HistoricalReplay:
    """Maps a LOBSTER stream onto exchange actions for one agent.

    The book is seeded from the snapshot row at ``start``: one synthetic order
    per visible level (negative ids), since the messages that built those
    levels are not in the stream. Later cancels of ids we never added fall back
    to the seed order at the same price.

    Executions are re-sent as marketable-only orders from the aggressor's side,
    limited at the execution price, so matching produces the trade itself.
    ``divergence`` counts executions whose endogenous fill differed from the
    recorded size.
    """

    def __init__(self, data: LobsterData, start: int = 0, stop: Optional[int] = None):
        self.data = data
        self.start = start
        self.cursor = start
        self.stop = len(data) if stop is None else stop
        self.seeded = False
        self.known: set[int] = set()
        self.seed_ids: dict[tuple[int, int], int] = {}
        self.unknown_cancels = 0
        self.exec_expected: dict[int, int] = {}
        self.exec_filled: dict[int, int] = {}

    @classmethod
    def from_time(cls, data: LobsterData, start_ns: int, end_ns: Optional[int] = None):
        times = np.fromiter((m.time_ns for m in data.messages), dtype=np.int64, count=len(data))
        start = int(np.searchsorted(times, start_ns, side="left"))
        stop = len(data) if end_ns is None else int(np.searchsorted(times, end_ns, side="right"))
        if start >= len(data):
            raise ValueError("historical stream ends before the requested start time")
        return cls(data, start, stop)

    @property
    def exhausted(self):
        return self.cursor >= self.stop

    def next_time(self):
        return None if self.exhausted else self.data.messages[self.cursor].time_ns

    def seed(self, agent: TradingAgent, now: int):
        bids, asks = self.data.levels(self.start)
        k = 0
        for side, levels in ((BUY, bids), (-BUY, asks)):
            for price, size in levels:
                k += 1
                self.seed_ids[(side, price)] = -k
                agent.submit(Order(-k, side, price, size, now))
        self.seeded = True
        self.cursor = self.start + 1

    def step(self, agent: TradingAgent, now: int):
        """Apply the message at the cursor; returns its index."""
        i = self.cursor
        m = self.data.messages[i]
        self.cursor += 1
        if m.type == NEW_LIMIT and m.size > 0:
            self.known.add(m.order_id)
            agent.submit(Order(m.order_id, m.direction, m.price, m.size, now))
        elif m.type in (PARTIAL_CANCEL, DELETE):
            volume = m.size if m.type == PARTIAL_CANCEL else None
            if m.order_id in self.known:
                agent.cancel(m.order_id, volume)
            elif (m.direction, m.price) in self.seed_ids:
                agent.cancel(self.seed_ids[(m.direction, m.price)], m.size)
            else:
                self.unknown_cancels += 1
        elif m.type == EXECUTE_VISIBLE and m.size > 0:
            oid = agent.kernel.next_order_id()
            self.exec_expected[oid] = m.size
            agent.submit(Order(oid, -m.direction, m.price, m.size, now, marketable_only=True))
        return i

    def on_fill(self, fill):
        if fill.order_id in self.exec_expected:
            self.exec_filled[fill.order_id] = self.exec_filled.get(fill.order_id, 0) + fill.volume

    @property
    def divergence(self):
        return sum(1 for oid, size in self.exec_expected.items()
                   if self.exec_filled.get(oid, 0) != size)


class ReplayWorldAgent(TradingAgent):
    """Re-submits historical messages at their recorded times. Not reactive."""

    def __init__(self, data: LobsterData, start_ns: int, end_ns: Optional[int] = None,
                 exchange_id: int = 0, name: str = "replay"):
        super().__init__(exchange_id, name)
        self.replay = HistoricalReplay.from_time(data, start_ns, end_ns)

    def on_start(self, kernel):
        kernel.agents[self.exchange_id].subscribe_fills(self.id)
        t = self.replay.next_time()
        self.set_wakeup(max(t, kernel.now))

    def wakeup(self, now):
        r = self.replay
        if not r.seeded:
            r.seed(self, now)
        elif not r.exhausted:
            r.step(self, now)
        t = r.next_time()
        if t is not None:
            self.set_wakeup(max(t, now))

    def on_message(self, sender, kind, payload):
        if kind == FILL:
            self.replay.on_fill(payload)


class CGANWorldAgent(TradingAgent):
    """Replays history for the warm-up, then emits generated limit orders.

    Each annotated order pairs the order fields with the top of book seen right
    after it was processed. While generating, the agent places the pending
    order, reads the live book (so other agents' activity since the previous
    order is visible), records the annotation, samples the next order and
    sleeps for its interarrival time.
    """

    def __init__(self, generator: Generator, scalers: Scalers, data: LobsterData,
                 start_ns: int, warmup_ns: int, session_open_ns: int,
                 price_grid: int = 1, ttl_ns: Optional[int] = DEFAULT_TTL_NS,
                 history: Optional[int] = None, exchange_id: int = 0, name: str = "cgan_world"):
        super().__init__(exchange_id, name)
        self.generator = generator
        self.scalers = scalers
        self.price_grid = price_grid
        self.ttl_ns = ttl_ns
        # window length defaults to the one the generator was built for
        history = history or getattr(getattr(generator, "cfg", None), "history", HISTORY)
        self.n = history
        self.warmup_end = start_ns + warmup_ns
        self.replay = HistoricalReplay.from_time(data, start_ns)
        self.tracker = BookFeatureTracker(session_open_ns)
        self.history: deque = deque(maxlen=max(history, 1) * 2)
        self.generating = False
        self.awaiting = None  # order fields waiting for their book annotation
        self.pending = None  # sampled order to place at the next wakeup
        self.last_order_time = None
        self._order_ends = self._warmup_orders(data)
        self.generated = 0

    def _warmup_orders(self, data):
        """Order fields keyed by the index of the message that completes them."""
        start = self.replay.start
        stop = self.replay.stop
        sub = LobsterData(data.messages[start:stop], data.books[start:stop], [])
        hist = extract_orders(sub, self.tracker.session_open)
        out = {}
        for k in range(len(hist)):
            idx = int(hist.last_message[k]) + start
            if idx == start:
                continue  # absorbed in the seed snapshot
            price, vol, direction = hist.rows[k, :3]
            out[idx] = (int(hist.times[k]), float(price), float(vol), float(direction))
        return out

    def on_start(self, kernel):
        if self.replay.exhausted:
            raise InsufficientWarmup("no historical data to warm up from")
        self.set_wakeup(max(self.replay.next_time(), kernel.now))

    def _annotate(self, fields, snap, now):
        bb, ba = snap.best_bid, snap.best_ask
        book = self.tracker.observe(
            bb[0] if bb else None, bb[1] if bb else 0,
            ba[0] if ba else None, ba[1] if ba else 0, now, fallback_price=fields[0])
        self.history.append(fields + book)

    def _continue_warmup(self, now):
        r = self.replay
        t = r.next_time()
        if t is None or (t >= self.warmup_end and len(self.history) >= self.n):
            if len(self.history) < self.n:
                raise InsufficientWarmup(
                    f"warm-up produced {len(self.history)} annotated orders, need {self.n}")
            self.generating = True
            self.set_wakeup(max(self.warmup_end, now))
            return
        self.set_wakeup(max(t, now))

    def wakeup(self, now):
        if self.generating:
            if self.pending is not None:
                p = self.pending
                oid = self.kernel.next_order_id()
                self.submit(Order(oid, p.direction, p.price, p.volume, now), ttl=self.ttl_ns)
                self.awaiting = (float(p.price), float(p.volume), float(p.direction),
                                 p.interarrival_ns / 1e9)
                self.pending = None
            self.query()
            return

        r = self.replay
        if not r.seeded:
            r.seed(self, now)
            self._continue_warmup(now)
            return
        idx = r.step(self, now)
        fields = self._order_ends.get(idx)
        if fields is not None:
            t, price, vol, direction = fields
            dt = 1e-9 if self.last_order_time is None else max((t - self.last_order_time) / 1e9, 1e-9)
            self.last_order_time = t
            self.awaiting = (price, vol, direction, dt)
            self.query()
            return
        self._continue_warmup(now)

    def on_message(self, sender, kind, payload):
        if kind == FILL:
            self.replay.on_fill(payload)
            return
        if kind != REPLY:
            return
        now = self.kernel.now
        if self.awaiting is not None:
            self._annotate(self.awaiting, payload.snapshot, now)
            self.awaiting = None
        elif self.generating:
            # Refresh the newest annotation with the book as it is now.
            last = self.history[-1]
            self.history.pop()
            self._annotate(last[:4], payload.snapshot, now)
        if not self.generating:
            self._continue_warmup(now)
            return
        window = build_feature_window(list(self.history), self.scalers, self.n)
        self.pending = sample_order(self.generator, window, self.rng, self.scalers, self.price_grid)
        self.generated += 1
        self.set_wakeup(now + self.pending.interarrival_ns)


@dataclass(frozen=True)
class PovConfig:
    lam: float
    period_ns: int = 60 * NS_PER_SECOND
    direction: int = BUY
    target: int = 10**9
    start_ns: int = 0
    end_ns: int = 0

    def __post_init__(self):
        if not 0 < self.lam <= 1:
            raise ValueError("lambda must be in (0, 1]")
        if self.target < 1:
            raise ValueError("target quantity must be >= 1")
        if not self.start_ns < self.end_ns:
            raise ValueError("POV window start must precede its end")
        if self.direction not in (1, -1):
            raise ValueError("direction must be +1 or -1")


def pov_order_size(lam: float, market_volume: int, remaining: int) -> int:
    """round(lam * V_t) capped at the remaining target; never negative."""
    q = int(math.floor(lam * max(market_volume, 0) + 0.5))
    return max(0, min(q, remaining))


class POVAgent(TradingAgent):
    """Every period, trades lam times the market volume since its previous wakeup.

    Market volume excludes the agent's own fills. The first wakeup only sets the
    volume baseline. Orders are marketable-only; unfilled residuals are dropped.
    """

    def __init__(self, config: PovConfig, exchange_id: int = 0, name: str = "pov"):
        super().__init__(exchange_id, name)
        self.config = config
        self.filled = 0
        self._last_total = None
        self._filled_at_last = 0
        self.orders: list[tuple[int, int]] = []  # (time, size)
        self.done = False

    def on_start(self, kernel):
        kernel.agents[self.exchange_id].subscribe_fills(self.id)
        self.set_wakeup(max(self.config.start_ns, kernel.now))

    def wakeup(self, now):
        if self.done or now > self.config.end_ns or self.filled >= self.config.target:
            self.done = True
            return
        self.query()

    def on_message(self, sender, kind, payload):
        if kind == FILL:
            self.filled += payload.volume
            if self.filled >= self.config.target:
                self.done = True
            return
        if kind != REPLY:
            return
        now = self.kernel.now
        cfg = self.config
        total = payload.traded_volume
        if self._last_total is not None and not self.done:
            market = (total - self._last_total) - (self.filled - self._filled_at_last)
            size = pov_order_size(cfg.lam, market, cfg.target - self.filled)
            if size > 0:
                self.orders.append((now, size))
                self.submit(market_order(self.kernel.next_order_id(), cfg.direction, size, now))
        self._last_total = total
        self._filled_at_last = self.filled
        nxt = now + cfg.period_ns
        if nxt <= cfg.end_ns:
            self.set_wakeup(nxt)

"""Exchange agent: owns the order book and answers agents through kernel messages."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from .kernel import Agent
from .lob import LOBSnapshot, Order, OrderBook, OrderRejected, DEFAULT_DEPTH

logger = logging.getLogger(__name__)

SUBMIT = "submit_order"
CANCEL = "cancel_order"
QUERY = "query_book"
REPLY = "book_reply"
FILL = "fill"
EXPIRE = "expire"


@dataclass(frozen=True)
class SubmitOrder:
    order: Order
    ttl: Optional[int] = None

    def log_fields(self):
        o = self.order
        return (o.id, o.side, o.price, o.volume, o.marketable_only, self.ttl)


@dataclass(frozen=True)
class CancelOrder:
    order_id: int
    volume: Optional[int] = None


@dataclass(frozen=True)
class BookQuery:
    depth: int = 1


@dataclass(frozen=True)
class BookReply:
    snapshot: LOBSnapshot
    traded_volume: int
    last_mid: Optional[Fraction]

    def log_fields(self):
        bb = self.snapshot.best_bid or ("", "")
        ba = self.snapshot.best_ask or ("", "")
        return (bb[0], bb[1], ba[0], ba[1], self.traded_volume)


@dataclass(frozen=True)
class Fill:
    order_id: int
    side: int
    price: int
    volume: int


def _mid(book: OrderBook) -> Optional[Fraction]:
    bb, ba = book.best_bid(), book.best_ask()
    if bb is None or ba is None:
        return None
    return Fraction(bb[0] + ba[0], 2)


class ExchangeAgent(Agent):
    """Single-symbol exchange. Priority 0 so it runs before traders at equal times.

    Keeps the trace tables that the CLI writes out: the order log, the trade
    list and the sequence of mid-price changes.
    """

    priority = 0

    def __init__(self, symbol: str = "", depth: int = DEFAULT_DEPTH, name: str = "exchange"):
        super().__init__(name)
        self.book = OrderBook(symbol)
        self.depth = depth
        self.owners: dict[int, int] = {}
        self.fill_subscribers: set[int] = set()
        self.traded_volume = 0
        self.order_log: list[tuple] = []
        self.trades: list[tuple] = []
        self.mid_log: list[tuple] = []
        self.last_mid: Optional[Fraction] = None
        self.rejected = 0

    def subscribe_fills(self, agent_id: int):
        self.fill_subscribers.add(agent_id)

    def _record_mid(self, now):
        mid = _mid(self.book)
        if mid is not None and mid != self.last_mid:
            self.last_mid = mid
            self.mid_log.append((now, mid))

    def on_message(self, sender, kind, payload):
        now = self.kernel.now
        if kind == SUBMIT:
            self._submit(sender, payload, now)
        elif kind == CANCEL:
            res = self.book.cancel_order(payload.order_id, payload.volume)
            if res.found:
                self.order_log.append((now, sender, "", "", res.cancelled, payload.order_id, "cancel"))
                self._record_mid(now)
        elif kind == EXPIRE:
            res = self.book.cancel_order(payload.order_id)
            if res.found:
                self.order_log.append((now, self.owners.get(payload.order_id, ""), "", "",
                                       res.cancelled, payload.order_id, "expire"))
                self._record_mid(now)
        elif kind == QUERY:
            snap = self.book.snapshot(payload.depth if payload else self.depth, now)
            self.send(sender, REPLY, BookReply(snap, self.traded_volume, self.last_mid))
        else:
            raise ValueError(f"exchange got unknown message kind {kind!r}")

    def _submit(self, sender, msg: SubmitOrder, now):
        o = msg.order
        if o.timestamp != now:
            o = Order(o.id, o.side, o.price, o.volume, now, o.marketable_only)
        try:
            res = self.book.submit_order(o)
        except OrderRejected as exc:
            self.rejected += 1
            logger.debug("rejected order from agent %s: %s", sender, exc)
            self.order_log.append((now, sender, o.side, o.price, o.volume, o.id, "reject"))
            return
        self.owners[o.id] = sender
        self.order_log.append((now, sender, o.side, o.price, o.volume, o.id, "submit"))
        for t in res.trades:
            self.traded_volume += t.volume
            self.trades.append((now, t.price, t.volume, t.buy_order_id, t.sell_order_id))
            for oid, side in ((t.buy_order_id, 1), (t.sell_order_id, -1)):
                owner = self.owners.get(oid)
                if owner in self.fill_subscribers:
                    self.send(owner, FILL, Fill(oid, side, t.price, t.volume))
        if res.resting is not None and msg.ttl:
            self.kernel.schedule(now + msg.ttl, self.id, EXPIRE, CancelOrder(o.id), self.id)
        self._record_mid(now)


class TradingAgent(Agent):
    """Agent that talks to one exchange."""

    def __init__(self, exchange_id: int = 0, name: Optional[str] = None):
        super().__init__(name)
        self.exchange_id = exchange_id

    def submit(self, order: Order, ttl: Optional[int] = None):
        self.send(self.exchange_id, SUBMIT, SubmitOrder(order, ttl))

    def cancel(self, order_id: int, volume: Optional[int] = None):
        self.send(self.exchange_id, CANCEL, CancelOrder(order_id, volume))

    def query(self, depth: int = 1):
        self.send(self.exchange_id, QUERY, BookQuery(depth))

"""Annotated orders and the conditioning window fed to the generator.

An annotated order is a row of 10 raw features::

    price, volume, direction, time (interarrival seconds),
    best_bid_price, best_bid_volume, best_ask_price, best_ask_volume,
    mid_price, time_period (seconds since session open)

The book features are taken right after the order was processed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .lobster import DELETE, EXECUTE_VISIBLE, NEW_LIMIT, LobsterData
from .scaling import FEATURES, Scalers

HISTORY = 50
N_FEATURES = len(FEATURES)
MIN_INTERARRIVAL_S = 1e-9


class InsufficientWarmup(RuntimeError):
    pass


@dataclass
class OrderHistory:
    rows: np.ndarray  # (n, 10) raw features
    times: np.ndarray  # (n,) ns since midnight
    last_message: np.ndarray  # (n,) index of the message that completed each order

    def __len__(self):
        return len(self.rows)


class BookFeatureTracker:
    """Turns top-of-book observations into the six book features, carrying forward
    the last defined price when a side is empty."""

    def __init__(self, session_open_ns: int):
        self.session_open = session_open_ns
        self.bid = None
        self.ask = None
        self.mid = None

    def observe(self, bid_price, bid_volume, ask_price, ask_volume, now_ns, fallback_price=None):
        if bid_price is not None:
            self.bid = bid_price
        if ask_price is not None:
            self.ask = ask_price
        if bid_price is not None and ask_price is not None:
            self.mid = (bid_price + ask_price) / 2
        if self.mid is None:
            self.mid = fallback_price
        bid = self.bid if self.bid is not None else self.mid
        ask = self.ask if self.ask is not None else self.mid
        return (
            float(bid), float(bid_volume if bid_price is not None else 0),
            float(ask), float(ask_volume if ask_price is not None else 0),
            float(self.mid), (now_ns - self.session_open) / 1e9,
        )


def extract_orders(data: LobsterData, session_open_ns: int) -> OrderHistory:
    """Recover submitted orders from a LOBSTER message stream.

    New limit orders are type-1 messages. A marketable order shows up only as
    a burst of visible executions at one timestamp against one side, possibly
    followed by a type-1 add of its residual; such bursts are merged back into
    a single order priced at the worst fill (or at the residual's limit).
    Hidden executions are not turned into orders.
    """
    msgs = data.messages
    orders = []  # (time_ns, price, volume, direction, last_index)
    burst = None  # [time_ns, aggressor_dir, volume, worst_price, last_index]

    def flush():
        nonlocal burst
        if burst is not None:
            orders.append((burst[0], burst[3], burst[2], burst[1], burst[4]))
            burst = None

    for i, m in enumerate(msgs):
        t = m.time_ns
        if m.type == EXECUTE_VISIBLE:
            aggressor = -m.direction
            if burst is not None and burst[0] == t and burst[1] == aggressor:
                burst[2] += m.size
                burst[3] = max(burst[3], m.price) if aggressor == 1 else min(burst[3], m.price)
                burst[4] = i
            else:
                flush()
                burst = [t, aggressor, m.size, m.price, i]
        elif m.type == NEW_LIMIT:
            if burst is not None and burst[0] == t and burst[1] == m.direction:
                orders.append((t, m.price, burst[2] + m.size, m.direction, i))
                burst = None
            else:
                flush()
                orders.append((t, m.price, m.size, m.direction, i))
        else:
            flush()
    flush()

    tracker = BookFeatureTracker(session_open_ns)
    rows = np.empty((len(orders), N_FEATURES))
    prev_t = msgs[0].time_ns if msgs else 0
    for k, (t, price, vol, direction, idx) in enumerate(orders):
        bid_p, bid_v, ask_p, ask_v = data.best(idx)
        book = tracker.observe(bid_p, bid_v, ask_p, ask_v, t, fallback_price=price)
        dt = max((t - prev_t) / 1e9, MIN_INTERARRIVAL_S)
        rows[k] = (price, vol, direction, dt) + book
        prev_t = t
    return OrderHistory(
        rows,
        np.array([o[0] for o in orders], dtype=np.int64),
        np.array([o[4] for o in orders], dtype=np.int64),
    )


def build_feature_window(history, scalers: Scalers, n: int = HISTORY) -> np.ndarray:
    """Conditioning vector of length 10*n, most recent order first.

    ``history`` holds raw feature rows oldest-to-newest; only the last ``n``
    are used. Values outside the training range are clipped to [-1, 1].
    """
    history = np.asarray(history, dtype=np.float64)
    if history.ndim != 2 or len(history) < n:
        raise InsufficientWarmup(f"need {n} annotated orders, have {len(history)}")
    recent = history[-n:][::-1]
    return scalers.transform(recent, clip=True).reshape(-1)


def build_training_pairs(rows, scalers: Scalers, n: int = HISTORY):
    """(targets, windows): order k's normalized 4-tuple against the n orders before it.

    Returns float32 arrays of shapes (m, 4) and (m, 10*n) with m = len(rows) - n.
    """
    norm = scalers.transform(rows, clip=True)
    if len(norm) <= n:
        raise InsufficientWarmup(f"need more than {n} orders to build training pairs")
    # windows[j] covers rows j .. j+n-1; the target is row j+n.
    windows = sliding_window_view(norm, (n, N_FEATURES))[:, 0][:-1]
    windows = windows[:, ::-1, :].reshape(len(windows), n * N_FEATURES)
    targets = norm[n:, :4]
    return targets.astype(np.float32), np.ascontiguousarray(windows, dtype=np.float32)


def mean_order_lifetime(data: LobsterData) -> float | None:
    """Mean seconds from add (type 1) to full delete (type 3); None without such pairs.

    Used as the expiry for generated orders, which carry no cancellations of
    their own, so the simulated book keeps the depth seen in the data.
    """
    added: dict[int, int] = {}
    total, n = 0, 0
    for m in data.messages:
        if m.type == NEW_LIMIT:
            added[m.order_id] = m.time_ns
        elif m.type == DELETE and m.order_id in added:
            total += m.time_ns - added.pop(m.order_id)
            n += 1
    return total / n / 1e9 if n else None

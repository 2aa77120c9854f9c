import random
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from lobgan.lob import (
    BUY, SELL, Order, OrderBook, OrderRejected, UndefinedMidPrice, Trade,
    market_order, mid_price,
)
from reference_matcher import ReferenceMatcher


def test_partial_fill_against_single_ask():
    book = OrderBook()
    book.submit_order(Order(7, SELL, 1000000, 100))
    res = book.submit_order(Order(8, BUY, 1000100, 50))
    assert res.trades == [Trade(8, 7, 1000000, 50, 0)]
    assert res.resting is None
    assert book.snapshot().asks == ((1000000, 50),)


def test_non_marketable_rests_as_best_bid():
    book = OrderBook()
    res = book.submit_order(Order(1, BUY, 999900, 10))
    assert res.trades == []
    assert res.resting.volume == 10
    assert book.best_bid() == (999900, 10)


def test_fifo_within_level():
    book = OrderBook()
    book.submit_order(Order(101, SELL, 1000000, 30))
    book.submit_order(Order(102, SELL, 1000000, 30))
    res = book.submit_order(Order(103, BUY, 1000000, 40))
    assert [(t.sell_order_id, t.volume) for t in res.trades] == [(101, 30), (102, 10)]
    assert book.remaining(102) == 20


def test_marketable_only_residual_is_discarded():
    book = OrderBook()
    book.submit_order(Order(1, SELL, 500, 5))
    res = book.submit_order(market_order(2, BUY, 8))
    assert sum(t.volume for t in res.trades) == 5
    assert res.resting is None and res.discarded == 3
    assert 2 not in book


def test_rejections():
    book = OrderBook()
    book.submit_order(Order(1, BUY, 10, 1))
    with pytest.raises(OrderRejected):
        book.submit_order(Order(1, BUY, 10, 1))
    with pytest.raises(OrderRejected):
        Order(2, BUY, 10, 0)
    with pytest.raises(OrderRejected):
        Order(3, 0, 10, 1)


def test_cancel_partial_full_unknown():
    book = OrderBook()
    book.submit_order(Order(5, BUY, 100, 25))
    assert book.cancel_order(5, 10) == (10, True)
    assert book.remaining(5) == 15
    assert book.cancel_order(5) == (15, True)
    assert book.snapshot().bids == ()
    assert book.cancel_order(99) == (0, False)


def test_snapshot_truncates_to_depth():
    book = OrderBook()
    assert book.snapshot().bids == () and book.snapshot().asks == ()
    for i in range(25):
        book.submit_order(Order(i, SELL, 1000 + i, 1))
    snap = book.snapshot()
    assert len(snap.asks) == 20
    assert [p for p, _ in snap.asks] == list(range(1000, 1020))


def test_mid_price():
    book = OrderBook()
    book.submit_order(Order(1, BUY, 999900, 1))
    book.submit_order(Order(2, SELL, 1000100, 1))
    assert mid_price(book.snapshot()) == 1000000
    book.cancel_order(2)
    book.submit_order(Order(3, SELL, 999901, 1))
    assert mid_price(book.snapshot()) == Fraction(1999801, 2)
    book.cancel_order(3)
    with pytest.raises(UndefinedMidPrice):
        mid_price(book.snapshot())


def random_ops(seed, n):
    rng = random.Random(seed)
    live = []
    next_id = 1
    ops = []
    for _ in range(n):
        u = rng.random()
        if live and u < 0.3:
            oid = rng.choice(live)
            vol = None if rng.random() < 0.5 else rng.randint(1, 60)
            ops.append(("cancel", oid, vol))
            continue
        side = rng.choice((BUY, SELL))
        price = 1000 + rng.randint(-12, 12)
        vol = rng.randint(1, 60)
        mkt = u > 0.95
        ops.append(("submit", Order(next_id, side, price, vol, next_id, mkt)))
        live.append(next_id)
        next_id += 1
        if rng.random() < 0.02:
            ops.append(("cancel", rng.randint(10**6, 10**6 + 10), None))
    return ops


def replay(ops):
    book, ref = OrderBook(), ReferenceMatcher()
    for op in ops:
        if op[0] == "submit":
            o = op[1]
            book.submit_order(o)
            ref.submit(o.id, o.side, o.price, o.volume, o.timestamp, o.marketable_only)
        else:
            got = book.cancel_order(op[1], op[2]).cancelled
            assert got == ref.cancel(op[1], op[2])
        bb, ba = book.best_bid(), book.best_ask()
        if bb and ba:
            assert bb[0] < ba[0]
    return book, ref


def test_oracle_equivalence_small():
    book, ref = replay(random_ops(3, 2000))
    assert [(t.buy_order_id, t.sell_order_id, t.price, t.volume, t.timestamp)
            for t in book.trade_log] == ref.trades
    snap = book.snapshot()
    assert (snap.bids, snap.asks) == ref.snapshot()


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.sampled_from((BUY, SELL)), st.integers(95, 105),
                          st.integers(1, 20), st.booleans()), max_size=60))
def test_conservation_and_never_crossed(orders):
    book = OrderBook()
    for i, (side, price, vol, mkt) in enumerate(orders):
        res = book.submit_order(Order(i, side, price, vol, i, mkt))
        matched = sum(t.volume for t in res.trades)
        rest = res.resting.volume if res.resting else 0
        assert matched + rest + res.discarded == vol
        for t in res.trades:
            assert t.volume >= 1
        bb, ba = book.best_bid(), book.best_ask()
        if bb and ba:
            assert bb[0] < ba[0]


def test_price_priority_trades_at_best_opposite():
    book = OrderBook()
    book.submit_order(Order(1, SELL, 105, 5))
    book.submit_order(Order(2, SELL, 103, 5))
    book.submit_order(Order(3, SELL, 104, 5))
    res = book.submit_order(Order(4, BUY, 105, 12))
    assert [t.price for t in res.trades] == [103, 104, 105]


def test_self_trade_allowed():
    book = OrderBook()
    book.submit_order(Order(1, SELL, 100, 5))
    res = book.submit_order(Order(2, BUY, 100, 5))
    assert len(res.trades) == 1


def test_determinism():
    ops = random_ops(11, 3000)
    a, _ = replay(ops)
    b, _ = replay(ops)
    assert a.trade_log == b.trade_log

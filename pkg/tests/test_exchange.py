from fractions import Fraction

from lobgan.exchange import FILL, REPLY, ExchangeAgent, TradingAgent
from lobgan.kernel import Kernel, KernelConfig
from lobgan.lob import BUY, SELL, Order, market_order


class Scripted(TradingAgent):
    """Runs ``script[t]`` (a callable taking the agent) at each scheduled time."""

    def __init__(self, script, subscribe=False):
        super().__init__(0)
        self.script = script
        self.subscribe = subscribe
        self.inbox = []

    def on_start(self, kernel):
        if self.subscribe:
            kernel.agents[0].subscribe_fills(self.id)
        for t in sorted(self.script):
            self.set_wakeup(t)

    def wakeup(self, now):
        self.script[now](self)

    def on_message(self, sender, kind, payload):
        self.inbox.append((self.kernel.now, kind, payload))


def run(script, end=10_000, subscribe=False):
    k = Kernel(KernelConfig(0, end))
    ex = ExchangeAgent()
    k.register_agent(ex)
    a = Scripted(script, subscribe)
    k.register_agent(a)
    k.run()
    return ex, a


def test_fills_and_reply():
    ex, a = run({
        1: lambda s: s.submit(Order(1, SELL, 101, 10)),
        2: lambda s: s.submit(Order(2, BUY, 99, 10)),
        3: lambda s: s.submit(market_order(3, BUY, 4)),
        4: lambda s: s.query(),
    }, subscribe=True)
    fills = [p for _, kind, p in a.inbox if kind == FILL]
    assert {(f.order_id, f.volume) for f in fills} == {(1, 4), (3, 4)}
    reply = [p for _, kind, p in a.inbox if kind == REPLY][0]
    assert reply.snapshot.best_ask == (101, 6)
    assert reply.traded_volume == 4
    assert ex.trades == [(3, 101, 4, 3, 1)]
    assert ex.mid_log == [(2, Fraction(100))]


def test_ttl_expiry_removes_resting_order():
    ex, _ = run({1: lambda s: s.submit(Order(1, BUY, 99, 5), ttl=100)})
    assert 1 not in ex.book
    assert ex.order_log[-1] == (101, 1, "", "", 5, 1, "expire")


def test_duplicate_id_is_rejected_and_logged():
    ex, _ = run({
        1: lambda s: s.submit(Order(1, BUY, 99, 5)),
        2: lambda s: s.submit(Order(1, BUY, 98, 5)),
    })
    assert ex.rejected == 1
    assert ex.order_log[-1][-1] == "reject"


def test_orders_are_stamped_with_arrival_time():
    ex, _ = run({7: lambda s: s.submit(Order(1, BUY, 99, 5, timestamp=0))})
    assert ex.book.snapshot().bids == ((99, 5),)
    assert ex.order_log[0][0] == 7

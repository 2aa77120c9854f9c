"""Deterministic discrete-event kernel.

Events are totally ordered by ``(fire_time, priority, sequence)``. The sequence
is a kernel-wide counter assigned at scheduling time, so ties between events at
the same time and priority resolve in the order they were scheduled.
"""

from __future__ import annotations

import dataclasses
import heapq
import io
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Optional

import numpy as np

logger = logging.getLogger(__name__)

NS_PER_SECOND = 1_000_000_000

WAKEUP = "wakeup"

# Order ids handed out by the kernel start well above LOBSTER ids.
_FIRST_KERNEL_ORDER_ID = 1 << 40


def clock(hhmmss: str) -> int:
    """'10:30:00' or '10:30:00.250' -> nanoseconds since midnight."""
    parts = hhmmss.split(":")
    if len(parts) != 3:
        raise ValueError(f"expected HH:MM:SS, got {hhmmss!r}")
    h, m = int(parts[0]), int(parts[1])
    s = Fraction(parts[2])
    return int((h * 3600 + m * 60 + s) * NS_PER_SECOND)


def format_clock(ns: int) -> str:
    s, frac = divmod(ns, NS_PER_SECOND)
    h, rem = divmod(s, 3600)
    m, s = divmod(rem, 60)
    return f"{h:02d}:{m:02d}:{s:02d}.{frac:09d}"


class SchedulingError(ValueError):
    pass


class RegistrationError(RuntimeError):
    pass


class AgentFailure(RuntimeError):
    def __init__(self, event, cause):
        super().__init__(f"agent {event.recipient} failed handling {event.kind} "
                         f"at t={event.fire_time} (seq {event.sequence}): {cause!r}")
        self.event = event
        self.__cause__ = cause


@dataclass(order=True, frozen=True)
class Event:
    fire_time: int
    priority: int
    sequence: int
    recipient: int = field(compare=False)
    kind: str = field(compare=False)
    payload: Any = field(default=None, compare=False)
    sender: Optional[int] = field(default=None, compare=False)


@dataclass
class KernelConfig:
    start_time: int
    end_time: int
    seed: int = 0
    latency: int = 0

    def __post_init__(self):
        if self.start_time >= self.end_time:
            raise ValueError("start_time must precede end_time")


def agent_rng(seed: int, agent_id: int) -> np.random.Generator:
    """Counter-based stream keyed by (master seed, agent id)."""
    ss = np.random.SeedSequence([seed & (2**64 - 1), agent_id])
    return np.random.Generator(np.random.Philox(ss))


def _field_text(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if v is None:
        return ""
    if isinstance(v, Fraction):
        return str(v.numerator) if v.denominator == 1 else f"{v.numerator}/{v.denominator}"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def payload_fields(payload) -> tuple:
    if payload is None:
        return ()
    if hasattr(payload, "log_fields"):
        return tuple(payload.log_fields())
    if dataclasses.is_dataclass(payload):
        return tuple(getattr(payload, f.name) for f in dataclasses.fields(payload))
    if isinstance(payload, (tuple, list)):
        return tuple(payload)
    return (payload,)


class EventLog(list):
    """Ordered delivery records ``(time, agent_id, kind, fields)``."""

    def to_csv(self) -> str:
        buf = io.StringIO()
        for t, agent_id, kind, fields in self:
            row = [str(t), str(agent_id), kind] + [_field_text(v) for v in fields]
            buf.write(",".join(row))
            buf.write("\n")
        return buf.getvalue()

    def write(self, path):
        with open(path, "w", newline="") as fh:
            fh.write("time,agent_id,event_kind,payload\n")
            fh.write(self.to_csv())


class Agent:
    """Base class. Subclasses override :meth:`wakeup` and/or :meth:`on_message`."""

    priority = 1

    def __init__(self, name: Optional[str] = None):
        self.name = name or type(self).__name__
        self.id: Optional[int] = None
        self.rng: Optional[np.random.Generator] = None
        self.kernel: Optional[Kernel] = None

    def on_start(self, kernel: "Kernel"):
        pass

    def on_end(self, kernel: "Kernel"):
        pass

    def receive(self, kernel: "Kernel", event: Event):
        if event.kind == WAKEUP:
            self.wakeup(kernel.now)
        else:
            self.on_message(event.sender, event.kind, event.payload)

    def wakeup(self, now: int):
        pass

    def on_message(self, sender, kind, payload):
        pass

    # conveniences
    def send(self, recipient: int, kind: str, payload=None, delay: int = 0):
        self.kernel.send(self.id, recipient, kind, payload, delay)

    def set_wakeup(self, at: int):
        self.kernel.schedule_wakeup(self.id, at)


class Kernel:
    def __init__(self, config: KernelConfig):
        self.config = config
        self.agents: list[Agent] = []
        self.now = config.start_time
        self._queue: list[Event] = []
        self._sequence = 0
        self._running = False
        self._order_ids = _FIRST_KERNEL_ORDER_ID
        self.log = EventLog()

    def register_agent(self, agent: Agent) -> int:
        if self._running:
            raise RegistrationError("cannot register agents after run() has started")
        agent.id = len(self.agents)
        agent.rng = agent_rng(self.config.seed, agent.id)
        agent.kernel = self
        self.agents.append(agent)
        return agent.id

    def next_order_id(self) -> int:
        self._order_ids += 1
        return self._order_ids

    def schedule(self, fire_time: int, recipient: int, kind: str, payload=None,
                 sender: Optional[int] = None) -> Event:
        if fire_time < self.now:
            raise SchedulingError(f"event at {fire_time} is before current time {self.now}")
        priority = self.agents[recipient].priority
        ev = Event(fire_time, priority, self._sequence, recipient, kind, payload, sender)
        self._sequence += 1
        heapq.heappush(self._queue, ev)
        return ev

    def schedule_wakeup(self, agent_id: int, at: int) -> Event:
        return self.schedule(at, agent_id, WAKEUP, None, agent_id)

    def send(self, sender: int, recipient: int, kind: str, payload=None, delay: int = 0):
        at = self.now + delay + self.config.latency
        return self.schedule(at, recipient, kind, payload, sender)

    def run(self) -> EventLog:
        if not self.agents:
            raise RuntimeError("no agents registered")
        self._running = True
        for agent in self.agents:
            agent.on_start(self)
        end = self.config.end_time
        queue = self._queue
        log = self.log
        while queue:
            if queue[0].fire_time > end:
                break
            ev = heapq.heappop(queue)
            self.now = ev.fire_time
            log.append((ev.fire_time, ev.recipient, ev.kind, payload_fields(ev.payload)))
            try:
                self.agents[ev.recipient].receive(self, ev)
            except Exception as exc:
                raise AgentFailure(ev, exc) from exc
        for agent in self.agents:
            agent.on_end(self)
        return log

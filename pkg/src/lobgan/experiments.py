"""Simulation runs, paired market-impact runs and trace files."""

from __future__ import annotations

import csv
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .agents import DEFAULT_TTL_NS, CGANWorldAgent, POVAgent, PovConfig, ReplayWorldAgent
from .exchange import ExchangeAgent
from .kernel import NS_PER_SECOND, EventLog, Kernel, KernelConfig
from .lob import DEFAULT_DEPTH
from .lobster import EXECUTE_HIDDEN, EXECUTE_VISIBLE, LobsterData
from .model import Generator
from .scaling import Scalers
from .stylized import MINUTE_NS, StylizedFactsReport, bucket_volumes, resample, stylized_facts

logger = logging.getLogger(__name__)

QUANTILES = (5, 25, 50, 75, 95)
QUANTILE_NAMES = ("q05", "q25", "median", "q75", "q95")


@dataclass
class WorldSetup:
    kind: str  # "cgan" or "replay"
    data: LobsterData
    session_open_ns: int
    generator: Optional[Generator] = None
    scalers: Optional[Scalers] = None
    price_grid: int = 1
    warmup_ns: int = 30 * 60 * NS_PER_SECOND
    ttl_ns: Optional[int] = DEFAULT_TTL_NS

    def __post_init__(self):
        if self.kind not in ("cgan", "replay"):
            raise ValueError(f"unknown world kind {self.kind!r}")
        if self.kind == "cgan" and (self.generator is None or self.scalers is None):
            raise ValueError("cgan world needs a generator and fitted scalers")


@dataclass
class SimResult:
    seed: int
    start_ns: int
    end_ns: int
    log: EventLog
    exchange: ExchangeAgent
    world: object
    povs: list = field(default_factory=list)

    def mid_series(self, step_ns: int = NS_PER_SECOND, start_ns=None, end_ns=None):
        start = self.start_ns if start_ns is None else start_ns
        end = self.end_ns if end_ns is None else end_ns
        times = np.arange(start, end + 1, step_ns, dtype=np.int64)
        return times, locf(self.exchange.mid_log, times)

    def write(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        self.log.write(d / "events.csv")
        with open(d / "orders.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "agent", "side", "price_ticks", "volume", "order_id", "event"])
            w.writerows(self.exchange.order_log)
        with open(d / "trades.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "price_ticks", "volume", "buy_id", "sell_id"])
            w.writerows(self.exchange.trades)
        times, mids = self.mid_series()
        with open(d / "mid.csv", "w", newline="") as fh:
            fh.write("time,mid_ticks\n")
            for t, m in zip(times, mids):
                fh.write(f"{t},{'' if np.isnan(m) else repr(float(m))}\n")


def locf(mid_log, times) -> np.ndarray:
    """Last mid at or before each time; NaN before the first defined mid."""
    if not mid_log:
        return np.full(len(times), np.nan)
    t = np.fromiter((x[0] for x in mid_log), dtype=np.int64, count=len(mid_log))
    v = np.fromiter((float(x[1]) for x in mid_log), dtype=np.float64, count=len(mid_log))
    idx = np.searchsorted(t, times, side="right") - 1
    out = np.where(idx >= 0, v[np.maximum(idx, 0)], np.nan)
    return out


def run_simulation(world: WorldSetup, start_ns: int, end_ns: int, seed: int,
                   povs: Sequence[PovConfig] = (), depth: int = DEFAULT_DEPTH,
                   latency: int = 0) -> SimResult:
    kernel = Kernel(KernelConfig(start_ns, end_ns, seed, latency))
    exchange = ExchangeAgent(depth=depth)
    kernel.register_agent(exchange)
    if world.kind == "replay":
        agent = ReplayWorldAgent(world.data, start_ns, end_ns, exchange.id)
    else:
        agent = CGANWorldAgent(world.generator, world.scalers, world.data, start_ns,
                               world.warmup_ns, world.session_open_ns, world.price_grid,
                               world.ttl_ns, exchange_id=exchange.id)
    kernel.register_agent(agent)
    pov_agents = []
    for cfg in povs:
        a = POVAgent(cfg, exchange.id)
        kernel.register_agent(a)
        pov_agents.append(a)
    log = kernel.run()
    return SimResult(seed, start_ns, end_ns, log, exchange, agent, pov_agents)


def normalized_difference(with_mid, without_mid) -> np.ndarray:
    """(m_with - m_without) / m_without on a shared grid."""
    with np.errstate(invalid="ignore", divide="ignore"):
        return (np.asarray(with_mid) - np.asarray(without_mid)) / np.asarray(without_mid)


@dataclass
class ImpactReport:
    times: np.ndarray
    lambdas: list
    seeds: list
    differences: dict  # lambda -> (n_seeds, n_times)
    world_kind: str = ""

    def bands(self, lam) -> dict:
        d = self.differences[lam]
        with warnings.catch_warnings():
            # grid points before any mid exists are all-NaN and stay NaN
            warnings.simplefilter("ignore", RuntimeWarning)
            qs = np.nanpercentile(d, QUANTILES, axis=0) if len(d) else np.full((5, len(self.times)), np.nan)
        return dict(zip(QUANTILE_NAMES, qs))

    def write_csv(self, lam, path, start_ns=None, end_ns=None):
        b = self.bands(lam)
        mask = np.ones(len(self.times), dtype=bool)
        if start_ns is not None:
            mask &= self.times >= start_ns
        if end_ns is not None:
            mask &= self.times <= end_ns
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", *QUANTILE_NAMES])
            for i in np.nonzero(mask)[0]:
                w.writerow([int(self.times[i])] + [_fmt(b[k][i]) for k in QUANTILE_NAMES])

    def summary(self, window=None) -> dict:
        out = {"world": self.world_kind, "seeds": list(self.seeds), "lambdas": {}}
        for lam in self.lambdas:
            med = self.bands(lam)["median"]
            sel = np.ones(len(self.times), dtype=bool)
            if window:
                sel = (self.times >= window[0]) & (self.times <= window[1])
            vals = med[sel]
            vals = vals[np.isfinite(vals)]
            out["lambdas"][str(lam)] = {
                "median_mean": float(vals.mean()) if len(vals) else None,
                "median_max_abs": float(np.abs(vals).max()) if len(vals) else None,
                "positive_fraction": float(np.mean(vals > 0)) if len(vals) else None,
            }
        return out


def _fmt(x):
    x = float(x)
    return "" if np.isnan(x) else repr(x)


def _paired_runs(args):
    world, start_ns, end_ns, seed, pov_configs, step_ns, depth = args
    base = run_simulation(world, start_ns, end_ns, seed, (), depth)
    times, base_mid = base.mid_series(step_ns)
    diffs = []
    for cfg in pov_configs:
        res = run_simulation(world, start_ns, end_ns, seed, (cfg,), depth)
        _, mid = res.mid_series(step_ns)
        diffs.append(normalized_difference(mid, base_mid))
    return seed, times, diffs


def impact_experiment(world: WorldSetup, lambdas: Sequence[float], seeds: Sequence[int],
                      pov: PovConfig, start_ns: int, end_ns: int,
                      step_ns: int = NS_PER_SECOND, workers: int = 1,
                      depth: int = DEFAULT_DEPTH) -> ImpactReport:
    """Paired with/without-POV runs per seed; the baseline run is shared by all lambdas."""
    if not lambdas:
        raise ValueError("lambda list is empty")
    if len(seeds) < 2:
        raise ValueError("need at least 2 seeds for quantile bands")
    configs = [replace(pov, lam=float(lam)) for lam in lambdas]
    jobs = [(world, start_ns, end_ns, s, configs, step_ns, depth) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_paired_runs, jobs))
    else:
        results = [_paired_runs(j) for j in jobs]
    results.sort(key=lambda r: list(seeds).index(r[0]))
    times = results[0][1]
    differences = {lam: np.vstack([r[2][k] for r in results]) for k, lam in enumerate(lambdas)}
    return ImpactReport(times, list(lambdas), list(seeds), differences, world.kind)


@dataclass
class ReplayFidelity:
    checked: int
    max_abs_diff: float  # price units
    mismatches: int  # timestamps off by more than ``tolerance``
    divergence: int  # executions whose endogenous fill differed from the record
    unknown_cancels: int
    tolerance: float

    @property
    def ok(self):
        return self.mismatches == 0


def replay_fidelity(data: LobsterData, session_open_ns: int, tolerance: float = 1.0,
                    start_ns: Optional[int] = None, end_ns: Optional[int] = None) -> ReplayFidelity:
    """Replay ``data`` alone and compare mids with the book file.

    Several messages can share a timestamp (one aggressive order sweeping the
    queue), so the comparison uses the book after the last message at each
    timestamp.
    """
    times = np.fromiter((m.time_ns for m in data.messages), dtype=np.int64, count=len(data))
    start = int(times[0]) if start_ns is None else start_ns
    end = int(times[-1]) if end_ns is None else end_ns
    world = WorldSetup("replay", data, session_open_ns)
    res = run_simulation(world, start, end, seed=0)
    last = np.r_[times[1:] != times[:-1], True]
    sel = np.nonzero(last & (times >= start) & (times <= end))[0]
    # the seed snapshot stands in for everything at the start index
    sel = sel[sel >= world_start_index(times, start)]
    hist = np.array([np.nan if data.mid(i) is None else float(data.mid(i)) for i in sel])
    sim = locf(res.exchange.mid_log, times[sel])
    both = ~np.isnan(hist) & ~np.isnan(sim)
    one = np.isnan(hist) != np.isnan(sim)
    diff = np.abs(hist[both] - sim[both])
    rep = res.world.replay
    return ReplayFidelity(
        checked=int(len(sel)),
        max_abs_diff=float(diff.max()) if len(diff) else 0.0,
        mismatches=int(np.sum(diff > tolerance) + np.sum(one)),
        divergence=rep.divergence,
        unknown_cancels=rep.unknown_cancels,
        tolerance=tolerance,
    )


def world_start_index(times, start_ns):
    return int(np.searchsorted(times, start_ns, side="left"))


def historical_series(data: LobsterData):
    """(mid times, mids, trade times, trade volumes) from a LOBSTER day.

    Mids are taken after the last message at each timestamp; traded volume
    counts visible and hidden executions.
    """
    times = np.fromiter((m.time_ns for m in data.messages), dtype=np.int64, count=len(data))
    last = np.nonzero(np.r_[times[1:] != times[:-1], True])[0]
    mids = np.array([np.nan if data.mid(i) is None else float(data.mid(i)) for i in last])
    execs = [(m.time_ns, m.size) for m in data.messages if m.type in (EXECUTE_VISIBLE, EXECUTE_HIDDEN)]
    tt = np.array([e[0] for e in execs], dtype=np.int64)
    tv = np.array([e[1] for e in execs], dtype=np.float64)
    return times[last], mids, tt, tv


def trace_series(directory):
    """The same four arrays read back from a ``simulate`` output directory."""
    d = Path(directory)
    for name in ("mid.csv", "trades.csv"):
        if not (d / name).exists():
            raise FileNotFoundError(f"trace file not found: {d / name}")
    mt, mv = [], []
    with open(d / "mid.csv") as fh:
        for row in csv.DictReader(fh):
            if row["mid_ticks"]:
                mt.append(int(row["time"]))
                mv.append(float(row["mid_ticks"]))
    tt, tv = [], []
    with open(d / "trades.csv") as fh:
        for row in csv.DictReader(fh):
            tt.append(int(row["time"]))
            tv.append(float(row["volume"]))
    return (np.array(mt, dtype=np.int64), np.array(mv), np.array(tt, dtype=np.int64),
            np.array(tv))


def realism_report(name, mid_times, mids, trade_times, trade_volumes,
                   grid_ns: int = MINUTE_NS, max_lag: int = 30) -> StylizedFactsReport:
    series = resample(mid_times, mids, grid_ns)
    volumes = bucket_volumes(trade_times, trade_volumes, series.times) if len(series) > 1 else None
    return stylized_facts(series, volumes, name=name, max_lag=max_lag, grid_ns=grid_ns)

"""Stylized facts of mid-price returns, used as realism metrics.

Event-time mids are put on a regular grid (default one minute) by carrying the
last observation forward, then turned into log returns. Correlations are sample
Pearson over the n - tau overlapping pairs. Anything with zero variance raises
:class:`UndefinedStatistic` rather than reporting 0.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .kernel import NS_PER_SECOND

MINUTE_NS = 60 * NS_PER_SECOND
KURTOSIS_STEPS = (1, 5, 15, 30)
MIN_KURTOSIS_RETURNS = 100
UNDEFINED = "undefined"
SKIPPED = "skipped"


class UndefinedStatistic(ValueError):
    pass


@dataclass
class PriceSeries:
    times: np.ndarray  # ns, strictly increasing
    mids: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.int64)
        self.mids = np.asarray(self.mids, dtype=np.float64)
        if self.times.shape != self.mids.shape:
            raise ValueError("times and mids differ in length")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self):
        return len(self.times)


def resample(times, values, step_ns: int = MINUTE_NS, start_ns=None, end_ns=None) -> PriceSeries:
    """Last observation carried forward onto ``start, start+step, ... <= end``.

    Grid points before the first defined observation are dropped, so the
    result has no gaps.
    """
    times = np.asarray(times, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    ok = ~np.isnan(values)
    times, values = times[ok], values[ok]
    if len(times) == 0:
        return PriceSeries(np.empty(0, np.int64), np.empty(0))
    start = int(times[0]) if start_ns is None else start_ns
    end = int(times[-1]) if end_ns is None else end_ns
    grid = np.arange(start, end + 1, step_ns, dtype=np.int64)
    idx = np.searchsorted(times, grid, side="right") - 1
    keep = idx >= 0
    return PriceSeries(grid[keep], values[idx[keep]])


def log_returns(mids, steps: int = 1) -> np.ndarray:
    """Non-overlapping log returns over ``steps`` grid intervals."""
    m = np.asarray(mids.mids if isinstance(mids, PriceSeries) else mids, dtype=np.float64)
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if np.any(~(m > 0)):
        raise ValueError("log returns need strictly positive prices")
    if len(m) <= steps:
        raise ValueError(f"series of length {len(m)} too short for {steps}-step returns")
    return np.diff(np.log(m[::steps]))


def _pearson(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) < 2:
        raise UndefinedStatistic("fewer than 2 pairs")
    da, db = a - a.mean(), b - b.mean()
    sa, sb = math.sqrt(np.dot(da, da)), math.sqrt(np.dot(db, db))
    for s, x in ((sa, a), (sb, b)):
        # relative threshold so rounding noise in a constant series counts as constant
        if s <= 1e-12 * np.abs(x).max() * math.sqrt(len(x)):
            raise UndefinedStatistic("zero variance")
    return float(np.clip(np.dot(da, db) / (sa * sb), -1.0, 1.0))


def autocorrelation(returns, tau: int = 1) -> float:
    r = np.asarray(returns, dtype=np.float64)
    if tau < 1:
        raise ValueError("lag must be >= 1")
    if len(r) < tau + 2:
        raise UndefinedStatistic(f"need at least {tau + 2} returns for lag {tau}")
    return _pearson(r[:-tau], r[tau:])


def volatility_clustering(returns, tau: int = 1, squared: bool = False) -> float:
    r = np.asarray(returns, dtype=np.float64)
    return autocorrelation(r * r if squared else np.abs(r), tau)


def volume_volatility_correlation(volumes, abs_returns) -> float:
    v = np.asarray(volumes, dtype=np.float64)
    a = np.abs(np.asarray(abs_returns, dtype=np.float64))
    if v.shape != a.shape:
        raise ValueError("volume and return buckets are not aligned")
    return _pearson(v, a)


def excess_kurtosis(returns) -> float:
    r = np.asarray(returns, dtype=np.float64)
    if np.var(r) == 0:
        raise UndefinedStatistic("zero variance")
    return float(stats.kurtosis(r, fisher=True, bias=True))


def aggregation_kurtosis(mids, steps=KURTOSIS_STEPS, min_returns: int = MIN_KURTOSIS_RETURNS) -> dict:
    """Excess kurtosis per aggregation; SKIPPED / UNDEFINED where it can't be computed."""
    out = {}
    m = np.asarray(mids.mids if isinstance(mids, PriceSeries) else mids, dtype=np.float64)
    for k in steps:
        if len(m) // k < min_returns + 1:
            out[k] = SKIPPED
            continue
        try:
            out[k] = excess_kurtosis(log_returns(m, k))
        except UndefinedStatistic:
            out[k] = UNDEFINED
    return out


def bucket_volumes(trade_times, trade_volumes, grid_times) -> np.ndarray:
    """Traded volume in each interval (grid[i], grid[i+1]]."""
    t = np.asarray(trade_times, dtype=np.int64)
    v = np.asarray(trade_volumes, dtype=np.float64)
    g = np.asarray(grid_times, dtype=np.int64)
    cum = np.r_[0.0, np.cumsum(v)]
    pos = np.searchsorted(t, g, side="right")
    return np.diff(cum[pos])


def _curve(fn, r, lags):
    vals = []
    for tau in lags:
        try:
            vals.append(fn(r, tau))
        except UndefinedStatistic:
            vals.append(UNDEFINED)
    return vals


@dataclass
class StylizedFactsReport:
    name: str
    grid_ns: int
    n_prices: int
    n_returns: int
    lags: list
    autocorrelation: list
    volatility_clustering: list
    volume_volatility: object  # float, UNDEFINED or SKIPPED
    kurtosis: dict
    squared: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def band(self):
        """±2/sqrt(n) significance band for the correlation curves."""
        return 2.0 / math.sqrt(self.n_returns) if self.n_returns else float("nan")

    def to_dict(self):
        return {
            "meta": {"trace": self.name, "grid_ns": self.grid_ns, "n_prices": self.n_prices,
                     "n_returns": self.n_returns, "squared_returns": self.squared, **self.meta},
            "autocorrelation": {"lags": self.lags, "values": self.autocorrelation, "band": self.band},
            "volatility_clustering": {"lags": self.lags, "values": self.volatility_clustering,
                                      "band": self.band},
            "volume_volatility": self.volume_volatility,
            "kurtosis": {str(k): v for k, v in self.kurtosis.items()},
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, allow_nan=False)

    def write_csv(self, directory, prefix=""):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        with open(d / f"{prefix}curves.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["lag", "autocorrelation", "volatility_clustering", "band"])
            for lag, a, v in zip(self.lags, self.autocorrelation, self.volatility_clustering):
                w.writerow([lag, a, v, self.band])
        with open(d / f"{prefix}kurtosis.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["minutes", "excess_kurtosis"])
            for k, v in self.kurtosis.items():
                w.writerow([k, v])


def stylized_facts(series: PriceSeries, volumes=None, name: str = "", max_lag: int = 30,
                   grid_ns: int = MINUTE_NS, kurtosis_steps=KURTOSIS_STEPS,
                   squared: bool = False) -> StylizedFactsReport:
    """All four metric blocks for a gridded mid series.

    ``volumes`` holds traded volume per grid interval (len(series) - 1 values);
    without it the volume/volatility block is SKIPPED.
    """
    r = log_returns(series, 1) if len(series) > 1 else np.empty(0)
    lags = list(range(1, max_lag + 1))
    ac = _curve(autocorrelation, r, lags)
    vc = _curve(lambda x, t: volatility_clustering(x, t, squared), r, lags)
    if volumes is None or len(r) < 2:
        vv = SKIPPED
    else:
        try:
            vv = volume_volatility_correlation(volumes, np.abs(r))
        except UndefinedStatistic:
            vv = UNDEFINED
    kurt = aggregation_kurtosis(series, kurtosis_steps)
    return StylizedFactsReport(name, grid_ns, len(series), len(r), lags, ac, vc, vv, kurt, squared)

"""Feature normalization: box-cox followed by min-max scaling to [-1, 1]."""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

logger = logging.getLogger(__name__)

FEATURES = (
    "price", "volume", "direction", "time",
    "best_bid_price", "best_bid_volume", "best_ask_price", "best_ask_volume",
    "mid_price", "time_period",
)
ORDER_FEATURES = FEATURES[:4]
BOXCOX_FEATURES = frozenset({"volume", "time", "best_bid_volume", "best_ask_volume"})

LAMBDA_GRID = np.round(np.arange(-2.0, 2.0 + 1e-9, 0.01), 2)


class ConstantFeatureWarning(UserWarning):
    pass


@dataclass(frozen=True)
class BoxCoxParam:
    lmbda: float
    shift: float = 0.0

    def transform(self, x):
        x = np.asarray(x, dtype=np.float64) + self.shift
        if np.any(x <= 0):
            raise ValueError("box-cox input must be positive after shift")
        if self.lmbda == 0:
            return np.log(x)
        return np.expm1(self.lmbda * np.log(x)) / self.lmbda

    def inverse(self, y):
        y = np.asarray(y, dtype=np.float64)
        if self.lmbda == 0:
            return np.exp(y) - self.shift
        arg = self.lmbda * y
        # Keep the inverse defined at the edge of its domain.
        arg = np.maximum(arg, -1 + 1e-15)
        return np.exp(np.log1p(arg) / self.lmbda) - self.shift

    def to_dict(self):
        return {"lambda": self.lmbda, "shift": self.shift}


def boxcox(x, p: BoxCoxParam):
    return p.transform(x)


def inverse_boxcox(y, p: BoxCoxParam):
    return p.inverse(y)


def boxcox_loglik(x, lmbda: float) -> float:
    """Profile log-likelihood of a Gaussian fit to the transformed sample."""
    x = np.asarray(x, dtype=np.float64)
    logx = np.log(x)
    if lmbda == 0:
        y = logx
    else:
        y = np.expm1(lmbda * logx) / lmbda
    var = y.var()
    if var <= 0:
        return -np.inf
    return -0.5 * len(x) * np.log(var) + (lmbda - 1) * logx.sum()


def fit_boxcox(x) -> BoxCoxParam:
    """Maximum-likelihood lambda on the grid [-2, 2] step 0.01."""
    x = np.asarray(x, dtype=np.float64)
    lo = x.min()
    shift = float(1.0 - lo) if lo <= 0 else 0.0
    xs = x + shift
    scores = [boxcox_loglik(xs, lam) for lam in LAMBDA_GRID]
    best = float(LAMBDA_GRID[int(np.argmax(scores))])
    return BoxCoxParam(best, shift)


@dataclass(frozen=True)
class MinMaxScaler:
    lo: float
    hi: float

    @property
    def degenerate(self):
        return not self.hi > self.lo

    def transform(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.degenerate:
            return np.zeros_like(x)
        return 2.0 * (x - self.lo) / (self.hi - self.lo) - 1.0

    def inverse(self, y):
        y = np.asarray(y, dtype=np.float64)
        if self.degenerate:
            return np.full_like(y, self.lo)
        return (y + 1.0) * 0.5 * (self.hi - self.lo) + self.lo

    @classmethod
    def fit(cls, x, name="feature"):
        x = np.asarray(x, dtype=np.float64)
        lo, hi = float(x.min()), float(x.max())
        if not hi > lo:
            warnings.warn(f"{name} is constant ({lo}); scaled output fixed at 0",
                          ConstantFeatureWarning, stacklevel=2)
        return cls(lo, hi)


@dataclass(frozen=True)
class FeatureScaler:
    minmax: MinMaxScaler
    boxcox: Optional[BoxCoxParam] = None

    def transform(self, x, clip=False):
        if self.boxcox is not None:
            if clip:
                # below the training minimum box-cox may be undefined; the
                # clipped result is -1 either way since the transform is monotone
                x = np.maximum(x, self.boxcox.inverse(self.minmax.lo))
            x = self.boxcox.transform(x)
        return self.minmax.transform(x)

    def inverse(self, y):
        x = self.minmax.inverse(y)
        if self.boxcox is not None:
            x = self.boxcox.inverse(x)
        return x


class Scalers:
    """Per-feature scalers in ``FEATURES`` order."""

    def __init__(self, scalers: dict[str, FeatureScaler]):
        missing = set(FEATURES) - set(scalers)
        if missing:
            raise ValueError(f"missing scalers for {sorted(missing)}")
        self.scalers = {name: scalers[name] for name in FEATURES}

    def __getitem__(self, name) -> FeatureScaler:
        return self.scalers[name]

    def __eq__(self, other):
        return isinstance(other, Scalers) and self.scalers == other.scalers

    def transform(self, rows, clip=False):
        """Normalize an (n, 10) raw feature matrix."""
        rows = np.asarray(rows, dtype=np.float64)
        out = np.empty_like(rows)
        for j, name in enumerate(FEATURES):
            out[:, j] = self.scalers[name].transform(rows[:, j], clip)
        if clip:
            outside = np.abs(out) > 1.0
            if outside.any():
                logger.debug("clipping %d out-of-range feature values", int(outside.sum()))
                np.clip(out, -1.0, 1.0, out=out)
        return out

    def to_dict(self):
        return {
            name: {
                "boxcox": None if s.boxcox is None else s.boxcox.to_dict(),
                "minmax": {"lo": s.minmax.lo, "hi": s.minmax.hi},
            }
            for name, s in self.scalers.items()
        }

    @classmethod
    def from_dict(cls, d):
        scalers = {}
        for name, spec in d.items():
            bc = spec.get("boxcox")
            scalers[name] = FeatureScaler(
                MinMaxScaler(float(spec["minmax"]["lo"]), float(spec["minmax"]["hi"])),
                None if bc is None else BoxCoxParam(float(bc["lambda"]), float(bc["shift"])),
            )
        return cls(scalers)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def fit_scalers(rows) -> Scalers:
    """Fit box-cox (volume/time/best volumes only) then min-max on every feature.

    ``rows`` is an (n, 10) matrix of raw features in ``FEATURES`` order.
    """
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[1] != len(FEATURES) or len(rows) == 0:
        raise ValueError(f"expected a non-empty (n, {len(FEATURES)}) matrix")
    scalers = {}
    for j, name in enumerate(FEATURES):
        col = rows[:, j]
        if name == "direction":
            scalers[name] = FeatureScaler(MinMaxScaler(-1.0, 1.0))
            continue
        bc = None
        if name in BOXCOX_FEATURES:
            bc = fit_boxcox(col)
            col = bc.transform(col)
        scalers[name] = FeatureScaler(MinMaxScaler.fit(col, name), bc)
    return Scalers(scalers)

"""JSON run configuration, validated before anything runs."""

from __future__ import annotations

import json
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .agents import PovConfig
from .kernel import NS_PER_SECOND, clock
from .lob import BUY, SELL
from .model import GP_MODES, TrainConfig


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


def _check_clock(v):
    if v is not None:
        clock(v)
    return v


class SessionConfig(_Strict):
    open: str = "09:30:00"
    close: str = "16:00:00"
    start: Optional[str] = None  # simulation start, defaults to open
    end: Optional[str] = None  # simulation end, defaults to close

    _clocks = field_validator("open", "close", "start", "end")(_check_clock)

    @model_validator(mode="after")
    def _order(self):
        if clock(self.start_time) >= clock(self.end_time):
            raise ValueError("simulation start must precede its end")
        return self

    @property
    def start_time(self):
        return self.start or self.open

    @property
    def end_time(self):
        return self.end or self.close


class WorldConfig(_Strict):
    kind: Literal["cgan", "replay"] = "cgan"
    checkpoint: Optional[Path] = None
    warmup_minutes: float = Field(30.0, ge=0)
    ttl_seconds: Optional[float] = Field(None, gt=0)  # None: lifetime estimated at training


class PovAgentConfig(_Strict):
    type: Literal["pov"]
    lam: float = Field(gt=0, le=1)
    period_seconds: float = Field(60.0, gt=0)
    direction: Literal["buy", "sell"] = "buy"
    target: int = Field(10**9, ge=1)
    start: str = "10:30:00"
    end: str = "11:00:00"

    _clocks = field_validator("start", "end")(_check_clock)

    def to_pov(self, lam: Optional[float] = None) -> PovConfig:
        return PovConfig(
            lam=self.lam if lam is None else lam,
            period_ns=int(round(self.period_seconds * NS_PER_SECOND)),
            direction=BUY if self.direction == "buy" else SELL,
            target=self.target,
            start_ns=clock(self.start),
            end_ns=clock(self.end),
        )


class TrainSection(_Strict):
    epochs: int = Field(50, ge=1)
    batch_size: int = Field(64, ge=2)
    critic_steps: int = Field(5, ge=1)
    gp_weight: float = 10.0
    gp_mode: Literal[GP_MODES] = "generated-point"
    lr: float = 1e-4
    betas: tuple[float, float] = (0.5, 0.9)
    ema_decay: float = Field(0.999, ge=0, lt=1)
    seed: int = 0
    history: int = Field(50, ge=1)

    def to_train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                           critic_steps=self.critic_steps, gp_weight=self.gp_weight,
                           gp_mode=self.gp_mode, lr=self.lr, betas=tuple(self.betas),
                           ema_decay=self.ema_decay, seed=self.seed)


class ImpactSection(_Strict):
    lambdas: List[float] = [0.01, 0.1, 0.25]
    pov: PovAgentConfig = PovAgentConfig(type="pov", lam=0.25)
    grid_seconds: float = Field(1.0, gt=0)
    report_start: str = "10:00:00"
    report_end: str = "12:00:00"

    _clocks = field_validator("report_start", "report_end")(_check_clock)

    @field_validator("lambdas")
    @classmethod
    def _lambdas(cls, v):
        if not v:
            raise ValueError("lambda list is empty")
        for lam in v:
            if not 0 < lam <= 1:
                raise ValueError(f"lambda {lam} outside (0, 1]")
        return v


class SimConfig(_Strict):
    symbol: str = "SYN"
    messages: Path
    book: Path
    session: SessionConfig = SessionConfig()
    world: WorldConfig = WorldConfig()
    agents: List[PovAgentConfig] = []
    seeds: List[int] = Field(default_factory=lambda: list(range(50)))
    output: Path = Path("out")
    train: TrainSection = TrainSection()
    impact: ImpactSection = ImpactSection()
    depth: int = Field(20, ge=1)
    workers: int = Field(1, ge=1)

    @field_validator("messages", "book")
    @classmethod
    def _exists(cls, v: Path):
        if not v.exists():
            raise ValueError(f"file not found: {v}")
        return v

    @field_validator("seeds")
    @classmethod
    def _distinct(cls, v):
        if len(set(v)) != len(v):
            raise ValueError("seeds must be distinct")
        if not v:
            raise ValueError("at least one seed is required")
        return v

    @property
    def checkpoint(self) -> Path:
        return self.world.checkpoint or self.output / "model" / "model.pt"

    def echo(self) -> str:
        return self.model_dump_json(indent=2)


_PATH_KEYS = ("messages", "book", "output")


def load_config(path) -> SimConfig:
    """Read and validate a config; relative paths resolve against its directory."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config not found: {path}")
    raw = json.loads(path.read_text())
    base = path.resolve().parent
    raw.setdefault("output", "out")
    for key in _PATH_KEYS:
        if isinstance(raw.get(key), str) and not Path(raw[key]).is_absolute():
            raw[key] = str(base / raw[key])
    world = raw.get("world")
    if isinstance(world, dict) and isinstance(world.get("checkpoint"), str):
        if not Path(world["checkpoint"]).is_absolute():
            world["checkpoint"] = str(base / world["checkpoint"])
    return SimConfig.model_validate(raw)

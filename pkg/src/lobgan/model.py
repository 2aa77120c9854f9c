"""Conditional WGAN-GP over next-order tuples.

Both players see the conditioning window through their own LSTM encoder. The
generator concatenates the encoding with noise, runs it through 1-D
convolutions and a dense layer with ``tanh`` output (price, volume,
direction, time in normalized units). The critic scores an order next to the
encoding with a small MLP and no output activation.
"""

from __future__ import annotations

import copy
import logging
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from scipy.stats import ks_2samp
from torch import nn

from .features import HISTORY, N_FEATURES
from .scaling import Scalers

logger = logging.getLogger(__name__)

NOISE_DIM = 50
ORDER_DIM = 4
CHECKPOINT_VERSION = 1
GP_MODES = ("generated-point", "interpolate", "weight-clip")
FIELDS = ("price", "volume", "direction", "time")


class TrainingDiverged(RuntimeError):
    def __init__(self, msg, last_good=None):
        super().__init__(msg)
        self.last_good = last_good


@dataclass
class ModelConfig:
    history: int = HISTORY
    noise_dim: int = NOISE_DIM
    hidden: int = 32
    conv_layers: int = 2
    conv_channels: int = 16
    kernel_size: int = 3
    critic_width: int = 64


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    critic_steps: int = 5
    gp_weight: float = 10.0
    gp_mode: str = "generated-point"
    lr: float = 1e-4
    betas: tuple = (0.5, 0.9)
    clip_value: float = 0.01
    seed: int = 0
    eval_samples: int = 2000
    ema_decay: Optional[float] = 0.999
    threads: Optional[int] = 1

    def __post_init__(self):
        if self.gp_mode not in GP_MODES:
            raise ValueError(f"gp_mode must be one of {GP_MODES}, got {self.gp_mode!r}")
        if self.critic_steps < 1:
            raise ValueError("critic_steps must be >= 1")
        self.betas = tuple(self.betas)


class HistoryEncoder(nn.Module):
    """LSTM over the window, oldest step first; returns the final hidden state."""

    def __init__(self, history: int = HISTORY, hidden: int = 32):
        super().__init__()
        self.history = history
        self.hidden = hidden
        self.lstm = nn.LSTM(N_FEATURES, hidden, batch_first=True)

    def forward(self, y):
        if y.shape[-1] != self.history * N_FEATURES:
            raise ValueError(f"window has {y.shape[-1]} values, expected {self.history * N_FEATURES}")
        steps = y.reshape(-1, self.history, N_FEATURES).flip(1)
        _, (h, _) = self.lstm(steps)
        return h[-1]


class Generator(nn.Module):
    def __init__(self, cfg: ModelConfig = ModelConfig()):
        super().__init__()
        self.cfg = cfg
        self.encoder = HistoryEncoder(cfg.history, cfg.hidden)
        layers = []
        ch = 1
        for _ in range(cfg.conv_layers):
            layers += [nn.Conv1d(ch, cfg.conv_channels, cfg.kernel_size, padding=cfg.kernel_size // 2),
                       nn.LeakyReLU(0.2)]
            ch = cfg.conv_channels
        self.conv = nn.Sequential(*layers)
        self.out = nn.Linear(ch * (cfg.hidden + cfg.noise_dim), ORDER_DIM)

    def head(self, h, z):
        u = torch.cat([h, z], dim=1).unsqueeze(1)
        return torch.tanh(self.out(self.conv(u).flatten(1)))

    def forward(self, z, y):
        return self.head(self.encoder(y), z)


class Critic(nn.Module):
    def __init__(self, cfg: ModelConfig = ModelConfig()):
        super().__init__()
        self.cfg = cfg
        self.encoder = HistoryEncoder(cfg.history, cfg.hidden)
        w = cfg.critic_width
        self.mlp = nn.Sequential(
            nn.Linear(ORDER_DIM + cfg.hidden, w), nn.LeakyReLU(0.2),
            nn.Linear(w, w), nn.LeakyReLU(0.2),
            nn.Linear(w, 1),
        )

    def score(self, x, h):
        return self.mlp(torch.cat([x, h], dim=1)).squeeze(1)

    def forward(self, x, y):
        return self.score(x, self.encoder(y))


class LinearCritic(nn.Module):
    """D(x|y) = w.x + b, ignoring the window."""

    def __init__(self, w, b=0.0):
        super().__init__()
        self.w = nn.Parameter(torch.as_tensor(w, dtype=torch.float64))
        self.b = nn.Parameter(torch.as_tensor(float(b), dtype=torch.float64))

    def forward(self, x, y=None):
        return x @ self.w + self.b


def input_gradient(critic, x, y, create_graph=False):
    """Gradient of the critic score with respect to the order input, per sample."""
    x = x.detach().requires_grad_(True)
    score = critic(x, y)
    (grad,) = torch.autograd.grad(score.sum(), x, create_graph=create_graph)
    return grad


def gradient_penalty(critic, x_eval, y, weight: float = 10.0):
    """weight * mean((||grad_x D(x|y)||_2 - 1)^2) at the given evaluation points."""
    grad = input_gradient(critic, x_eval, y, create_graph=True)
    return weight * ((grad.norm(2, dim=1) - 1.0) ** 2).mean()


def ks_distances(generated, real):
    """Per-field KS statistic; direction compares signs."""
    out = {}
    for j, name in enumerate(FIELDS):
        g, r = generated[:, j], real[:, j]
        if name == "direction":
            g, r = np.where(g >= 0, 1.0, -1.0), np.where(r >= 0, 1.0, -1.0)
        # only the statistic is used; asymp skips the exact p-value, which fails on ties
        out[name] = float(ks_2samp(g, r, method="asymp").statistic)
    return out


class CGAN:
    def __init__(self, model_cfg: ModelConfig = None, train_cfg: TrainConfig = None):
        self.model_cfg = model_cfg or ModelConfig()
        self.train_cfg = train_cfg or TrainConfig()
        tc = self.train_cfg
        if tc.threads:
            torch.set_num_threads(tc.threads)
        self.torch_gen = torch.Generator().manual_seed(tc.seed)
        torch.manual_seed(tc.seed)
        self.generator = Generator(self.model_cfg)
        self.critic = Critic(self.model_cfg)
        # Exponential moving average of generator weights; used for sampling.
        self.ema = copy.deepcopy(self.generator).requires_grad_(False)
        self.opt_g = torch.optim.Adam(self.generator.parameters(), lr=tc.lr, betas=tc.betas)
        self.opt_d = torch.optim.Adam(self.critic.parameters(), lr=tc.lr, betas=tc.betas)
        self.history: list[dict] = []

    def noise(self, n):
        return torch.randn(n, self.model_cfg.noise_dim, generator=self.torch_gen)

    def _penalty_points(self, x_real, x_fake):
        mode = self.train_cfg.gp_mode
        if mode == "generated-point":
            return x_fake
        eps = torch.rand(len(x_real), 1, generator=self.torch_gen)
        return eps * x_real + (1 - eps) * x_fake

    def train_step(self, x_real, y):
        """Critic updates then one generator update on one batch; returns (d_loss, g_loss).

        d_loss is what the critic minimizes: E[D(fake)] - E[D(real)] + penalty.
        """
        tc = self.train_cfg
        if len(x_real) < 2:
            raise ValueError("batch size must be >= 2")
        x_real = torch.as_tensor(x_real)
        y = torch.as_tensor(y)
        n = len(x_real)
        with torch.no_grad():
            h_gen = self.generator.encoder(y)
        d_loss = torch.tensor(0.0)
        for _ in range(tc.critic_steps):
            with torch.no_grad():
                x_fake = self.generator.head(h_gen, self.noise(n))
            h = self.critic.encoder(y)
            wdist = self.critic.score(x_fake, h).mean() - self.critic.score(x_real, h).mean()
            d_loss = wdist
            if tc.gp_mode != "weight-clip":
                pts = self._penalty_points(x_real, x_fake).detach().requires_grad_(True)
                (grad,) = torch.autograd.grad(self.critic.score(pts, h).sum(), pts, create_graph=True)
                d_loss = wdist + tc.gp_weight * ((grad.norm(2, dim=1) - 1.0) ** 2).mean()
            self.opt_d.zero_grad()
            d_loss.backward()
            self.opt_d.step()
            if tc.gp_mode == "weight-clip":
                with torch.no_grad():
                    for p in self.critic.parameters():
                        p.clamp_(-tc.clip_value, tc.clip_value)

        x_fake = self.generator(self.noise(n), y)
        g_loss = -self.critic(x_fake, y).mean()
        self.opt_g.zero_grad()
        g_loss.backward()
        self.opt_g.step()
        self._update_ema()
        d, g = float(d_loss.detach()), float(g_loss.detach())
        if not (math.isfinite(d) and math.isfinite(g)):
            raise TrainingDiverged(f"non-finite loss (d={d}, g={g})")
        return d, g

    @torch.no_grad()
    def _update_ema(self):
        decay = self.train_cfg.ema_decay
        if not decay:
            self.ema.load_state_dict(self.generator.state_dict())
            return
        for pe, p in zip(self.ema.parameters(), self.generator.parameters()):
            pe.mul_(decay).add_(p, alpha=1 - decay)

    @property
    def sampler(self) -> Generator:
        return self.ema

    @torch.no_grad()
    def generate(self, y, seed=None):
        y = torch.as_tensor(y)
        gen = torch.Generator().manual_seed(seed) if seed is not None else self.torch_gen
        z = torch.randn(len(y), self.model_cfg.noise_dim, generator=gen)
        return self.sampler(z, y).numpy()

    def evaluate(self, x_eval, y_eval, seed=12345):
        return ks_distances(self.generate(y_eval, seed=seed), np.asarray(x_eval))

    def train(self, targets, windows, checkpoint_dir=None, scalers=None, extra=None, progress=None):
        """Epoch loop over shuffled (target, window) pairs.

        Records per-epoch mean losses and KS distances on a fixed evaluation
        subset; entry 0 is the untrained model. Writes ``last.pt`` after every
        epoch when ``checkpoint_dir`` is given.
        """
        tc = self.train_cfg
        targets = np.asarray(targets, dtype=np.float32)
        windows = np.asarray(windows, dtype=np.float32)
        if len(targets) == 0:
            raise ValueError("empty dataset")
        rng = np.random.default_rng(tc.seed)
        n_eval = min(tc.eval_samples, len(targets))
        eval_idx = np.sort(rng.choice(len(targets), n_eval, replace=False))
        x_eval, y_eval = targets[eval_idx], windows[eval_idx]

        def record(epoch, d, g, seconds):
            ks = self.evaluate(x_eval, y_eval)
            gen_dirs = self.generate(y_eval, seed=12345)[:, 2]
            row = {"epoch": epoch, "d_loss": d, "g_loss": g,
                   **{f"ks_{k}": v for k, v in ks.items()},
                   "buy_frac_generated": float((gen_dirs >= 0).mean()),
                   "buy_frac_real": float((x_eval[:, 2] >= 0).mean()),
                   "seconds": seconds}
            self.history.append(row)
            if progress:
                progress(row)
            return row

        if not self.history:
            record(0, None, None, 0.0)
        t0 = time.perf_counter()
        x_all, y_all = torch.from_numpy(targets), torch.from_numpy(windows)
        last_good = None
        for epoch in range(len(self.history), tc.epochs + 1):
            perm = rng.permutation(len(targets))
            d_sum = g_sum = 0.0
            steps = 0
            for start in range(0, len(perm) - tc.batch_size + 1, tc.batch_size):
                idx = torch.from_numpy(perm[start:start + tc.batch_size])
                try:
                    d, g = self.train_step(x_all[idx], y_all[idx])
                except TrainingDiverged as exc:
                    exc.last_good = last_good
                    raise
                d_sum += d
                g_sum += g
                steps += 1
            record(epoch, d_sum / max(steps, 1), g_sum / max(steps, 1), time.perf_counter() - t0)
            if checkpoint_dir is not None:
                last_good = Path(checkpoint_dir) / "last.pt"
                self.save(last_good, scalers=scalers, extra=extra)
        return self.history

    def state(self):
        return {
            "version": CHECKPOINT_VERSION,
            "model_config": asdict(self.model_cfg),
            "train_config": asdict(self.train_cfg),
            "generator": copy.deepcopy(self.generator.state_dict()),
            "ema": copy.deepcopy(self.ema.state_dict()),
            "critic": copy.deepcopy(self.critic.state_dict()),
            "history": list(self.history),
        }

    def save(self, path, scalers: Scalers = None, extra=None, scaler_file=None):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        blob = self.state()
        blob["scalers"] = None if scalers is None else scalers.to_dict()
        blob["scaler_file"] = scaler_file
        blob["extra"] = extra or {}
        torch.save(blob, path)

    @classmethod
    def load(cls, path):
        blob = torch.load(path, map_location="cpu", weights_only=False)
        if blob.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {blob.get('version')}")
        model_cfg = ModelConfig(**blob["model_config"])
        train_cfg = TrainConfig(**blob["train_config"])
        obj = cls(model_cfg, train_cfg)
        obj.generator.load_state_dict(blob["generator"])
        obj.critic.load_state_dict(blob["critic"])
        obj.ema.load_state_dict(blob["ema"])
        obj.history = list(blob["history"])
        scalers = Scalers.from_dict(blob["scalers"]) if blob.get("scalers") else None
        return obj, scalers, blob.get("extra", {})


@dataclass(frozen=True)
class SampledOrder:
    price: int
    volume: int
    direction: int
    interarrival_ns: int


def denormalize(x, scalers: Scalers, price_grid: int = 1) -> SampledOrder:
    """Map a generator output back to a valid order."""
    price = float(scalers["price"].inverse(np.float64(x[0])))
    price = max(int(round(price / price_grid)) * price_grid, price_grid)
    vol = float(scalers["volume"].inverse(np.float64(x[1])))
    vol = max(int(math.floor(vol + 0.5)), 1) if math.isfinite(vol) else 1
    direction = 1 if x[2] >= 0 else -1
    dt = float(scalers["time"].inverse(np.float64(x[3])))
    dt_ns = max(int(round(dt * 1e9)), 1) if math.isfinite(dt) else 1
    return SampledOrder(price, vol, direction, dt_ns)


@torch.no_grad()
def sample_order(generator: Generator, y, rng: np.random.Generator, scalers: Scalers,
                 price_grid: int = 1) -> SampledOrder:
    """Draw noise from ``rng``, run the generator and denormalize."""
    z = torch.from_numpy(rng.standard_normal(generator.cfg.noise_dim).astype(np.float32)).unsqueeze(0)
    yt = torch.as_tensor(np.asarray(y, dtype=np.float32)).unsqueeze(0)
    x = generator(z, yt)[0].numpy().astype(np.float64)
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"generator produced non-finite output {x}")
    return denormalize(x, scalers, price_grid)

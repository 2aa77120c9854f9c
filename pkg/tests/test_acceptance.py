"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The trained model of criterion 5 is shared by criteria 6 and 7. It is cached in
the pytest cache under a hash of the sources and settings that determine it;
``pytest --cache-clear`` forces a fresh training run.
"""

import hashlib
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
import torch
from scipy.stats import binomtest

import lobgan
from lobgan.agents import PovConfig
from lobgan.cli import main, price_grid
from lobgan.experiments import WorldSetup, impact_experiment, replay_fidelity
from lobgan.features import build_training_pairs, extract_orders, mean_order_lifetime
from lobgan.kernel import NS_PER_SECOND, clock
from lobgan.lob import BUY
from lobgan.lobster import parse_lobster, write_lobster
from lobgan.model import (
    CGAN, Critic, LinearCritic, ModelConfig, TrainConfig, gradient_penalty, input_gradient,
)
from lobgan.scaling import FEATURES, fit_scalers
from lobgan.stylized import aggregation_kurtosis, autocorrelation, log_returns, volatility_clustering
from lobgan.synth import generate_day
from test_lob import random_ops, replay
from test_model import SMALL, central_difference, windows

OPEN = clock("09:30:00")
MIN = 60 * NS_PER_SECOND

# criterion 5 run: synthetic oracle day, 50 epochs, batch 64
ORACLE_ORDERS, ORACLE_SEED = 20_000, 1
TRAIN = TrainConfig(epochs=50, batch_size=64, gp_mode="interpolate", seed=0)

# criteria 6 and 7: lambda-POV buying 10:30-11:00 inside a 10:00-11:30 run
POV = PovConfig(0.25, MIN, BUY, start_ns=clock("10:30:00"), end_ns=clock("11:00:00"))
SIM_START, SIM_END, WARMUP = clock("10:00:00"), clock("11:30:00"), 20 * MIN
SEEDS = list(range(20))


def test_criterion_1_matching_oracle(verdict):
    ops = random_ops(2024, 10_000)
    t0 = time.perf_counter()
    book, ref = replay(ops)
    elapsed = time.perf_counter() - t0
    trades = [(t.buy_order_id, t.sell_order_id, t.price, t.volume, t.timestamp)
              for t in book.trade_log]
    snap = book.snapshot(20)
    same = trades == ref.trades and (snap.bids, snap.asks) == ref.snapshot(20)
    ok = verdict(1, "matching-engine oracle equivalence", same and elapsed < 5,
                 f"{len(ops)} ops, {len(trades)} trades, identical={same}, {elapsed:.2f}s (< 5s)")
    assert ok


def test_criterion_2_replay_fidelity(verdict, tmp_path):
    day = generate_day(6000, seed=2)
    write_lobster(day.data, tmp_path / "SYN_message_20.csv", tmp_path / "SYN_orderbook_20.csv")
    data = parse_lobster(tmp_path / "SYN_message_20.csv", tmp_path / "SYN_orderbook_20.csv")
    assert not data.errors
    tick = price_grid([m.price for m in data.messages])
    rep = replay_fidelity(data, OPEN, tolerance=tick)
    ok = verdict(2, "replay fidelity", rep.ok and len(data) >= 10_000,
                 f"{len(data)} messages, {rep.checked} timestamps checked, max |mid diff| "
                 f"{rep.max_abs_diff:g} (tick {tick}), mismatches {rep.mismatches}, "
                 f"execution divergence {rep.divergence}, unknown cancels {rep.unknown_cancels}")
    assert ok


def test_criterion_3_simulate_is_deterministic(verdict, tmp_path):
    assert main(["synth", "--out", str(tmp_path), "--orders", "3000", "--seed", "5"]) == 0
    cfg = json.loads((tmp_path / "config.json").read_text())
    day = parse_lobster(tmp_path / cfg["messages"], tmp_path / cfg["book"])
    rows = extract_orders(day, OPEN).rows
    model = CGAN(ModelConfig(history=10), TrainConfig(seed=3))
    model.save(tmp_path / "model.pt", scalers=fit_scalers(rows),
               extra={"price_grid": price_grid(rows[:, 0]), "history": 10})
    cfg["world"]["checkpoint"] = "model.pt"
    cfg["seeds"] = [7]
    (tmp_path / "config.json").write_text(json.dumps(cfg))
    same = {}
    for mode in ("cgan", "replay"):
        logs = []
        for run in ("a", "b"):
            out = tmp_path / f"{mode}_{run}"
            assert main(["simulate", "--config", str(tmp_path / "config.json"),
                         "--mode", mode, "--out", str(out)]) == 0
            logs.append((out / "seed_7" / "events.csv").read_bytes())
        same[mode] = logs[0] == logs[1] and len(logs[0]) > 1000
    ok = verdict(3, "simulate determinism", all(same.values()),
                 ", ".join(f"{m} world byte-identical={v}" for m, v in same.items()))
    assert ok


def test_criterion_4_gradient_penalty(verdict):
    x = torch.randn(32, 4, dtype=torch.float64)
    p0 = gradient_penalty(LinearCritic([0.6, 0.8, 0.0, 0.0]), x, None, 10.0).item()
    p1 = gradient_penalty(LinearCritic([3.0, 4.0, 0.0, 0.0]), x, None, 10.0).item()
    worst = 0.0
    for seed in range(100):
        torch.manual_seed(seed)
        critic = Critic(SMALL).double()
        xs = torch.randn(3, 4, dtype=torch.float64)
        ys = windows(3, seed=seed).double()
        g = input_gradient(critic, xs, ys)
        fd = central_difference(critic, xs, ys)
        worst = max(worst, float((g - fd).norm() / fd.norm().clamp_min(1e-12)))
    ok = verdict(4, "gradient-penalty correctness",
                 abs(p0) < 1e-6 and abs(p1 - 160) < 1e-6 and worst < 1e-4,
                 f"penalty(0.6,0.8)={p0:.2e}, penalty(3,4)={p1:.9f}, "
                 f"worst finite-difference rel. error over 100 critics {worst:.2e}")
    assert ok


def _cache_key():
    src = Path(lobgan.__file__).parent
    h = hashlib.sha256()
    for name in ("model.py", "features.py", "scaling.py", "synth.py", "lob.py"):
        h.update((src / name).read_bytes())
    h.update(repr((ORACLE_ORDERS, ORACLE_SEED, TRAIN, torch.__version__)).encode())
    return h.hexdigest()[:16]


@pytest.fixture(scope="module")
def oracle_day():
    return generate_day(ORACLE_ORDERS, seed=ORACLE_SEED)


@pytest.fixture(scope="module")
def trained(request, oracle_day):
    """(model, scalers, extra) for the criterion 5 run; trains once per source hash."""
    path = Path(request.config.cache.mkdir("lobgan-acceptance")) / f"cgan_{_cache_key()}.pt"
    if path.exists():
        return CGAN.load(path)
    history = extract_orders(oracle_day.data, OPEN)
    scalers = fit_scalers(history.rows)
    targets, wins = build_training_pairs(history.rows, scalers)
    model = CGAN(ModelConfig(), TRAIN)
    model.train(targets, wins)
    extra = {"price_grid": price_grid(history.rows[:, 0]),
             "ttl_seconds": mean_order_lifetime(oracle_day.data)}
    model.save(path, scalers=scalers, extra=extra)
    return model, scalers, extra


@pytest.mark.slow
def test_criterion_5_distribution_recovery(verdict, trained):
    model, _, _ = trained
    first, last = model.history[0], model.history[-1]
    fields = ("price", "volume", "direction", "time")
    ks = {f: last[f"ks_{f}"] for f in fields}
    dir_gap = abs(last["buy_frac_generated"] - last["buy_frac_real"])
    minutes = last["seconds"] / 60
    helped = all(first[f"ks_{f}"] > ks[f] for f in fields)
    ok = verdict(5, "distribution recovery",
                 max(ks.values()) < 0.15 and dir_gap <= 0.05 and minutes <= 30 and helped,
                 "KS " + ", ".join(f"{f}={v:.3f}" for f, v in ks.items())
                 + f" (< 0.15); buy fraction {last['buy_frac_generated']:.3f} vs "
                 f"{last['buy_frac_real']:.3f}; epoch-0 KS "
                 + ", ".join(f"{first[f'ks_{f}']:.3f}" for f in fields)
                 + f"; {len(model.history) - 1} epochs in {minutes:.1f} min")
    assert ok


def _impact(world):
    rep = impact_experiment(world, [POV.lam], SEEDS, POV, SIM_START, SIM_END)
    return rep, rep.differences[POV.lam]


@pytest.mark.slow
def test_criterion_6_cgan_reactivity(verdict, trained, oracle_day):
    model, scalers, extra = trained
    world = WorldSetup("cgan", oracle_day.data, OPEN, model.sampler, scalers,
                       price_grid=extra["price_grid"], warmup_ns=WARMUP,
                       ttl_ns=int(extra["ttl_seconds"] * NS_PER_SECOND))
    rep, d = _impact(world)
    active = (rep.times > POV.start_ns) & (rep.times <= POV.end_ns)
    median = np.median(d[:, active], axis=0)
    frac = float(np.mean(median > 0))
    # sign test across the paired seeds on the mean in-window difference
    per_seed = d[:, active].mean(axis=1)
    k = int(np.sum(per_seed > 0))
    n = int(np.sum(per_seed != 0))
    p = binomtest(k, n, 0.5, alternative="greater").pvalue if n else 1.0
    ok = verdict(6, "CGAN reactivity sign test", frac > 0.6 and p < 0.05,
                 f"median d > 0 on {frac:.1%} of {active.sum()} active grid points (> 60%); "
                 f"{k}/{n} seeds positive, one-sided sign test p={p:.2g} (< 0.05); "
                 f"{len(SEEDS)} paired seeds")
    assert ok


@pytest.mark.slow
def test_criterion_7_replay_non_reactivity(verdict, oracle_day):
    rep, d = _impact(WorldSetup("replay", oracle_day.data, OPEN))
    median = np.median(d, axis=0)
    window = (rep.times >= POV.start_ns) & (rep.times <= POV.end_ns)
    after = rep.times > clock("11:05:00")
    peak = float(np.max(np.abs(median[window])))
    late = float(np.max(np.abs(median[after])))
    ok = verdict(7, "replay non-reactivity", peak > 0 and late < 0.25 * peak,
                 f"in-window peak |median d| {peak:.3g}, max after 11:05 {late:.3g} "
                 f"(< 25% of peak)")
    assert ok


def _garch(n, rng, omega=1e-6, alpha=0.1, beta=0.85):
    r = np.empty(n)
    var = omega / (1 - alpha - beta)
    z = rng.standard_normal(n)
    for t in range(n):
        r[t] = math.sqrt(var) * z[t]
        var = omega + alpha * r[t] ** 2 + beta * var
    return r


def test_criterion_8_stylized_fact_oracles(verdict):
    rng = np.random.default_rng(8)
    n = 10_000
    band = 2 / math.sqrt(n)
    inside = sum(abs(autocorrelation(rng.standard_normal(n), 1)) < band for _ in range(100))
    clustering = volatility_clustering(_garch(n, rng), 1)
    r = rng.standard_t(3, 30 * n) * 1e-3
    kurt = aggregation_kurtosis(np.exp(np.cumsum(np.r_[0.0, r])), (1, 30))
    assert len(log_returns(np.exp(np.cumsum(np.r_[0.0, r])), 30)) >= 100
    ok = verdict(8, "stylized-facts oracles",
                 inside >= 95 and clustering > 0.05 and kurt[1] > 2 and kurt[30] < kurt[1],
                 f"Gaussian |C(1)| < 2/sqrt(n) in {inside}/100 trials (>= 95); "
                 f"GARCH(1,1) clustering at lag 1 {clustering:.3f} (> 0.05); "
                 f"t(3) excess kurtosis {kurt[1]:.2f} at 1 step, {kurt[30]:.2f} at 30 steps")
    assert ok


def test_criterion_9_scaler_round_trip(verdict, oracle_day):
    rows = extract_orders(oracle_day.data, OPEN).rows
    scalers = fit_scalers(rows)
    rng = np.random.default_rng(9)
    worst = {}
    for j, name in enumerate(FEATURES):
        col = rows[:, j]
        x = rng.uniform(col.min(), col.max(), 1000)
        back = scalers[name].inverse(scalers[name].transform(x))
        scale = np.maximum(np.abs(x), np.finfo(float).tiny)
        worst[name] = float(np.max(np.abs(back - x) / scale))
    top = max(worst, key=worst.get)
    ok = verdict(9, "scaler round trip", max(worst.values()) <= 1e-9,
                 f"{len(FEATURES)} features x 1000 in-domain values, worst relative error "
                 f"{worst[top]:.1e} ({top})")
    assert ok

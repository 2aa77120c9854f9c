"""Command-line entry point: synth, train, simulate, impact, realism."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from functools import reduce
from pathlib import Path

from pydantic import ValidationError

from .config import SimConfig, load_config
from .experiments import (
    WorldSetup, historical_series, impact_experiment, realism_report, run_simulation, trace_series,
)
from .agents import DEFAULT_TTL_NS
from .features import build_training_pairs, extract_orders, mean_order_lifetime
from .kernel import NS_PER_SECOND, clock
from .lobster import LobsterFormatError, parse_lobster, write_lobster
from .model import GP_MODES, CGAN, ModelConfig
from .plotting import plot_impact, plot_mid, plot_realism, plot_training
from .scaling import fit_scalers
from .synth import generate_day

logger = logging.getLogger("lobgan")


class CliError(Exception):
    pass


def _load_data(cfg: SimConfig):
    try:
        data = parse_lobster(cfg.messages, cfg.book)
    except (FileNotFoundError, LobsterFormatError) as exc:
        raise CliError(str(exc)) from exc
    if data.errors:
        report = "\n".join(f"  line {ln}: {msg}" for ln, msg in data.errors[:20])
        raise CliError(f"{len(data.errors)} malformed LOBSTER rows:\n{report}")
    if len(data) == 0:
        raise CliError("message file is empty")
    return data


def _write_echo(cfg: SimConfig, directory: Path):
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "config.json").write_text(cfg.echo() + "\n")


def price_grid(prices) -> int:
    """Largest tick that divides every observed price."""
    ints = [int(p) for p in prices if p > 0]
    return max(reduce(math.gcd, ints, 0), 1)


def cmd_train(cfg: SimConfig, out: Path | None = None):
    out = out or cfg.checkpoint.parent
    data = _load_data(cfg)
    open_ns = clock(cfg.session.open)
    history = extract_orders(data, open_ns)
    scalers = fit_scalers(history.rows)
    n = cfg.train.history
    targets, windows = build_training_pairs(history.rows, scalers, n)
    grid = price_grid(history.rows[:, 0])
    logger.info("training on %d pairs, price grid %d", len(targets), grid)
    extra = {"price_grid": grid, "session_open": cfg.session.open, "history": n,
             "ttl_seconds": mean_order_lifetime(data)}
    model = CGAN(ModelConfig(history=n), cfg.train.to_train_config())
    out.mkdir(parents=True, exist_ok=True)
    scalers.save(out / "scalers.json")

    def progress(row):
        logger.info("epoch %d  " + "  ".join(f"{k}=%.3f" for k in row if k.startswith("ks_")),
                    row["epoch"], *[row[k] for k in row if k.startswith("ks_")])

    rows = model.train(targets, windows, checkpoint_dir=out, scalers=scalers, extra=extra,
                       progress=progress)
    model.save(out / "model.pt", scalers=scalers, extra=extra, scaler_file="scalers.json")
    (out / "last.pt").unlink(missing_ok=True)
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    plot_training(rows, out / "training.png")
    _write_echo(cfg, out)
    return out


def _world(cfg: SimConfig, data, mode: str) -> WorldSetup:
    open_ns = clock(cfg.session.open)
    start = clock(cfg.session.start_time)
    last = data.messages[-1].time_ns
    warmup = int(cfg.world.warmup_minutes * 60 * NS_PER_SECOND)
    if mode == "replay":
        if start > last:
            raise CliError("historical data ends before the simulation start")
        return WorldSetup("replay", data, open_ns)
    if start + warmup > last:
        raise CliError("historical data does not cover the warm-up window")
    path = cfg.checkpoint
    if not path.exists():
        raise CliError(f"checkpoint not found: {path} (run `lobgan train` first)")
    model, scalers, extra = CGAN.load(path)
    if scalers is None:
        raise CliError(f"checkpoint {path} carries no scalers")
    ttl_seconds = cfg.world.ttl_seconds or extra.get("ttl_seconds")
    ttl = int(ttl_seconds * NS_PER_SECOND) if ttl_seconds else DEFAULT_TTL_NS
    return WorldSetup("cgan", data, open_ns, model.sampler, scalers,
                      price_grid=int(extra.get("price_grid", 1)), warmup_ns=warmup, ttl_ns=ttl)


def cmd_simulate(cfg: SimConfig, out: Path | None = None, mode: str | None = None):
    mode = mode or cfg.world.kind
    out = out or cfg.output / "simulate"
    data = _load_data(cfg)
    world = _world(cfg, data, mode)
    start, end = clock(cfg.session.start_time), clock(cfg.session.end_time)
    povs = [a.to_pov() for a in cfg.agents]
    dirs = []
    for seed in cfg.seeds:
        res = run_simulation(world, start, end, seed, povs, cfg.depth)
        d = out / f"seed_{seed}"
        res.write(d)
        _write_echo(cfg, d)
        times, mids = res.mid_series()
        plot_mid(times, mids, d / "mid.png", title=f"{mode} world, seed {seed}")
        logger.info("seed %d: %d events, %d trades -> %s", seed, len(res.log),
                    len(res.exchange.trades), d)
        dirs.append(d)
    return dirs


def cmd_impact(cfg: SimConfig, out: Path | None = None, mode: str | None = None):
    mode = mode or cfg.world.kind
    out = out or cfg.output / f"impact_{mode}"
    if len(cfg.seeds) < 2:
        raise CliError("impact needs at least 2 seeds")
    data = _load_data(cfg)
    world = _world(cfg, data, mode)
    start, end = clock(cfg.session.start_time), clock(cfg.session.end_time)
    imp = cfg.impact
    pov = imp.pov.to_pov()
    report = impact_experiment(world, imp.lambdas, cfg.seeds, pov, start, end,
                               step_ns=int(imp.grid_seconds * NS_PER_SECOND),
                               workers=cfg.workers, depth=cfg.depth)
    out.mkdir(parents=True, exist_ok=True)
    r0, r1 = clock(imp.report_start), clock(imp.report_end)
    for lam in imp.lambdas:
        report.write_csv(lam, out / f"lambda_{lam}.csv", r0, r1)
    summary = {"active_window": report.summary((pov.start_ns, pov.end_ns)),
               "report_window": report.summary((r0, r1))}
    (out / "report.json").write_text(json.dumps(summary, indent=2) + "\n")
    plot_impact(report, out / "impact.png", r0, r1, pov_window=(pov.start_ns, pov.end_ns))
    _write_echo(cfg, out)
    return report


def _realism_input(path: Path):
    if path.is_dir():
        return path.name, trace_series(path)
    if not path.exists():
        raise CliError(f"file not found: {path}")
    book = Path(str(path).replace("message", "orderbook"))
    if book == path or not book.exists():
        raise CliError(f"no order book file next to {path}")
    return path.stem, historical_series(parse_lobster(path, book))


def cmd_realism(paths, out: Path, cfg: SimConfig | None = None):
    inputs = []
    if cfg is not None:
        inputs.append(("historical", historical_series(_load_data(cfg))))
    try:
        inputs += [_realism_input(Path(p)) for p in paths]
    except FileNotFoundError as exc:
        raise CliError(str(exc)) from exc
    if len(inputs) < 2:
        raise CliError("realism needs at least 2 traces")
    reports = []
    for k, (name, arrays) in enumerate(inputs):
        name = f"{k}_{name}"
        reports.append(realism_report(name, *arrays))
    out.mkdir(parents=True, exist_ok=True)
    (out / "realism.json").write_text(
        json.dumps([r.to_dict() for r in reports], indent=2, allow_nan=False) + "\n")
    for r in reports:
        r.write_csv(out, prefix=f"{r.name}_")
    plot_realism(reports, out / "realism.png")
    return reports


def cmd_synth(out: Path, orders: int, seed: int, symbol: str = "SYN"):
    day = generate_day(orders, seed)
    out.mkdir(parents=True, exist_ok=True)
    msg = out / f"{symbol}_message_{day.params.depth}.csv"
    book = out / f"{symbol}_orderbook_{day.params.depth}.csv"
    write_lobster(day.data, msg, book)
    open_ns, last = clock(day.params.session_open), day.data.messages[-1].time_ns
    if last >= clock("11:00:00"):
        start, warmup, end = clock("10:00:00"), 20.0, min(last, clock("12:00:00"))
    else:  # short day: scale the windows to the data
        span = last - open_ns
        start, warmup, end = open_ns + span // 4, span / 4 / 60e9, last
    cfg = {
        "symbol": symbol, "messages": msg.name, "book": book.name, "output": "out",
        "session": {"open": day.params.session_open, "start": _hms(start), "end": _hms(end)},
        "world": {"kind": "cgan", "warmup_minutes": round(warmup, 3)},
        "seeds": list(range(20)),
    }
    if last < clock("11:00:00"):
        w0 = start + int(warmup * 60e9)
        third = (end - w0) // 3
        cfg["impact"] = {"pov": {"type": "pov", "lam": 0.25, "start": _hms(w0 + third),
                                 "end": _hms(w0 + 2 * third)},
                         "report_start": _hms(start), "report_end": _hms(end)}
    (out / "config.json").write_text(json.dumps(cfg, indent=2) + "\n")
    return msg, book


def _hms(ns):
    s = ns // NS_PER_SECOND
    return f"{s // 3600:02d}:{s // 60 % 60:02d}:{s % 60:02d}"


def build_parser():
    p = argparse.ArgumentParser(prog="lobgan", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seeds=True, mode=True):
        sp.add_argument("--config", type=Path, required=True)
        sp.add_argument("--out", type=Path)
        if seeds:
            sp.add_argument("--seeds", type=int, help="use seeds 0..N-1")
        if mode:
            sp.add_argument("--mode", choices=("cgan", "replay"))

    t = sub.add_parser("train", help="fit scalers and train the CGAN")
    common(t, seeds=False, mode=False)
    t.add_argument("--gp-mode", choices=GP_MODES)
    t.add_argument("--epochs", type=int)
    common(sub.add_parser("simulate", help="run the simulation once per seed"))
    common(sub.add_parser("impact", help="paired POV market-impact runs"))
    r = sub.add_parser("realism", help="stylized-facts comparison of traces")
    r.add_argument("paths", nargs="*", type=Path,
                   help="simulate output directories or LOBSTER message files")
    r.add_argument("--config", type=Path, help="adds the configured historical day")
    r.add_argument("--out", type=Path, default=Path("realism"))
    s = sub.add_parser("synth", help="write a synthetic LOBSTER day and a starter config")
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--orders", type=int, default=20_000)
    s.add_argument("--seed", type=int, default=1)
    return p


def _config(args) -> SimConfig:
    cfg = load_config(args.config)
    raw = cfg.model_dump()
    if getattr(args, "seeds", None) is not None:
        if args.seeds < 1:
            raise CliError("--seeds must be >= 1")
        raw["seeds"] = list(range(args.seeds))
    if getattr(args, "gp_mode", None):
        raw["train"]["gp_mode"] = args.gp_mode
    if getattr(args, "epochs", None):
        raw["train"]["epochs"] = args.epochs
    return SimConfig.model_validate(raw)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        if args.command == "synth":
            msg, book = cmd_synth(args.out, args.orders, args.seed)
            print(f"wrote {msg}, {book} and {args.out / 'config.json'}")
        elif args.command == "realism":
            cfg = load_config(args.config) if args.config else None
            cmd_realism(args.paths, args.out, cfg)
            print(f"wrote {args.out / 'realism.json'}")
        else:
            cfg = _config(args)
            if args.command == "train":
                print(f"wrote {cmd_train(cfg, args.out)}")
            elif args.command == "simulate":
                for d in cmd_simulate(cfg, args.out, args.mode):
                    print(d)
            elif args.command == "impact":
                cmd_impact(cfg, args.out, args.mode)
                print("impact report written")
    except (CliError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValidationError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

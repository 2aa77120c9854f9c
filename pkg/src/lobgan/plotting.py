"""Figures written next to the CSV outputs. Headless (Agg backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .kernel import format_clock  # noqa: E402
from .stylized import StylizedFactsReport  # noqa: E402


def _hours(times_ns):
    return np.asarray(times_ns, dtype=np.float64) / 3.6e12


def _clock_ticks(ax, times_ns, n=6):
    t = np.asarray(times_ns)
    if len(t) == 0:
        return
    ticks = np.linspace(t[0], t[-1], n).astype(np.int64)
    ax.set_xticks(_hours(ticks))
    ax.set_xticklabels([format_clock(int(x))[:5] for x in ticks])


def plot_training(rows, path):
    epochs = [r["epoch"] for r in rows]
    fig, (a, b) = plt.subplots(1, 2, figsize=(10, 4))
    for name in ("price", "volume", "direction", "time"):
        a.plot(epochs, [r[f"ks_{name}"] for r in rows], label=name)
    a.set_xlabel("epoch")
    a.set_ylabel("KS distance")
    a.set_ylim(0, 1)
    a.legend()
    trained = [r for r in rows if r["epoch"] > 0]
    b.plot([r["epoch"] for r in trained], [r["d_loss"] for r in trained], label="critic")
    b.plot([r["epoch"] for r in trained], [r["g_loss"] for r in trained], label="generator")
    b.set_xlabel("epoch")
    b.set_ylabel("loss")
    b.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_mid(times_ns, mids, path, title=""):
    fig, ax = plt.subplots(figsize=(9, 3.5))
    ax.plot(_hours(times_ns), mids, lw=0.8)
    _clock_ticks(ax, times_ns)
    ax.set_ylabel("mid (price units)")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_impact(report, path, start_ns=None, end_ns=None, pov_window=None):
    """Median with 50% and 90% bands of d(t), one panel per lambda."""
    lams = report.lambdas
    fig, axes = plt.subplots(len(lams), 1, figsize=(9, 2.8 * len(lams)), squeeze=False)
    t = report.times
    sel = np.ones(len(t), dtype=bool)
    if start_ns is not None:
        sel &= t >= start_ns
    if end_ns is not None:
        sel &= t <= end_ns
    x = _hours(t[sel])
    for ax, lam in zip(axes[:, 0], lams):
        b = {k: v[sel] for k, v in report.bands(lam).items()}
        ax.fill_between(x, b["q05"], b["q95"], alpha=0.2, color="C0", label="90%")
        ax.fill_between(x, b["q25"], b["q75"], alpha=0.4, color="C0", label="50%")
        ax.plot(x, b["median"], color="C0", lw=1, label="median")
        ax.axhline(0, color="k", lw=0.5)
        if pov_window:
            for edge in pov_window:
                ax.axvline(_hours([edge])[0], color="r", lw=0.6, ls="--")
        ax.set_title(f"{report.world_kind} world, lambda = {lam}")
        ax.set_ylabel("d(t)")
        _clock_ticks(ax, t[sel])
        ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def _numeric(values):
    return np.array([v if isinstance(v, (int, float)) else np.nan for v in values], dtype=float)


def plot_realism(reports: list[StylizedFactsReport], path):
    """Autocorrelation, volatility clustering, volume/volatility and kurtosis panels."""
    fig, axes = plt.subplots(2, 2, figsize=(10, 7))
    ac, vc, vv, ku = axes.ravel()
    for r in reports:
        ac.plot(r.lags, _numeric(r.autocorrelation), marker=".", label=r.name)
        vc.plot(r.lags, _numeric(r.volatility_clustering), marker=".", label=r.name)
        steps = list(r.kurtosis)
        ku.plot(steps, _numeric([r.kurtosis[k] for k in steps]), marker="o", label=r.name)
    if reports:
        band = reports[0].band
        for ax in (ac, vc):
            ax.axhspan(-band, band, color="grey", alpha=0.2)
    names = [r.name for r in reports]
    vv.bar(range(len(reports)), np.nan_to_num(_numeric([r.volume_volatility for r in reports])))
    vv.set_xticks(range(len(reports)))
    vv.set_xticklabels(names, rotation=20, fontsize=8)
    ac.set_title("return autocorrelation")
    vc.set_title("volatility clustering")
    vv.set_title("volume / volatility correlation")
    ku.set_title("excess kurtosis by aggregation (minutes)")
    ac.set_xlabel("lag (minutes)")
    vc.set_xlabel("lag (minutes)")
    ac.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)

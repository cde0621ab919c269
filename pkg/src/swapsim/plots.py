"""PNG rendering of report series; matplotlib is imported only when called."""
from __future__ import annotations

from pathlib import Path


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def slo_vs_functions(series: dict[str, list[tuple[int, float]]], path: Path) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for policy, pts in sorted(series.items()):
        xs, ys = zip(*sorted(pts))
        ax.plot(xs, ys, marker="o", label=policy)
    ax.set_xlabel("functions")
    ax.set_ylabel("SLO-compliant function ratio")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def latency_quantiles(curves: dict[str, list[tuple[float, float]]], path: Path) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, pts in sorted(curves.items()):
        qs, vs = zip(*sorted(pts))
        ax.plot(vs, qs, marker=".", label=label)
    ax.axvline(1.0, color="grey", linewidth=0.8, linestyle="--")
    ax.set_xlabel("latency / deadline")
    ax.set_ylabel("quantile")
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def load_variance(bars: dict[str, list[float]], path: Path) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    labels = sorted(bars)
    ax.boxplot([bars[k] for k in labels])
    ax.set_xticks(range(1, len(labels) + 1), labels, rotation=30, ha="right", fontsize="small")
    ax.set_ylabel("per-node GPU load variance (normalized to max)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)

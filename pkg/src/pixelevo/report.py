"""Figures rendered next to the CSV outputs."""
from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _columns(path) -> dict[str, list[float]]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return {}
    return {k: [float(r[k]) for r in rows] for k in rows[0]}


def plot_metrics(metrics_csv, out_dir=None) -> list[Path]:
    """Render fitness and growth curves for a training metrics file."""
    out = Path(out_dir) if out_dir else Path(metrics_csv).parent
    out.mkdir(parents=True, exist_ok=True)
    cols = _columns(metrics_csv)
    if not cols:
        return []
    gen = cols["gen"]

    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.fill_between(gen, cols["min"], cols["best"], alpha=0.2, label="min..best")
    ax.plot(gen, cols["best"], label="best")
    ax.plot(gen, cols["mean"], label="mean")
    ax.set_xlabel("generation")
    ax.set_ylabel("fitness")
    ax.legend(frameon=False)
    fig.tight_layout()
    fitness = out / "fitness.png"
    fig.savefig(fitness, dpi=120)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.step(gen, cols["dict_size"], where="post", label="dictionary size")
    ax.set_xlabel("generation")
    ax.set_ylabel("centroids")
    ax2 = ax.twinx()
    ax2.step(gen, cols["params"], where="post", color="C1", label="parameters")
    ax2.set_ylabel("parameters")
    fig.legend(loc="upper left", frameon=False)
    fig.tight_layout()
    growth = out / "growth.png"
    fig.savefig(growth, dpi=120)
    plt.close(fig)
    return [fitness, growth]


def plot_xy(xs, ys, path, xlabel: str, ylabel: str, fit=None, logy: bool = False) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(xs, ys, "o", label="measured")
    if fit is not None:
        ax.plot(xs, [fit[0] * x + fit[1] for x in xs], "-", label="linear fit")
        ax.legend(frameon=False)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)

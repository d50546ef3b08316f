"""Small benchmark suites: XNES on the sphere, DRSC encode time against dictionary size."""
from __future__ import annotations

import csv
import time
from pathlib import Path

import numpy as np

from .compressor import CompressorConfig, Dictionary, drsc_encode
from .optimizer import SearchDistribution, ask, default_hyper, tell


def sphere_evals(dim: int, seed: int, target: float = -1e-6, budget: int = 10**6,
                 pop_scale: float = 1.5, lr_scale: float = 0.5) -> int | None:
    """Evaluations until the best sample of a generation beats ``target`` on -|x|^2 from mu=1."""
    rng = np.random.default_rng(seed)
    dist = SearchDistribution.isotropic(np.ones(dim))
    hyper = default_hyper(dim, pop_scale, lr_scale)
    evals = 0
    while evals < budget:
        batch = ask(dist, hyper, rng)
        fit = -np.einsum("ij,ij->i", batch.genomes, batch.genomes)
        evals += hyper.lam
        if fit.max() > target:
            return evals
        dist = tell(dist, hyper, batch, fit)
    return None


def encode_timings(sizes=(25, 50, 100, 200), image_len: int = 70 * 80, omega: int = 10,
                   repeats: int = 40, seed: int = 0) -> list[float]:
    """Median wall time (s) of one encode for each dictionary size.

    epsilon is 0 and centroids are sparse, so every encode runs omega rounds.
    """
    rng = np.random.default_rng(seed)
    cfg = CompressorConfig(epsilon=0.0, omega=omega)
    images = rng.random((repeats, image_len)).astype(np.float32)
    medians = []
    for n in sizes:
        rows = rng.random((n, image_len)) * (rng.random((n, image_len)) < 0.05)
        d = Dictionary(image_len, rows)
        drsc_encode(images[0], d, cfg)
        times = []
        for x in images:
            t0 = time.perf_counter()
            drsc_encode(x, d, cfg)
            times.append(time.perf_counter() - t0)
        medians.append(float(np.median(times)))
    return medians


def linear_fit(xs, ys) -> tuple[float, float, float]:
    """Least-squares slope, intercept and R^2."""
    xs, ys = np.asarray(xs, float), np.asarray(ys, float)
    slope, intercept = np.polyfit(xs, ys, 1)
    pred = slope * xs + intercept
    ss_res = float(((ys - pred) ** 2).sum())
    ss_tot = float(((ys - ys.mean()) ** 2).sum())
    return float(slope), float(intercept), 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0


def run_suite(suite: str, out_dir=".", plots: bool = True) -> dict:
    from .report import plot_xy

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if suite == "xnes":
        rows = [(d, s, sphere_evals(d, s), default_hyper(d, 1.5, 0.5).lam) for d in (2, 5, 10) for s in range(3)]
        header = ["dim", "seed", "evals", "lambda"]
        result = {"rows": rows}
        if plots:
            med = {d: np.median([r[2] for r in rows if r[0] == d]) for d in (2, 5, 10)}
            plot_xy(list(med), list(med.values()), out / "bench_xnes.png", "dimension",
                    "evaluations to f > -1e-6", logy=True)
    elif suite == "drsc":
        sizes = (25, 50, 100, 200)
        times = encode_timings(sizes)
        slope, intercept, r2 = linear_fit(sizes, times)
        rows = [(n, t) for n, t in zip(sizes, times)]
        header = ["dict_size", "median_seconds"]
        result = {"rows": rows, "slope": slope, "intercept": intercept, "r2": r2}
        if plots:
            plot_xy(sizes, times, out / "bench_drsc.png", "dictionary size", "median encode time (s)",
                    fit=(slope, intercept))
    else:
        raise ValueError(f"unknown bench suite {suite!r}")
    with (out / f"bench_{suite}.csv").open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return result

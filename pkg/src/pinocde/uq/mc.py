"""Monte Carlo propagation, density estimates, damage probabilities and comparisons."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter1d

from ..oracle import sample_seed
from ..system import ParameterSpace, sample_parameters
from .pdem import PDFGrid

log = logging.getLogger(__name__)

__all__ = ["Ensemble", "mc_propagate", "pdf_estimate", "silverman_bandwidth", "DamageField",
           "damage_probability", "exceedance_from_pdf", "compare_pdf", "write_compare_csv",
           "write_damage_csv"]


@dataclass
class Ensemble:
    """Monitored-quantity histories of ``N`` samples, (N, n_t) each."""

    x: np.ndarray
    rate: np.ndarray | None
    P: np.ndarray
    dt: float

    def __len__(self) -> int:
        return len(self.x)

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.x.shape[1]) * self.dt


def mc_propagate(provider: Callable, space: ParameterSpace, n: int, seed: int, chunk: int = 1000,
                 keep_rate: bool = False, excitation: np.ndarray | None = None) -> Ensemble:
    """``n`` independent samples pushed through ``provider`` in chunks.

    Sample ``i`` uses the same seed as pair ``i`` of a dataset built with
    master seed ``seed``, so two ensembles with equal seeds share their
    leading samples. A fixed ``excitation`` replaces the sampled loads.
    """
    if n < 1:
        raise ValueError("ensemble size must be >= 1")
    xs, rates, Ps = [], [], []
    for s in range(0, n, chunk):
        samples = [sample_parameters(space, sample_seed(seed, i)) for i in range(s, min(s + chunk, n))]
        P = np.array([smp.p for smp in samples]).reshape(len(samples), len(space.params))
        if excitation is None:
            F = np.stack([smp.f for smp in samples])
        else:
            F = np.ascontiguousarray(np.broadcast_to(excitation, (len(samples),) + excitation.shape))
        x, rate = provider(P, F)
        xs.append(np.asarray(x, dtype=float))
        if keep_rate:
            rates.append(np.asarray(rate, dtype=float))
        Ps.append(P)
    return Ensemble(x=np.concatenate(xs), rate=np.concatenate(rates) if keep_rate else None,
                    P=np.concatenate(Ps), dt=space.dt)


def silverman_bandwidth(samples: np.ndarray) -> float:
    s = np.asarray(samples, dtype=float)
    iqr = np.subtract(*np.percentile(s, [75, 25]))
    spread = min(s.std(ddof=1), iqr / 1.34) if len(s) > 1 else 0.0
    if spread <= 0:
        spread = s.std(ddof=1) if len(s) > 1 else 0.0
    return 0.9 * spread * len(s) ** (-0.2)


def pdf_estimate(ensemble: Ensemble | np.ndarray, x_grid: np.ndarray, kde: bool = False,
                 dt: float | None = None) -> PDFGrid:
    """Per-slice density on the cells centred at ``x_grid``.

    The histogram is normalised to unit mass over the samples inside the
    grid (samples outside are dropped with a warning). ``kde=True`` smooths
    each slice with a Gaussian kernel of Silverman bandwidth.
    """
    x = ensemble.x if isinstance(ensemble, Ensemble) else np.atleast_2d(np.asarray(ensemble, dtype=float))
    dt = ensemble.dt if isinstance(ensemble, Ensemble) else (dt or 1.0)
    if x.size == 0:
        raise ValueError("empty ensemble")
    x_grid = np.asarray(x_grid, dtype=float)
    if len(x_grid) < 2 or not np.all(np.diff(x_grid) > 0):
        raise ValueError("degenerate grid")
    dx = x_grid[1] - x_grid[0]
    edges = np.concatenate([x_grid - dx / 2, [x_grid[-1] + dx / 2]])
    n_t = x.shape[1]
    p = np.zeros((n_t, len(x_grid)))
    dropped = 0
    for k in range(n_t):
        col = x[:, k]
        counts, _ = np.histogram(col, bins=edges)
        inside = counts.sum()
        dropped = max(dropped, len(col) - inside)
        if inside == 0:
            raise ValueError(f"no samples inside the grid at slice {k}")
        dens = counts / (inside * dx)
        if kde:
            h = silverman_bandwidth(col)
            if h > 0:
                dens = gaussian_filter1d(dens, h / dx, mode="constant")
                dens /= dens.sum() * dx
        p[k] = dens
    if dropped:
        log.warning("up to %d samples per slice fell outside the grid", dropped)
    return PDFGrid(x=x_grid, t=np.arange(n_t) * dt, p=p)


@dataclass
class DamageField:
    dp: np.ndarray
    threshold: np.ndarray
    times: np.ndarray
    dp_star: np.ndarray      # (n_times, channels)


def damage_probability(x: Ensemble | np.ndarray, threshold, times: Sequence[float] = (),
                       dt: float | None = None, absolute: bool = False) -> DamageField:
    """Share of trajectories whose peak exceeds ``threshold``, per channel.

    ``x`` is (N, n_t) or (N, n_t, channels). ``dp_star`` holds the share
    exceeding the threshold at each requested time instead of over the
    whole record. ``absolute`` compares ``|x|``.
    """
    dt = x.dt if isinstance(x, Ensemble) else dt
    arr = x.x if isinstance(x, Ensemble) else np.asarray(x, dtype=float)
    if arr.shape[0] == 0:
        raise ValueError("empty ensemble")
    if arr.ndim == 2:
        arr = arr[..., None]
    if absolute:
        arr = np.abs(arr)
    thr = np.broadcast_to(np.asarray(threshold, dtype=float), (arr.shape[-1],)).copy()
    if not np.all(np.isfinite(thr)):
        raise ValueError("threshold must be finite")
    dp = (arr.max(axis=1) > thr).mean(axis=0)
    times = np.asarray(times, dtype=float)
    if len(times) and dt is None:
        raise ValueError("time-sliced probabilities need dt")
    idx = np.rint(times / dt).astype(int) if len(times) else np.zeros(0, dtype=int)
    if np.any(idx < 0) or np.any(idx >= arr.shape[1]):
        raise ValueError("requested time outside the record")
    dp_star = (arr[:, idx, :] > thr).mean(axis=0) if len(idx) else np.zeros((0, arr.shape[-1]))
    return DamageField(dp=dp, threshold=thr, times=times, dp_star=dp_star)


def exceedance_from_pdf(grid: PDFGrid, threshold: float, time: float) -> float:
    """Probability mass above ``threshold`` in the slice nearest ``time``."""
    p = grid.slice_at(time)
    return float(p[grid.x > threshold].sum() * grid.dx)


def compare_pdf(a: PDFGrid, b: PDFGrid, times: Sequence[float] = (),
                thresholds: Sequence[float] = ()) -> dict:
    """Per-slice L1 distance, its maximum, and dp* differences at ``times``."""
    if a.p.shape != b.p.shape or not np.allclose(a.x, b.x) or not np.allclose(a.t, b.t):
        raise ValueError("PDF grids differ")
    l1 = np.abs(a.p - b.p).sum(axis=1) * a.dx
    out = {"t": a.t, "l1": l1, "max_l1": float(l1.max()), "times": list(times), "slices": [],
           "dp_star": []}
    for t in times:
        k = int(np.argmin(np.abs(a.t - t)))
        out["slices"].append({"t": float(a.t[k]), "l1": float(l1[k])})
        for thr in thresholds:
            pa, pb = exceedance_from_pdf(a, thr, t), exceedance_from_pdf(b, thr, t)
            out["dp_star"].append({"t": float(a.t[k]), "threshold": float(thr), "a": pa, "b": pb,
                                   "diff": pa - pb})
    return out


def write_compare_csv(metrics: dict, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "l1"])
        for t, v in zip(metrics["t"], metrics["l1"]):
            w.writerow([repr(float(t)), repr(float(v))])
    if metrics["dp_star"]:
        side = Path(path).with_name(Path(path).stem + "_dpstar.csv")
        with open(side, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "threshold", "dp_a", "dp_b", "diff"])
            for r in metrics["dp_star"]:
                w.writerow([r["t"], r["threshold"], r["a"], r["b"], r["diff"]])


def write_damage_csv(field: DamageField, path: str | Path, channels: Sequence[str] | None = None) -> None:
    names = list(channels) if channels is not None else [f"ch{j}" for j in range(len(field.dp))]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["channel", "threshold", "dp"] + [f"dp_star@{t:g}" for t in field.times])
        for j, name in enumerate(names):
            w.writerow([name, repr(float(field.threshold[j])), repr(float(field.dp[j]))]
                       + [repr(float(field.dp_star[i, j])) for i in range(len(field.times))])

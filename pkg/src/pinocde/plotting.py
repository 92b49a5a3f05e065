"""CSV series for external plotting, each rendered to a PNG alongside.

Data files carry no timestamps, so re-exporting is byte-identical.
"""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .pino.train import TrainReport  # noqa: E402
from .uq.mc import DamageField  # noqa: E402
from .uq.pdem import PDFGrid  # noqa: E402

__all__ = ["write_overlay", "write_loss_curves", "write_pdf_slices", "write_damage_bars"]

_PNG_META = {"Software": None}


def _fmt(v) -> str:
    return repr(float(v))


def _save(fig, path: Path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_PNG_META)
    plt.close(fig)


def write_overlay(path: str | Path, t: np.ndarray, truth: np.ndarray | None, pred: np.ndarray,
                  labels: Sequence[str], dofs: Sequence[int] | None = None) -> list[Path]:
    """Truth and prediction per DOF: columns ``t, truth_<dof>, pred_<dof>``."""
    path = Path(path)
    dofs = list(range(pred.shape[-1])) if dofs is None else list(dofs)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        head = ["t"]
        for j in dofs:
            head += ([f"truth_{labels[j]}"] if truth is not None else []) + [f"pred_{labels[j]}"]
        w.writerow(head)
        for i, ti in enumerate(t):
            row = [_fmt(ti)]
            for j in dofs:
                row += ([_fmt(truth[i, j])] if truth is not None else []) + [_fmt(pred[i, j])]
            w.writerow(row)
    n = len(dofs)
    fig, axes = plt.subplots(n, 1, figsize=(7, 1.6 * n + 0.6), sharex=True, squeeze=False)
    for ax, j in zip(axes[:, 0], dofs):
        if truth is not None:
            ax.plot(t, truth[:, j], "k-", lw=1.2, label="truth")
        ax.plot(t, pred[:, j], "r--", lw=1.0, label="prediction")
        ax.set_ylabel(labels[j], fontsize=8)
    axes[0, 0].legend(fontsize=7, loc="upper right")
    axes[-1, 0].set_xlabel("t [s]")
    png = path.with_suffix(".png")
    _save(fig, png)
    return [path, png]


def write_loss_curves(report: TrainReport, path: str | Path) -> list[Path]:
    """Training report CSV plus loss, weight and rLSE panels."""
    path = Path(path)
    report.to_csv(path)
    ep = np.asarray(report.epochs)
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.4))
    for k, v in report.losses.items():
        v = np.asarray(v)
        if np.any(v > 0):
            axes[0].semilogy(ep, v, label=k)
    axes[0].set_title("losses")
    for k, v in report.omega.items():
        if np.any(np.asarray(v) > 0):
            axes[1].plot(ep, v, label=k)
    axes[1].set_title("loss weights")
    for k, v in report.rlse.items():
        v = np.asarray(v, dtype=float)
        ok = np.isfinite(v)
        axes[2].semilogy(ep[ok], v[ok], "o-", ms=2, label=k)
    axes[2].set_title("test rLSE [%]")
    for ax in axes:
        ax.set_xlabel("epoch")
        ax.legend(fontsize=7)
    png = path.with_suffix(".png")
    _save(fig, png)
    return [path, png]


def write_pdf_slices(grids: dict[str, PDFGrid], times: Sequence[float], out_dir: str | Path,
                     stem: str = "pdf") -> list[Path]:
    """One CSV (``x, p_<name>...``) and one PNG per requested time."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = list(grids)
    x = grids[names[0]].x
    files = []
    for t in times:
        path = out_dir / f"{stem}_t{t:g}.csv"
        cols = [grids[n].slice_at(t) for n in names]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x"] + [f"p_{n}" for n in names])
            for i, xi in enumerate(x):
                w.writerow([_fmt(xi)] + [_fmt(c[i]) for c in cols])
        fig, ax = plt.subplots(figsize=(5, 3.2))
        for n, c in zip(names, cols):
            ax.step(x, c, where="mid", label=n)
        ax.set_xlabel("x")
        ax.set_ylabel("p(x)")
        ax.set_title(f"t = {t:g} s")
        ax.legend(fontsize=7)
        png = path.with_suffix(".png")
        _save(fig, png)
        files += [path, png]
    return files


def write_damage_bars(fields: dict[str, DamageField], path: str | Path,
                      channels: Sequence[str] | None = None) -> list[Path]:
    """dp per source and channel as a long table plus a grouped bar chart."""
    path = Path(path)
    names = list(fields)
    n_ch = len(fields[names[0]].dp)
    channels = list(channels) if channels is not None else [f"ch{j}" for j in range(n_ch)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["source", "channel", "threshold", "dp"])
        for n in names:
            f = fields[n]
            for j, ch in enumerate(channels):
                w.writerow([n, ch, _fmt(f.threshold[j]), _fmt(f.dp[j])])
    fig, ax = plt.subplots(figsize=(5, 3.2))
    width = 0.8 / len(names)
    for i, n in enumerate(names):
        ax.bar(np.arange(n_ch) + i * width, fields[n].dp, width=width, label=n)
    ax.set_xticks(np.arange(n_ch) + 0.4 - width / 2, channels)
    ax.set_ylabel("damage probability")
    ax.legend(fontsize=7)
    png = path.with_suffix(".png")
    _save(fig, png)
    return [path, png]

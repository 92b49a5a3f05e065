"""Probability density evolution: one convection equation per representative case.

Each case transports a unit-mass density along ``dp/dt + v(t) dp/dx = 0``
where ``v`` is the rate of the monitored quantity for that case. The
scheme is Lax-Wendroff in flux form with a minmod limiter on the
second-order correction, which is TVD for ``CFL <= 1``; for a velocity
that is uniform in ``x`` the two-step (Richtmyer) form reduces to the same
update. Boundaries admit no inflow; outflow leaves the domain.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from ..system import ParameterSpace, sample_parameters
from .points import RepresentativePointSet, select_representative_points

log = logging.getLogger(__name__)

__all__ = ["PDFGrid", "hat_density", "evolve_pdf", "pdem_step", "run_pdem", "uniform_grid", "refine_grid",
           "save_pdf_grid", "load_pdf_grid"]

CFL_MAX = 0.9
MASS_TOL = 1e-3


@dataclass
class PDFGrid:
    x: np.ndarray
    t: np.ndarray
    p: np.ndarray

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    def mass(self) -> np.ndarray:
        return self.p.sum(axis=-1) * self.dx

    def slice_at(self, time: float) -> np.ndarray:
        return self.p[int(np.argmin(np.abs(self.t - time)))]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            fh.write("t,x,p\n")
            for i, ti in enumerate(self.t):
                for xj, pj in zip(self.x, self.p[i]):
                    fh.write(f"{ti!r},{xj!r},{pj!r}\n")


def uniform_grid(lo: float, hi: float, n_x: int) -> np.ndarray:
    if not hi > lo or n_x < 3:
        raise ValueError("grid needs hi > lo and at least 3 points")
    return np.linspace(lo, hi, n_x)


def refine_grid(x_grid: np.ndarray, refine: int) -> np.ndarray:
    """Centres of ``refine`` equal sub-cells of every cell of ``x_grid``."""
    dx = x_grid[1] - x_grid[0]
    offs = (np.arange(refine) - (refine - 1) / 2) * dx / refine
    return (x_grid[:, None] + offs[None, :]).ravel()


def hat_density(x_grid: np.ndarray, x0) -> np.ndarray:
    """Unit-mass three-point hat at ``x0`` (one row per entry of ``x0``).

    Quadratic B-spline weights about the nearest node keep both the mass
    and the first moment of the delta.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    dx = x_grid[1] - x_grid[0]
    pos = (x0 - x_grid[0]) / dx
    j = np.rint(pos).astype(int)
    if np.any(j < 1) or np.any(j > len(x_grid) - 2):
        raise ValueError("initial point too close to the grid edge")
    s = pos - j
    p = np.zeros((len(x0), len(x_grid)))
    rows = np.arange(len(x0))
    p[rows, j - 1] = 0.5 * (0.5 - s) ** 2
    p[rows, j] = 0.75 - s**2
    p[rows, j + 1] = 0.5 * (0.5 + s) ** 2
    return p / dx


def _minmod(a, b):
    return np.where(a * b > 0, np.sign(a) * np.minimum(np.abs(a), np.abs(b)), 0.0)


def pdem_step(p: np.ndarray, c: np.ndarray) -> np.ndarray:
    """One limited Lax-Wendroff step for rows ``p`` (B, n_x) with Courant numbers ``c`` (B,)."""
    c = np.asarray(c, dtype=float)[:, None]
    padded = np.pad(p, ((0, 0), (2, 2)))
    d = np.diff(padded, axis=1)                 # d[k] = q[k+1] - q[k], q = padded
    sigma = _minmod(d[:, :-1], d[:, 1:])        # limited slope at padded cells 1 .. n_x+2
    q = padded[:, 1:-1]                         # cells -1 .. n_x (with ghosts)
    s = sigma                                   # aligned with q
    # fluxes (divided by v) at interfaces i+1/2 for i = -1 .. n_x-1
    pos = q[:, :-1] + 0.5 * (1 - c) * s[:, :-1]
    neg = q[:, 1:] - 0.5 * (1 + c) * s[:, 1:]
    flux = c * np.where(c >= 0, pos, neg)
    return p - (flux[:, 1:] - flux[:, :-1])


def evolve_pdf(velocity: np.ndarray, x_grid: np.ndarray, dt: float, x0=0.0,
               p0: np.ndarray | None = None, n_sub: int | None = None) -> PDFGrid | list[PDFGrid]:
    """Transport densities along velocity histories sampled every ``dt``.

    ``velocity`` is (n_t,) for one case or (B, n_t) for several. Each
    sampling interval is split into PDE steps whose velocity is the linear
    interpolant at the step midpoint. By default the step count is chosen
    per interval as the smallest keeping the Courant number at or below
    0.9, which keeps the limiter's numerical diffusion low while the
    density moves fast; an explicit ``n_sub`` applies to every interval
    and raises if it violates the bound. The initial density is ``p0`` or
    a three-point hat at ``x0``.
    """
    v = np.asarray(velocity, dtype=float)
    single = v.ndim == 1
    v = np.atleast_2d(v)
    B, n_t = v.shape
    x_grid = np.asarray(x_grid, dtype=float)
    dx = x_grid[1] - x_grid[0]
    if not np.allclose(np.diff(x_grid), dx, rtol=1e-9, atol=0):
        raise ValueError("x_grid must be uniform")
    if not np.all(np.isfinite(v)):
        raise ValueError("velocity history is not finite")
    # bound of |v| over each interval (linear interpolant peaks at an endpoint)
    vmax = np.abs(v).max(axis=0)
    vint = np.maximum(vmax[:-1], vmax[1:]) if n_t > 1 else np.zeros(0)
    need = np.maximum(1, np.ceil(vint * dt / (CFL_MAX * dx) - 1e-12)).astype(int)
    if n_sub is not None:
        if n_sub < 1 or np.any(need > n_sub):
            worst = float(vint.max() * dt / max(n_sub, 1) / dx)
            raise ValueError(f"CFL {worst:.3f} exceeds {CFL_MAX}; use n_sub >= {int(need.max())}")
        need = np.full_like(need, n_sub)
    if p0 is None:
        p = hat_density(x_grid, np.broadcast_to(np.asarray(x0, dtype=float), (B,)))
    else:
        p = np.array(np.broadcast_to(np.asarray(p0, dtype=float), (B, len(x_grid))))
    out = np.empty((B, n_t, len(x_grid)))
    out[:, 0] = p
    for k in range(n_t - 1):
        m = need[k]
        frac = (np.arange(m) + 0.5) / m
        vk = v[:, k:k + 1] + (v[:, k + 1:k + 2] - v[:, k:k + 1]) * frac
        c = vk * (dt / m / dx)
        for j in range(m):
            p = pdem_step(p, c[:, j])
        out[:, k + 1] = p
    t = np.arange(n_t) * dt
    grids = [PDFGrid(x=x_grid, t=t, p=out[b]) for b in range(B)]
    return grids[0] if single else grids


def run_pdem(provider: Callable, space: ParameterSpace, n_sel: int, x_grid: np.ndarray,
             excitation: np.ndarray | None = None, seed: int = 0,
             points: RepresentativePointSet | None = None, chunk: int = 256,
             on_range: str = "error", refine: int = 1) -> PDFGrid:
    """Density of the monitored quantity from ``n_sel`` representative cases.

    Only the physical parameters are sampled at representative points; the
    load is held fixed (``excitation`` or the draw of ``seed``). Cases are
    evolved in chunks and superposed with their weights in point order.
    Slices whose mass drifts by more than 1e-3 are renormalised (logged).
    ``on_range`` is ``"error"`` or ``"widen"`` when trajectories leave the grid.
    With ``refine > 1`` each case is solved on a grid ``refine`` times finer
    and cell-averaged back onto ``x_grid``; this cuts the numerical
    diffusion without changing the resolution of the reported density.
    """
    if refine < 1:
        raise ValueError("refine must be >= 1")
    points = points or select_representative_points(space, n_sel)
    if excitation is None:
        excitation = sample_parameters(space, seed).f
    x_grid = np.asarray(x_grid, dtype=float)
    P = points.points
    acc = None
    for s in range(0, len(P), chunk):
        rows = P[s:s + chunk]
        F = np.broadcast_to(excitation, (len(rows),) + excitation.shape)
        x, rate = provider(rows, np.ascontiguousarray(F))
        x_grid = _check_range(x, x_grid, on_range)
        fine = refine_grid(x_grid, refine)
        cases = evolve_pdf(rate, fine, space.dt, x0=x[:, 0])
        part = sum(w * c.p for w, c in zip(points.weights[s:s + chunk], cases))
        part = part.reshape(part.shape[0], len(x_grid), refine).mean(axis=-1)
        if acc is not None and acc.shape != part.shape:
            raise ValueError("grid changed between chunks; widen the grid up front")
        acc = part if acc is None else acc + part
    grid = PDFGrid(x=x_grid, t=np.arange(acc.shape[0]) * space.dt, p=acc)
    mass = grid.mass()
    drift = np.abs(mass - 1.0) > MASS_TOL
    if np.any(drift):
        log.warning("renormalising %d slices with mass drift above %g", int(drift.sum()), MASS_TOL)
        grid.p[drift] /= mass[drift, None]
    return grid


def _check_range(x, x_grid, on_range):
    dx = x_grid[1] - x_grid[0]
    lo, hi = float(x.min()), float(x.max())
    if lo >= x_grid[0] + dx and hi <= x_grid[-1] - dx:
        return x_grid
    if on_range != "widen":
        raise ValueError(f"trajectories span [{lo:.4g}, {hi:.4g}] beyond the grid "
                         f"[{x_grid[0]:.4g}, {x_grid[-1]:.4g}]")
    n_lo = max(0, math.ceil((x_grid[0] + dx - lo) / dx))
    n_hi = max(0, math.ceil((hi - x_grid[-1] + dx) / dx))
    log.warning("widening the PDF grid by %d/%d cells", n_lo, n_hi)
    return x_grid[0] + dx * np.arange(-n_lo, len(x_grid) + n_hi)


def save_pdf_grid(grid: PDFGrid, path: str | Path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    blob = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in (grid.x, grid.t, grid.p))
    (path / "pdf.bin").write_bytes(blob)
    manifest = {"format": "pinocde-pdf/1", "n_x": len(grid.x), "n_t": len(grid.t), "dtype": "<f8",
                "layout": "x[n_x], t[n_t], p[n_t][n_x]", "sha256": hashlib.sha256(blob).hexdigest()}
    (path / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")


def load_pdf_grid(path: str | Path) -> PDFGrid:
    path = Path(path)
    m = json.loads((path / "manifest.json").read_text())
    blob = (path / "pdf.bin").read_bytes()
    if hashlib.sha256(blob).hexdigest() != m["sha256"]:
        raise ValueError("checksum mismatch in pdf.bin")
    a = np.frombuffer(blob, dtype="<f8")
    nx, nt = m["n_x"], m["n_t"]
    return PDFGrid(x=a[:nx].copy(), t=a[nx:nx + nt].copy(), p=a[nx + nt:].reshape(nt, nx).copy())

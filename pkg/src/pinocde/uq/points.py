"""Number-theoretic representative points for the random parameters."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from ..system import ParameterSpace

__all__ = ["RepresentativePointSet", "korobov_lattice", "select_representative_points"]


@dataclass
class RepresentativePointSet:
    """Points in parameter space (all parameters, fixed ones included) with weights."""

    points: np.ndarray
    unit: np.ndarray
    weights: np.ndarray
    names: list[str]
    generator: int

    def __len__(self) -> int:
        return len(self.points)


def korobov_lattice(n: int, d: int, a: int) -> np.ndarray:
    """Centred rank-1 lattice ``frac(k z / n + 1/(2n))`` with ``z = (1, a, a^2, ...) mod n``."""
    z = np.array([pow(a, j, n) if n > 1 else 0 for j in range(d)], dtype=np.int64)
    k = np.arange(n, dtype=np.int64)[:, None]
    return ((k * z) % n + 0.5) / n


def select_representative_points(space: ParameterSpace, n_sel: int,
                                 max_candidates: int = 256) -> RepresentativePointSet:
    """Korobov lattice on the random parameters, mapped through their inverse CDFs.

    The generator ``a`` is searched over ``1 .. min(n_sel - 1, max_candidates)``
    (coprime to ``n_sel``) and the lattice with the smallest L2-star
    discrepancy wins; ties go to the smaller ``a``. With ``n_sel = 1`` the
    single point sits at the distribution medians.
    """
    if n_sel < 1:
        raise ValueError("n_sel must be >= 1")
    rand = [i for i, p in enumerate(space.params) if p.dist != "fixed"]
    d = len(rand)
    best_a = 1
    if d == 0:
        unit = np.full((n_sel, 0), 0.5)
    else:
        unit = korobov_lattice(n_sel, d, 1)
        if d > 1 and n_sel > 2:
            best = math.inf
            for a in range(1, min(n_sel - 1, max_candidates) + 1):
                if math.gcd(a, n_sel) != 1:
                    continue
                cand = korobov_lattice(n_sel, d, a)
                disc = qmc.discrepancy(cand, method="L2-star")
                if disc < best - 1e-15:
                    best, best_a, unit = disc, a, cand
    points = np.empty((n_sel, len(space.params)))
    for j, spec in enumerate(space.params):
        points[:, j] = spec.median
    for col, j in enumerate(rand):
        points[:, j] = space.params[j].ppf(unit[:, col])
    return RepresentativePointSet(points=points, unit=unit, weights=np.full(n_sel, 1.0 / n_sel),
                                  names=space.names, generator=best_a)

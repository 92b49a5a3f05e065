"""Equation normalisation: per-pair, per-ODE weights for the residual loss.

Each labelled pair's ground truth is perturbed by uniform noise at level
``r`` times the channel standard deviation (solution, velocity and
acceleration separately), the residual of every ODE is evaluated, and the
weight of ODE ``j`` becomes ``r / max_t |residual_j|``. A model whose error
is about ``r`` then sees weighted residuals of about ``r`` in every ODE.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._seeding import derive_seed
from .oracle import Dataset

__all__ = ["ENWeights", "compute_en_weights", "perturbation_draw", "perturbed_residual_max",
           "weighted_residual_norm", "save_en_weights", "load_en_weights"]

DEFAULT_R = 0.02
DEFAULT_CAP = 1e6


@dataclass
class ENWeights:
    lam: np.ndarray
    r: float = DEFAULT_R
    cap: float = DEFAULT_CAP
    seed: int = 0
    draws: int = 1

    @property
    def shape(self):
        return self.lam.shape

    def median(self, rows: np.ndarray | None = None) -> np.ndarray:
        """Per-ODE median weight, the fallback for pairs without ground truth."""
        lam = self.lam if rows is None else self.lam[rows]
        return np.median(lam, axis=0)


def perturbation_draw(ds: Dataset, i: int, r: float, seed: int, draw: int = 0):
    """Perturbed ``(s0, s1, s2)`` state of labelled pair ``i`` for one draw."""
    rng = np.random.default_rng(derive_seed(seed, i, draw))
    out = []
    for arr in (ds.U[i], ds.dU[i], ds.ddU[i]):
        amp = r * arr.std(axis=0)
        out.append(arr + rng.uniform(-1.0, 1.0, size=arr.shape) * amp)
    return tuple(out)


def perturbed_residual_max(ds: Dataset, i: int, states, mats) -> np.ndarray:
    """``max_t |M s2 + C s1 + K s0 - force_map f|`` per ODE for pair ``i``."""
    M, C, K, Fm = mats
    s0, s1, s2 = states
    res = s2 @ M.T + s1 @ C.T + s0 @ K.T - ds.F[i] @ Fm.T
    return np.abs(res).max(axis=0)


def compute_en_weights(ds: Dataset, r: float = DEFAULT_R, seed: int = 0, draws: int = 1,
                       cap: float = DEFAULT_CAP) -> ENWeights:
    """Weights for every labelled pair (train and test) of ``ds``.

    With ``draws > 1`` the residual maxima are averaged over several
    perturbations before inversion.
    """
    if not r > 0:
        raise ValueError("acceptable error level r must be positive")
    if draws < 1:
        raise ValueError("draws must be >= 1")
    n_lab = ds.n_train + ds.n_test
    if n_lab == 0 or ds.dU.shape[0] < n_lab:
        raise ValueError("EN weights need labelled pairs with stored derivatives")
    Ms, Cs, Ks, Fms = ds.system_arrays(np.arange(n_lab))
    lam = np.empty((n_lab, ds.n_dof))
    for i in range(n_lab):
        mats = (Ms[i], Cs[i], Ks[i], Fms[i])
        L = np.mean([perturbed_residual_max(ds, i, perturbation_draw(ds, i, r, seed, d), mats)
                     for d in range(draws)], axis=0)
        lam[i] = _invert(L, r, cap)
    return ENWeights(lam=lam, r=r, cap=cap, seed=seed, draws=draws)


def _invert(L: np.ndarray, r: float, cap: float) -> np.ndarray:
    """``r / L``, clipped to ``cap`` where ``L`` falls below ``r / cap``."""
    with np.errstate(divide="ignore"):
        return np.where(L < r / cap, cap, r / L)


def weighted_residual_norm(residuals, lam):
    """Time mean of ``sum_j (lam_j * residual[t, j])**2``.

    Accepts (n_t, n_dof) or batched (B, n_t, n_dof) residuals with matching
    weight rows; numpy or torch.
    """
    if residuals.shape[-1] != lam.shape[-1]:
        raise ValueError("weights do not match the number of ODEs")
    if lam.ndim == 2:
        lam = lam[:, None, :]
    return ((lam * residuals) ** 2).sum(-1).mean(-1)


def save_en_weights(w: ENWeights, path: str | Path, dataset_hash: str) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    data = np.ascontiguousarray(w.lam, dtype="<f8").tobytes()
    (path / "lambda.bin").write_bytes(data)
    manifest = {"format": "pinocde-en/1", "dataset_hash": dataset_hash, "r": w.r, "cap": w.cap,
                "seed": w.seed, "draws": w.draws, "shape": list(w.lam.shape), "dtype": "<f8",
                "layout": "[pair][dof], labelled pairs in dataset order",
                "sha256": hashlib.sha256(data).hexdigest()}
    (path / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")


def load_en_weights(path: str | Path, dataset_hash: str | None = None) -> ENWeights:
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    if dataset_hash is not None and manifest["dataset_hash"] != dataset_hash:
        raise ValueError("EN weights were computed for a different dataset")
    data = (path / "lambda.bin").read_bytes()
    if hashlib.sha256(data).hexdigest() != manifest["sha256"]:
        raise ValueError("checksum mismatch in lambda.bin")
    lam = np.frombuffer(data, dtype="<f8").reshape(manifest["shape"]).astype(float)
    return ENWeights(lam=lam, r=manifest["r"], cap=manifest["cap"], seed=manifest["seed"],
                     draws=manifest["draws"])

"""The four training losses: data, equation, direct-derivative, virtual equation.

Network outputs are standardised solutions. Equation losses denormalise
them, difference them in time and feed the physical ``(u, u', u'')`` into
the residual; derivative losses compare derivatives on the standardised
scale.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..en import weighted_residual_norm
from ..oracle import NormStats, finite_difference

__all__ = ["Batch", "loss_data", "loss_eq", "loss_dde", "loss_veq", "physical_derivatives",
           "batch_residual", "window_mask"]


@dataclass
class Batch:
    """Tensors for a set of pairs. Truth fields are ``None`` for virtual pairs."""

    x: torch.Tensor
    M: torch.Tensor
    C: torch.Tensor
    K: torch.Tensor
    force_map: torch.Tensor
    f: torch.Tensor
    u: torch.Tensor | None = None
    du: torch.Tensor | None = None
    ddu: torch.Tensor | None = None
    lam: torch.Tensor | None = None

    def __len__(self) -> int:
        return self.x.shape[0]

    def subset(self, idx) -> "Batch":
        pick = lambda t: None if t is None else t[idx]  # noqa: E731
        return Batch(**{k: pick(v) for k, v in self.__dict__.items()})


def loss_data(pred: torch.Tensor, truth: torch.Tensor) -> torch.Tensor:
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {tuple(pred.shape)} vs {tuple(truth.shape)}")
    return ((pred - truth) ** 2).mean()


def physical_derivatives(pred: torch.Tensor, stats: NormStats, dt: float):
    u = stats.invert("u", pred)
    du, ddu = finite_difference(u, dt)
    return u, du, ddu


def batch_residual(u, du, ddu, b: Batch) -> torch.Tensor:
    """``M u'' + C u' + K u - force_map f`` for every pair in ``b``: (B, n_t, n_dof)."""
    return (torch.einsum("bij,btj->bti", b.M, ddu) + torch.einsum("bij,btj->bti", b.C, du)
            + torch.einsum("bij,btj->bti", b.K, u) - torch.einsum("bic,btc->bti", b.force_map, b.f))


def loss_eq(pred: torch.Tensor, b: Batch, stats: NormStats, dt: float,
            lam: torch.Tensor | None = None) -> torch.Tensor:
    """Mean over pairs of the (optionally EN-weighted) squared residual norm."""
    u, du, ddu = physical_derivatives(pred, stats, dt)
    res = batch_residual(u, du, ddu, b)
    if lam is None:
        lam = torch.ones(res.shape[0], res.shape[-1], dtype=res.dtype)
    if lam.shape != (res.shape[0], res.shape[-1]):
        raise ValueError("EN weight rows do not match the batch")
    return weighted_residual_norm(res, lam).mean()


def loss_veq(pred: torch.Tensor, b: Batch, stats: NormStats, dt: float,
             lam_median: torch.Tensor | None = None) -> torch.Tensor:
    """Equation loss on virtual pairs; EN uses the dataset-median weight per ODE."""
    if len(b) == 0:
        raise ValueError("virtual split is empty")
    lam = None if lam_median is None else lam_median.expand(len(b), -1)
    return loss_eq(pred, b, stats, dt, lam)


def window_mask(n_t: int, dt: float, window: float | None) -> np.ndarray | None:
    """Boolean time mask of ``[0, w] U [T - w, T]``; ``None`` means the whole record."""
    if window is None:
        return None
    T = (n_t - 1) * dt
    if window > T / 2 + 1e-12:
        raise ValueError(f"window {window} s exceeds half the record ({T / 2} s)")
    t = np.arange(n_t) * dt
    eps = 1e-9 * max(dt, 1.0)
    return (t <= window + eps) | (t >= T - window - eps)


def loss_dde(du_pred, ddu_pred, du_true, ddu_true, mask: np.ndarray | None = None) -> torch.Tensor:
    """Squared error of ``u' + u''`` (standardised), optionally on edge windows only."""
    err = (du_true + ddu_true) - (du_pred + ddu_pred)
    if mask is not None:
        err = err[:, torch.as_tensor(mask)]
    return (err**2).mean()

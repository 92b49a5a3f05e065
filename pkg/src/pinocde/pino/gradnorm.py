"""GradNorm balancing of the loss-term weights."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

__all__ = ["TERMS", "LossWeights", "gradnorm_update"]

TERMS = ("data", "eq", "dde", "veq")


@dataclass(frozen=True)
class LossWeights:
    omega: np.ndarray = field(default_factory=lambda: np.ones(4))
    active: tuple[bool, bool, bool, bool] = (True, True, False, False)
    alpha: float = 1.5
    rate: float = 0.1

    def __post_init__(self):
        om = np.where(np.asarray(self.active), np.asarray(self.omega, dtype=float), 0.0)
        if np.any(om[list(self.active)] <= 0):
            raise ValueError("active loss weights must be positive")
        object.__setattr__(self, "omega", om)

    @classmethod
    def initial(cls, active, alpha: float = 1.5, rate: float = 0.1) -> "LossWeights":
        return cls(omega=np.asarray(active, dtype=float), active=tuple(bool(a) for a in active),
                   alpha=alpha, rate=rate)

    @property
    def n_active(self) -> int:
        return int(sum(self.active))


def gradnorm_update(w: LossWeights, grad_norms, losses, initial_losses) -> LossWeights:
    """One GradNorm step.

    ``grad_norms[i]`` is the norm of the gradient of the *unweighted* term
    ``i`` at the shared layer. The weighted norms ``G_i = omega_i g_i`` are
    pulled toward ``mean(G) * r_i**alpha`` where ``r_i`` is the term's
    relative inverse training rate; the step is geometric,
    ``omega_i *= (target_i / G_i)**rate``, and the active weights are then
    rescaled to sum to their count.
    """
    act = np.asarray(w.active)
    if act.sum() < 2:
        raise ValueError("GradNorm needs at least two active loss terms")
    g = np.asarray(grad_norms, dtype=float)
    L = np.asarray(losses, dtype=float)
    L0 = np.asarray(initial_losses, dtype=float)
    if not np.any(g[act] > 0):
        raise ValueError("all shared-layer gradient norms are zero")
    G = w.omega * g
    live = act & (g > 0)
    G_mean = G[live].mean()
    ratio = np.where(live, L / np.where(L0 > 0, L0, 1.0), 1.0)
    inv_rate = ratio / ratio[live].mean()
    target = G_mean * inv_rate**w.alpha
    omega = w.omega.copy()
    omega[live] *= (target[live] / G[live]) ** w.rate
    omega[act] *= act.sum() / omega[act].sum()
    return replace(w, omega=omega)

"""Training loop, evaluation (rLSE) and batched prediction."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Literal

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .._seeding import derive_seed
from ..en import ENWeights
from ..oracle import Dataset, NormStats, compute_stats, finite_difference
from .gradnorm import TERMS, LossWeights, gradnorm_update
from .losses import Batch, loss_data, loss_dde, loss_eq, loss_veq, physical_derivatives, window_mask
from .model import OperatorModel, encode_inputs

log = logging.getLogger(__name__)

__all__ = ["TrainConfig", "ABLATION_ROWS", "TrainReport", "TrainingDiverged", "train", "rlse",
           "evaluate", "predict", "make_batch", "compose_loss"]

_DTYPES = {"float32": torch.float32, "float64": torch.float64}

# loss composition of every row of the ablation table; "window" is the "+" variant
ABLATION_ROWS: dict[str, dict] = {
    "T1": dict(data=True, eq=True, dde="off", veq=False, en=True),
    "T2": dict(data=True, eq=True, dde="full", veq=False, en=True),
    "T3": dict(data=True, eq=True, dde="off", veq=True, en=True),
    "T4": dict(data=True, eq=True, dde="full", veq=True, en=True),
    "T5": dict(data=True, eq=True, dde="off", veq=False, en=False),
    "T6": dict(data=True, eq=True, dde="off", veq=True, en=False),
    "T7": dict(data=True, eq=False, dde="off", veq=False, en=False),
    "V1": dict(data=True, eq=True, dde="full", veq=False, en=True),
    "V2": dict(data=True, eq=True, dde="window", veq=False, en=True),
    "V3": dict(data=True, eq=True, dde="window", veq=False, en=False),
    "V4": dict(data=True, eq=False, dde="off", veq=False, en=False),
    "R1": dict(data=True, eq=True, dde="full", veq=True, en=True),
    "R2": dict(data=True, eq=True, dde="window", veq=True, en=True),
    "R3": dict(data=True, eq=True, dde="window", veq=False, en=False),
    "R4": dict(data=True, eq=False, dde="off", veq=False, en=False),
    # training without solution data: residuals plus derivative edge windows
    "A1": dict(data=False, eq=True, dde="window", veq=True, en=True),
}


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    epochs: int = Field(default=300, ge=0)
    batch_size: int = Field(default=20, ge=1)
    lr: float = Field(default=1e-3, ge=0)
    decay_step: int = Field(default=75, ge=1)
    decay_ratio: float = Field(default=0.5, gt=0)
    seed: int = 0
    window: float = Field(default=0.025, gt=0)
    data: bool = True
    eq: bool = True
    dde: Literal["off", "full", "window"] = "off"
    veq: bool = False
    en: bool = True
    gradnorm: bool = True
    gradnorm_alpha: float = 1.5
    gradnorm_rate: float = Field(default=0.1, gt=0)
    gradnorm_every: int = Field(default=1, ge=1)
    dtype: Literal["float32", "float64"] = "float32"
    eval_every: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _check(self):
        if not any(self.active):
            raise ValueError("at least one loss term must be active")
        return self

    @property
    def active(self) -> tuple[bool, bool, bool, bool]:
        return (self.data, self.eq, self.dde != "off", self.veq)

    @classmethod
    def from_row(cls, row: str, **overrides) -> "TrainConfig":
        if row not in ABLATION_ROWS:
            raise KeyError(f"unknown ablation row {row!r}")
        return cls(**{**ABLATION_ROWS[row], **overrides})


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainReport:
    epochs: list[int] = field(default_factory=list)
    losses: dict[str, list[float]] = field(default_factory=lambda: {k: [] for k in ("total",) + TERMS})
    omega: dict[str, list[float]] = field(default_factory=lambda: {k: [] for k in TERMS})
    rlse: dict[str, list[float]] = field(default_factory=lambda: {k: [] for k in ("solutions", "d1", "d2")})

    def columns(self) -> list[str]:
        return (["epoch"] + [f"loss_{k}" for k in self.losses] + [f"omega_{k}" for k in self.omega]
                + [f"rlse_{k}" for k in self.rlse])

    def rows(self):
        for i, ep in enumerate(self.epochs):
            yield ([ep] + [self.losses[k][i] for k in self.losses] + [self.omega[k][i] for k in self.omega]
                   + [self.rlse[k][i] for k in self.rlse])

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns())
            for row in self.rows():
                w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


# -- tensors ------------------------------------------------------------------------

def make_batch(ds: Dataset, idx: np.ndarray, stats: NormStats, dtype=torch.float32,
               lam: np.ndarray | None = None) -> Batch:
    """Tensors for pairs ``idx`` of ``ds`` (truth attached when labelled)."""
    idx = np.asarray(idx, dtype=int)
    x = encode_inputs(stats.apply("p", ds.P[idx]), stats.apply("f", ds.F[idx]))
    M, C, K, Fm = ds.system_arrays(idx)
    t = lambda a: torch.as_tensor(np.ascontiguousarray(a), dtype=dtype)  # noqa: E731
    b = Batch(x=t(x), M=t(M), C=t(C), K=t(K), force_map=t(Fm), f=t(ds.F[idx]))
    n_lab = ds.n_train + ds.n_test
    if len(idx) and np.all(idx < n_lab):
        b.u = t(stats.apply("u", ds.U[idx]))
        b.du = t(stats.apply("du", ds.dU[idx]))
        b.ddu = t(stats.apply("ddu", ds.ddU[idx]))
    if lam is not None:
        b.lam = t(lam)
    return b


def compose_loss(model: OperatorModel, b: Batch, vb: Batch | None, stats: NormStats, dt: float,
                 cfg: TrainConfig, mask, lam_median: torch.Tensor | None):
    """Individual loss terms (zero tensors for inactive ones) for one step."""
    zero = torch.zeros((), dtype=b.x.dtype)
    terms = [zero] * 4
    pred = model(b.x)
    if cfg.data:
        terms[0] = loss_data(pred, b.u)
    if cfg.eq:
        terms[1] = loss_eq(pred, b, stats, dt, b.lam if cfg.en else None)
    if cfg.dde != "off":
        _, du, ddu = physical_derivatives(pred, stats, dt)
        terms[2] = loss_dde(stats.apply("du", du), stats.apply("ddu", ddu), b.du, b.ddu,
                            mask if cfg.dde == "window" else None)
    if cfg.veq:
        vpred = model(vb.x)
        terms[3] = loss_veq(vpred, vb, stats, dt, lam_median if cfg.en else None)
    return terms


def train(model: OperatorModel, ds: Dataset, en_weights: ENWeights | None, cfg: TrainConfig,
          stats: NormStats | None = None,
          callback: Callable[[int, TrainReport], None] | None = None) -> tuple[OperatorModel, TrainReport]:
    """Train ``model`` on the training split of ``ds``.

    Optimiser is Adam (``m = b1 m + (1-b1) g``, ``v = b2 v + (1-b2) g^2``,
    bias-corrected, ``theta -= lr m_hat / (sqrt(v_hat) + eps)``; b1=0.9,
    b2=0.999, eps=1e-8) with the learning rate multiplied by
    ``decay_ratio`` every ``decay_step`` epochs. Batch order comes from a
    per-epoch permutation seeded by ``cfg.seed``.
    """
    dtype = _DTYPES[cfg.dtype]
    model = model.to(dtype)
    stats = stats or ds.norm or compute_stats(ds)
    if model.n_t != ds.n_t:
        raise ValueError("model grid does not match the dataset")
    if cfg.en and (cfg.eq or cfg.veq) and en_weights is None:
        raise ValueError("EN is enabled but no weights were given")
    if cfg.veq and ds.n_virtual == 0:
        raise ValueError("virtual equation loss needs a non-empty virtual split")
    dt = ds.dt
    mask = window_mask(ds.n_t, dt, cfg.window) if cfg.dde == "window" else None
    tr = ds.indices("train")
    lam = en_weights.lam[tr] if (cfg.en and en_weights is not None) else None
    train_b = make_batch(ds, tr, stats, dtype, lam)
    virt_b = make_batch(ds, ds.indices("virtual"), stats, dtype) if cfg.veq else None
    lam_median = (torch.as_tensor(en_weights.median(tr), dtype=dtype)[None]
                  if (cfg.en and en_weights is not None) else None)
    test_b = make_batch(ds, ds.indices("test"), stats, dtype) if ds.n_test else None

    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    sched = torch.optim.lr_scheduler.StepLR(opt, step_size=cfg.decay_step, gamma=cfg.decay_ratio)
    weights = LossWeights.initial(cfg.active, alpha=cfg.gradnorm_alpha, rate=cfg.gradnorm_rate)
    use_gradnorm = cfg.gradnorm and weights.n_active >= 2
    shared = model.shared_parameters()
    initial_losses = None
    report = TrainReport()
    step = 0
    n_tr = len(tr)
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        perm = np.random.default_rng(derive_seed(cfg.seed, epoch, 0)).permutation(n_tr)
        vperm = (np.random.default_rng(derive_seed(cfg.seed, epoch, 1)).permutation(len(virt_b))
                 if virt_b is not None else None)
        sums = np.zeros(5)
        n_batches = 0
        for bi, start in enumerate(range(0, n_tr, cfg.batch_size)):
            sel = perm[start:start + cfg.batch_size]
            b = train_b.subset(torch.as_tensor(sel))
            vb = None
            if virt_b is not None:
                vs = np.take(vperm, np.arange(bi * cfg.batch_size, bi * cfg.batch_size + len(sel)),
                             mode="wrap")
                vb = virt_b.subset(torch.as_tensor(vs))
            terms = compose_loss(model, b, vb, stats, dt, cfg, mask, lam_median)
            values = np.array([float(t.detach()) for t in terms])
            if not np.all(np.isfinite(values)):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}: "
                                       + ", ".join(f"{k}={v}" for k, v in zip(TERMS, values)))
            if initial_losses is None:
                initial_losses = values.copy()
            if use_gradnorm and step % cfg.gradnorm_every == 0:
                norms = np.zeros(4)
                for i, t in enumerate(terms):
                    if weights.active[i]:
                        grads = torch.autograd.grad(t, shared, retain_graph=True, allow_unused=True)
                        norms[i] = math.sqrt(sum(float((g.double() ** 2).sum()) for g in grads if g is not None))
                if np.any(norms[list(weights.active)] > 0):
                    weights = gradnorm_update(weights, norms, values, initial_losses)
            om = torch.as_tensor(weights.omega, dtype=dtype)
            total = sum(om[i] * terms[i] for i in range(4) if weights.active[i])
            opt.zero_grad(set_to_none=True)
            total.backward()
            opt.step()
            step += 1
            sums += np.concatenate([[float(total.detach())], values])
            n_batches += 1
        sched.step()
        means = sums / max(n_batches, 1)
        report.epochs.append(epoch)
        for k, v in zip(("total",) + TERMS, means):
            report.losses[k].append(float(v))
        for k, v in zip(TERMS, weights.omega):
            report.omega[k].append(float(v))
        if test_b is not None and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs):
            r = evaluate_batch(model, test_b, stats, dt)
            for k in report.rlse:
                report.rlse[k].append(r[k])
        else:
            for k in report.rlse:
                report.rlse[k].append(float("nan"))
        if callback is not None:
            callback(epoch, report)
        log.debug("epoch %d total %.4e", epoch, means[0])
    model.eval()
    return model, report


# -- evaluation ----------------------------------------------------------------------

def rlse(pred, truth) -> float:
    """Relative L2 error in percent, pooled over all entries."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    den = np.linalg.norm(truth)
    if den == 0:
        raise ValueError("truth has zero norm")
    return float(100.0 * np.linalg.norm(pred - truth) / den)


def _rlse_per_channel(pred, truth) -> float:
    num = np.sqrt(((pred - truth) ** 2).reshape(-1, pred.shape[-1]).sum(0))
    den = np.sqrt((truth**2).reshape(-1, truth.shape[-1]).sum(0))
    return float(100.0 * np.mean(num / np.where(den > 0, den, 1.0)))


@torch.no_grad()
def _forward(model, x: torch.Tensor, chunk: int = 500) -> torch.Tensor:
    model.eval()
    return torch.cat([model(x[i:i + chunk]) for i in range(0, x.shape[0], chunk)]) if len(x) else x


@torch.no_grad()
def evaluate_batch(model, b: Batch, stats: NormStats, dt: float) -> dict[str, float]:
    pred = _forward(model, b.x.to(next(model.parameters()).dtype)).double()
    _, du, ddu = physical_derivatives(pred, stats, dt)
    out = {}
    for key, p, t in (("solutions", pred, b.u), ("d1", stats.apply("du", du), b.du),
                      ("d2", stats.apply("ddu", ddu), b.ddu)):
        p, t = p.numpy(), t.double().numpy()
        out[key] = rlse(p, t)
        out[key + "_per_dof"] = _rlse_per_channel(p, t)
    out["average"] = (out["solutions"] + out["d1"] + out["d2"]) / 3
    return out


def evaluate(model: OperatorModel, ds: Dataset, split: str = "test",
             stats: NormStats | None = None) -> dict[str, float]:
    """rLSE (%) on solutions, first and second derivatives of one split."""
    stats = stats or ds.norm or compute_stats(ds)
    b = make_batch(ds, ds.indices(split), stats, next(model.parameters()).dtype)
    if b.u is None:
        raise ValueError(f"split {split!r} has no ground truth")
    return evaluate_batch(model, b, stats, ds.dt)


@torch.no_grad()
def predict(model: OperatorModel, stats: NormStats, P: np.ndarray, F: np.ndarray, dt: float,
            chunk: int = 500):
    """Physical ``(u, du, ddu)`` predicted for parameter rows ``P`` and loads ``F``."""
    dtype = next(model.parameters()).dtype
    us = []
    for i in range(0, len(P), chunk):
        x = encode_inputs(stats.apply("p", P[i:i + chunk]), stats.apply("f", F[i:i + chunk]))
        us.append(model(torch.as_tensor(x, dtype=dtype)).double().numpy())
    u = stats.invert("u", np.concatenate(us)) if us else np.zeros((0, F.shape[1], model.n_out))
    du, ddu = finite_difference(u, dt)
    return u, du, ddu

"""Ground truth: Newmark integration, time differencing and datasets.

Dataset files
-------------
A dataset directory holds ``manifest.json`` plus one raw blob per array,
little-endian float64, C order:

* ``p.bin``    ``[pair][param]``         all pairs (train, test, virtual)
* ``f.bin``    ``[pair][time][channel]`` all pairs
* ``u.bin``, ``du.bin``, ``ddu.bin``  ``[pair][time][dof]`` labelled pairs only

Pairs are ordered train, then test, then virtual. The manifest records
shapes, SHA-256 of every blob, seeds, grid, names and normalisation stats.
"""
from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from ._seeding import derive_seed
from .system import (ParameterSample, ParameterSpace, SecondOrderSystem, SystemConfig,
                     sample_parameters, system_arrays)

log = logging.getLogger(__name__)

__all__ = [
    "Trajectory",
    "NormStats",
    "Dataset",
    "NormalizedDataset",
    "integrate_newmark",
    "integrate_newmark_batch",
    "finite_difference",
    "build_dataset",
    "normalize",
    "save_dataset",
    "load_dataset",
    "sample_seed",
]

NEWMARK_BETA = 0.25
NEWMARK_GAMMA = 0.5
STD_FLOOR = 1e-12


@dataclass
class Trajectory:
    dt: float
    u: np.ndarray
    du: np.ndarray
    ddu: np.ndarray

    @property
    def n_t(self) -> int:
        return self.u.shape[0]


def integrate_newmark_batch(M, C, K, load, dt, u0=None, v0=None):
    """Average-acceleration Newmark for a batch of linear systems.

    Parameters
    ----------
    M, C, K : (B, n, n) arrays
    load : (B, n_t, n) nodal loads on the time grid
    dt : float
    u0, v0 : (B, n) initial state, zero when omitted

    Returns
    -------
    u, du, ddu : (B, n_t, n) arrays produced by the scheme itself.
    """
    M, C, K, load = (np.asarray(a, dtype=float) for a in (M, C, K, load))
    B, n_t, n = load.shape
    if dt <= 0:
        raise ValueError("dt must be positive")
    beta, gamma = NEWMARK_BETA, NEWMARK_GAMMA
    a0 = 1.0 / (beta * dt**2)
    a1 = gamma / (beta * dt)
    a2 = 1.0 / (beta * dt)
    a3 = 1.0 / (2 * beta) - 1.0
    a4 = gamma / beta - 1.0
    a5 = dt / 2.0 * (gamma / beta - 2.0)
    K_eff = K + a0 * M + a1 * C
    try:
        K_inv = np.linalg.inv(K_eff)
    except np.linalg.LinAlgError as exc:
        raise ValueError("effective stiffness is singular") from exc
    u = np.zeros((B, n_t, n))
    v = np.zeros((B, n_t, n))
    a = np.zeros((B, n_t, n))
    if u0 is not None:
        u[:, 0] = u0
    if v0 is not None:
        v[:, 0] = v0
    rhs0 = load[:, 0] - np.einsum("bij,bj->bi", C, v[:, 0]) - np.einsum("bij,bj->bi", K, u[:, 0])
    a[:, 0] = np.linalg.solve(M, rhs0[..., None])[..., 0]
    mv = lambda A, x: np.einsum("bij,bj->bi", A, x)  # noqa: E731
    for i in range(n_t - 1):
        ui, vi, ai = u[:, i], v[:, i], a[:, i]
        f_eff = (load[:, i + 1] + mv(M, a0 * ui + a2 * vi + a3 * ai)
                 + mv(C, a1 * ui + a4 * vi + a5 * ai))
        un = mv(K_inv, f_eff)
        an = a0 * (un - ui) - a2 * vi - a3 * ai
        u[:, i + 1] = un
        a[:, i + 1] = an
        v[:, i + 1] = vi + dt * ((1 - gamma) * ai + gamma * an)
    return u, v, a


def integrate_newmark(system: SecondOrderSystem, f: np.ndarray, dt: float, T: float,
                      u0=None, v0=None) -> Trajectory:
    """Integrate one system under excitation ``f`` of shape (n_t, channels)."""
    f = np.asarray(f, dtype=float)
    if f.ndim == 1:
        f = f[:, None]
    n_t = int(round(T / dt)) + 1
    if f.shape[0] != n_t:
        raise ValueError(f"excitation has {f.shape[0]} steps, grid needs {n_t}")
    load = f @ system.force_map.T
    u, du, ddu = integrate_newmark_batch(
        system.M[None], system.C[None], system.K[None], load[None], dt,
        None if u0 is None else np.asarray(u0, dtype=float)[None],
        None if v0 is None else np.asarray(v0, dtype=float)[None])
    return Trajectory(dt=dt, u=u[0], du=du[0], ddu=ddu[0])


def finite_difference(u, dt: float):
    """First and second time derivatives of ``u`` (..., n_t, n) by differencing.

    Central differences inside, second-order one-sided stencils at both ends.
    Works on numpy arrays and torch tensors alike (the training losses
    differentiate through it).
    """
    n_t = u.shape[-2]
    if n_t < 3:
        raise ValueError("finite differences need at least 3 time steps")
    if isinstance(u, np.ndarray):
        cat = np.concatenate
    else:
        import torch
        cat = torch.cat
    u0, u1, u2 = u[..., 0:1, :], u[..., 1:2, :], u[..., 2:3, :]
    e0, e1, e2 = u[..., -1:, :], u[..., -2:-1, :], u[..., -3:-2, :]
    du = cat([(-3 * u0 + 4 * u1 - u2) / (2 * dt),
              (u[..., 2:, :] - u[..., :-2, :]) / (2 * dt),
              (3 * e0 - 4 * e1 + e2) / (2 * dt)], -2)
    mid = (u[..., 2:, :] - 2 * u[..., 1:-1, :] + u[..., :-2, :]) / dt**2
    if n_t >= 4:
        u3, e3 = u[..., 3:4, :], u[..., -4:-3, :]
        first = (2 * u0 - 5 * u1 + 4 * u2 - u3) / dt**2
        last = (2 * e0 - 5 * e1 + 4 * e2 - e3) / dt**2
    else:
        first = last = mid
    return du, cat([first, mid, last], -2)


# -- normalisation --------------------------------------------------------------

@dataclass
class NormStats:
    """Per-channel mean/std for ``p``, ``f``, ``u``, ``du`` and ``ddu``."""

    mean: dict[str, np.ndarray]
    std: dict[str, np.ndarray]

    def apply(self, key: str, x):
        return (x - self._as(key, "mean", x)) / self._as(key, "std", x)

    def invert(self, key: str, x):
        return x * self._as(key, "std", x) + self._as(key, "mean", x)

    def _as(self, key, which, like):
        arr = getattr(self, which)[key]
        if isinstance(like, np.ndarray) or np.isscalar(like):
            return arr
        import torch
        return torch.as_tensor(arr, dtype=like.dtype)

    def to_dict(self) -> dict[str, Any]:
        return {k: {"mean": self.mean[k].tolist(), "std": self.std[k].tolist()} for k in sorted(self.mean)}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "NormStats":
        return cls(mean={k: np.asarray(v["mean"], dtype=float) for k, v in d.items()},
                   std={k: np.asarray(v["std"], dtype=float) for k, v in d.items()})

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def _channel_stats(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    flat = x.reshape(-1, x.shape[-1])
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    return mean, np.where(std < STD_FLOOR, 1.0, std)


# -- datasets -----------------------------------------------------------------------

@dataclass
class Dataset:
    system: SystemConfig
    space: ParameterSpace
    master_seed: int
    n_train: int
    n_test: int
    n_virtual: int
    P: np.ndarray
    F: np.ndarray
    U: np.ndarray
    dU: np.ndarray
    ddU: np.ndarray
    labels: list[str] = field(default_factory=list)
    norm: NormStats | None = None

    @property
    def dt(self) -> float:
        return self.space.dt

    @property
    def T(self) -> float:
        return self.space.T

    @property
    def n_t(self) -> int:
        return self.space.n_t

    @property
    def n_dof(self) -> int:
        return len(self.labels)

    @property
    def n_pairs(self) -> int:
        return self.n_train + self.n_test + self.n_virtual

    @property
    def split(self) -> list[str]:
        return ["train"] * self.n_train + ["test"] * self.n_test + ["virtual"] * self.n_virtual

    def indices(self, split: str) -> np.ndarray:
        start = {"train": 0, "test": self.n_train, "virtual": self.n_train + self.n_test}[split]
        count = {"train": self.n_train, "test": self.n_test, "virtual": self.n_virtual}[split]
        return np.arange(start, start + count)

    def sample(self, i: int) -> ParameterSample:
        return ParameterSample(p=self.P[i], f=self.F[i], names=self.space.names, dt=self.dt,
                               seed=sample_seed(self.master_seed, i))

    def trajectory(self, i: int) -> Trajectory | None:
        if i >= self.n_train + self.n_test:
            return None
        return Trajectory(dt=self.dt, u=self.U[i], du=self.dU[i], ddu=self.ddU[i])

    def pairs(self):
        """``(ParameterSample, Trajectory | None, split)`` for every pair."""
        for i, tag in enumerate(self.split):
            yield self.sample(i), self.trajectory(i), tag

    def system_arrays(self, idx: np.ndarray | None = None):
        idx = np.arange(self.n_pairs) if idx is None else np.asarray(idx)
        return system_arrays(self.system, self.P[idx], self.space.names)


def sample_seed(master_seed: int, index: int) -> int:
    return derive_seed(master_seed, index)


def _integrate_chunk(system, space, P, F):
    M, C, K, Fm = system_arrays(system, P, space.names)
    load = np.einsum("bnc,btc->btn", Fm, F)
    return integrate_newmark_batch(M, C, K, load, space.dt)


def build_dataset(system: SystemConfig, space: ParameterSpace, n_train: int, n_test: int,
                  n_virtual: int, master_seed: int, jobs: int = 1, chunk: int = 256) -> Dataset:
    """Sample, integrate (labelled pairs only) and assemble a dataset.

    Sample ``i`` always uses seed ``derive_seed(master_seed, i)``, and chunks
    are reassembled in index order whatever the worker count.
    """
    if min(n_train, n_test, n_virtual) < 0:
        raise ValueError("split sizes must be nonnegative")
    if space.excitation.channels != system.n_channels:
        raise ValueError(f"space has {space.excitation.channels} excitation channels, "
                         f"system expects {system.n_channels}")
    missing = system.parameter_names() - set(space.names)
    if missing:
        raise ValueError(f"system parameters missing from the space: {sorted(missing)}")
    n = n_train + n_test + n_virtual
    samples = [sample_parameters(space, sample_seed(master_seed, i)) for i in range(n)]
    P = np.array([s.p for s in samples], dtype=float).reshape(n, len(space.params))
    F = np.array([s.f for s in samples], dtype=float).reshape(n, space.n_t, space.excitation.channels)
    labels = _labels(system)
    n_lab = n_train + n_test
    shape = (n_lab, space.n_t, len(labels))
    U, dU, ddU = np.zeros(shape), np.zeros(shape), np.zeros(shape)
    bounds = [(s, min(s + chunk, n_lab)) for s in range(0, n_lab, chunk)]
    work = lambda b: _integrate_chunk(system, space, P[b[0]:b[1]], F[b[0]:b[1]])  # noqa: E731
    if jobs > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, bounds))
    else:
        results = [work(b) for b in bounds]
    for (s, e), (u, du, ddu) in zip(bounds, results):
        U[s:e], dU[s:e], ddU[s:e] = u, du, ddu
    ds = Dataset(system=system, space=space, master_seed=master_seed, n_train=n_train,
                 n_test=n_test, n_virtual=n_virtual, P=P, F=F, U=U, dU=dU, ddU=ddU, labels=labels)
    if n_train > 0:
        ds.norm = compute_stats(ds)
    return ds


def _labels(system: SystemConfig) -> list[str]:
    from .system import _layout
    return list(_layout(system).labels)


def compute_stats(ds: Dataset) -> NormStats:
    if ds.n_train == 0:
        raise ValueError("normalisation needs a non-empty training split")
    tr = ds.indices("train")
    mean, std = {}, {}
    if ds.P.shape[1]:
        mean["p"] = ds.P[tr].mean(axis=0)
        s = ds.P[tr].std(axis=0)
        std["p"] = np.where(s < STD_FLOOR, 1.0, s)
    else:
        mean["p"], std["p"] = np.zeros(0), np.zeros(0)
    for key, arr in (("f", ds.F[tr]), ("u", ds.U[tr]), ("du", ds.dU[tr]), ("ddu", ds.ddU[tr])):
        mean[key], std[key] = _channel_stats(arr)
    return NormStats(mean=mean, std=std)


@dataclass
class NormalizedDataset:
    p: np.ndarray
    f: np.ndarray
    u: np.ndarray
    du: np.ndarray
    ddu: np.ndarray
    stats: NormStats

    def denormalize(self, key: str, x: np.ndarray) -> np.ndarray:
        return self.stats.invert(key, x)


def normalize(ds: Dataset) -> tuple[NormalizedDataset, NormStats]:
    """Standardise every channel with statistics from the training split."""
    stats = compute_stats(ds)
    view = NormalizedDataset(p=stats.apply("p", ds.P), f=stats.apply("f", ds.F),
                             u=stats.apply("u", ds.U), du=stats.apply("du", ds.dU),
                             ddu=stats.apply("ddu", ds.ddU), stats=stats)
    return view, stats


# -- persistence ----------------------------------------------------------------------

_ARRAYS = ("p", "f", "u", "du", "ddu")


def _blob(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def _digest_manifest(manifest: dict) -> str:
    body = {k: v for k, v in manifest.items() if k != "hash"}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


def save_dataset(ds: Dataset, path: str | Path) -> str:
    """Write ``ds`` under directory ``path``; returns the dataset hash."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    arrays = dict(zip(_ARRAYS, (ds.P, ds.F, ds.U, ds.dU, ds.ddU)))
    entries = {}
    for name, arr in arrays.items():
        data = _blob(arr)
        (path / f"{name}.bin").write_bytes(data)
        entries[name] = {"file": f"{name}.bin", "shape": list(arr.shape), "dtype": "<f8",
                         "order": "C", "sha256": hashlib.sha256(data).hexdigest()}
    manifest = {
        "format": "pinocde-dataset/1",
        "dt": ds.dt, "T": ds.T, "n_t": ds.n_t,
        "n_train": ds.n_train, "n_test": ds.n_test, "n_virtual": ds.n_virtual,
        "master_seed": ds.master_seed,
        "param_names": ds.space.names,
        "channel_names": [f"ch{j}" for j in range(ds.F.shape[2])],
        "dof_labels": ds.labels,
        "system": ds.system.model_dump(mode="json"),
        "space": ds.space.model_dump(mode="json"),
        "norm": ds.norm.to_dict() if ds.norm is not None else None,
        "arrays": entries,
    }
    manifest["hash"] = _digest_manifest(manifest)
    (path / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return manifest["hash"]


def load_dataset(path: str | Path) -> tuple[Dataset, str]:
    """Read a dataset directory; returns ``(dataset, hash)``."""
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    if manifest.get("format") != "pinocde-dataset/1":
        raise ValueError(f"{path} is not a dataset directory")
    arrays = {}
    for name, e in manifest["arrays"].items():
        data = (path / e["file"]).read_bytes()
        if hashlib.sha256(data).hexdigest() != e["sha256"]:
            raise ValueError(f"checksum mismatch in {e['file']}")
        arrays[name] = np.frombuffer(data, dtype="<f8").reshape(e["shape"]).astype(float)
    ds = Dataset(system=SystemConfig.model_validate(manifest["system"]),
                 space=ParameterSpace.model_validate(manifest["space"]),
                 master_seed=manifest["master_seed"], n_train=manifest["n_train"],
                 n_test=manifest["n_test"], n_virtual=manifest["n_virtual"],
                 P=arrays["p"], F=arrays["f"], U=arrays["u"], dU=arrays["du"], ddU=arrays["ddu"],
                 labels=list(manifest["dof_labels"]),
                 norm=NormStats.from_dict(manifest["norm"]) if manifest["norm"] else None)
    return ds, manifest["hash"]

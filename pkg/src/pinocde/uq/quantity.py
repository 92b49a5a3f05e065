"""Monitored quantities and the trajectory providers that evaluate them.

A quantity selector is ``"<kind>:<ref>"`` with ``kind`` in ``u``, ``du``,
``ddu`` and ``ref`` either a DOF label (``a1.z``, ``beam.q2``) or a point
on a flexible body (``beam@0.5``, fraction of the length), whose value is
recovered from the modal coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from ..oracle import NormStats, finite_difference, integrate_newmark_batch
from ..system import ParameterSpace, SystemConfig, _layout, system_arrays

__all__ = ["Quantity", "parse_quantity", "Provider", "oracle_provider", "surrogate_provider"]

_KINDS = ("u", "du", "ddu")


@dataclass(frozen=True)
class Quantity:
    kind: str
    ref: str
    vector: np.ndarray

    def extract(self, u, du, ddu, dt: float):
        """Quantity history and its time rate, each (N, n_t)."""
        states = [u, du, ddu]
        k = _KINDS.index(self.kind)
        x = states[k] @ self.vector
        if k < 2:
            rate = states[k + 1] @ self.vector
        else:
            rate = finite_difference(x[..., None], dt)[0][..., 0]
        return x, rate


def parse_quantity(config: SystemConfig, selector: str) -> Quantity:
    kind, sep, ref = selector.partition(":")
    if not sep or kind not in _KINDS or not ref:
        raise ValueError(f"bad quantity selector {selector!r}; expected '<u|du|ddu>:<dof or body@x>'")
    lay = _layout(config)
    if ref in lay.labels:
        v = np.zeros(lay.n_dof)
        v[lay.labels.index(ref)] = 1.0
        return Quantity(kind, ref, v)
    if "@" not in ref:
        raise ValueError(f"unknown DOF {ref!r}")
    vecs = lay.vectors(ref, None)
    return Quantity(kind, ref, next(iter(vecs.values())))


class Provider(Protocol):
    def __call__(self, P: np.ndarray, F: np.ndarray) -> tuple[np.ndarray, np.ndarray]: ...


def oracle_provider(config: SystemConfig, space: ParameterSpace, quantity: Quantity) -> Callable:
    """Reference integrator evaluating ``quantity`` for parameter rows ``P`` and loads ``F``."""
    def run(P, F):
        M, C, K, Fm = system_arrays(config, P, space.names)
        load = np.einsum("bnc,btc->btn", Fm, F)
        u, du, ddu = integrate_newmark_batch(M, C, K, load, space.dt)
        return quantity.extract(u, du, ddu, space.dt)
    return run


def surrogate_provider(model, stats: NormStats, space: ParameterSpace, quantity: Quantity) -> Callable:
    """Trained operator plus time differencing in place of the integrator."""
    from ..pino.train import predict

    def run(P, F):
        u, du, ddu = predict(model, stats, P, F, space.dt)
        return quantity.extract(u, du, ddu, space.dt)
    return run

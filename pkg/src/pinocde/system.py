"""Coupled second-order systems, parameter spaces and stochastic excitation.

A system is described once as a template (:class:`SystemConfig`) whose
numeric fields may name a physical parameter instead of holding a number.
:func:`build_system` resolves the names against a parameter sample and
assembles ``M``, ``C``, ``K`` and the excitation map, so every sample gets its
own matrices.
"""
from __future__ import annotations

import csv
import functools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Mapping, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from . import modal
from ._seeding import derive_seed

__all__ = [
    "PointMass",
    "FlexibleBodyConfig",
    "Connection",
    "Load",
    "SystemConfig",
    "SecondOrderSystem",
    "ParamSpec",
    "ExcitationSpec",
    "ParameterSpace",
    "ParameterSample",
    "build_system",
    "system_arrays",
    "sample_parameters",
    "generate_excitation",
    "excitation_psd",
    "residual",
    "write_excitation_csv",
]

Value = Union[float, str]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class PointMass(_Strict):
    name: str
    mass: Value
    directions: tuple[str, ...] = ("z",)


class FlexibleBodyConfig(_Strict):
    """A flexible component reduced to ``n_modes`` modal DOFs.

    ``shear_beam`` is discretised with linear elements and reduced through the
    eigen solve; ``euler_beam`` uses the closed-form pinned-pinned modes, with
    ``stiffness`` read as EI.
    """

    name: str
    kind: Literal["shear_beam", "euler_beam"] = "shear_beam"
    length: float = Field(gt=0)
    mass_per_length: float = Field(gt=0)
    stiffness: float = Field(gt=0)
    n_modes: int = Field(ge=1)
    n_elements: int = Field(default=20, ge=2)
    alpha: float = Field(default=0.0, ge=0)
    beta: float = Field(default=0.0, ge=0)
    direction: str = "z"


class Connection(_Strict):
    """Spring/dashpot between two endpoints.

    Endpoints are ``"ground"``, a point-mass name, or ``"<body>@<s>"`` with
    ``s`` the position along the body as a fraction of its length.
    """

    a: str
    b: str = "ground"
    k: Value = 0.0
    c: Value = 0.0
    direction: str | None = None


class Load(_Strict):
    channel: int = Field(ge=0)
    at: str
    direction: str | None = None
    scale: Value = 1.0


class SystemConfig(_Strict):
    masses: tuple[PointMass, ...] = ()
    bodies: tuple[FlexibleBodyConfig, ...] = ()
    connections: tuple[Connection, ...] = ()
    loads: tuple[Load, ...] = ()

    @property
    def n_channels(self) -> int:
        return 1 + max((ld.channel for ld in self.loads), default=-1)

    def parameter_names(self) -> set[str]:
        names = set()
        for m in self.masses:
            if isinstance(m.mass, str):
                names.add(m.mass)
        for c in self.connections:
            names.update(v for v in (c.k, c.c) if isinstance(v, str))
        for ld in self.loads:
            if isinstance(ld.scale, str):
                names.add(ld.scale)
        return names


@dataclass
class SecondOrderSystem:
    """``M u'' + C u' + K u = force_map @ f(t)``."""

    M: np.ndarray
    C: np.ndarray
    K: np.ndarray
    force_map: np.ndarray
    labels: list[str] = field(default_factory=list)

    @property
    def n_dof(self) -> int:
        return self.M.shape[0]

    @property
    def n_channels(self) -> int:
        return self.force_map.shape[1]


# -- assembly -----------------------------------------------------------------

def _resolve(v: Value, params: Mapping[str, float]) -> float:
    if isinstance(v, str):
        if v not in params:
            raise KeyError(f"parameter {v!r} is not defined")
        return float(params[v])
    return float(v)


@functools.lru_cache(maxsize=64)
def _reduced_body(body: FlexibleBodyConfig) -> modal.ReducedFlexibleBody:
    if body.kind == "shear_beam":
        if body.n_modes > body.n_elements - 1:
            raise ValueError(f"body {body.name!r}: more modes than interior nodes")
        M, K, coords = modal.shear_beam_matrices(body.length, body.mass_per_length,
                                                 body.stiffness, body.n_elements)
        basis = modal.solve_eigen(M, K, body.n_modes)
        return modal.reduce(M, K, basis, body.alpha, body.beta, coords=coords)
    # analytic Euler beam sampled densely enough for linear interpolation
    x = np.linspace(0.0, body.length, 20 * body.n_modes + 1)
    table = modal.euler_beam_modes(body.mass_per_length, body.length, body.n_modes, x)
    Omega = modal.euler_beam_stiffness(body.mass_per_length, body.length, body.stiffness, body.n_modes)
    mu = np.ones(body.n_modes)
    return modal.ReducedFlexibleBody(mu=mu, damping=body.alpha * mu + body.beta * Omega, Omega=Omega,
                                     U=table.values, alpha=body.alpha, beta=body.beta, coords=x)


class _Layout:
    """DOF numbering of a :class:`SystemConfig`."""

    def __init__(self, config: SystemConfig):
        self.labels: list[str] = []
        self.mass_dofs: dict[str, dict[str, int]] = {}
        self.body_slices: dict[str, tuple[slice, str]] = {}
        for m in config.masses:
            if m.name in self.mass_dofs or m.name == "ground" or "@" in m.name:
                raise ValueError(f"invalid or duplicate mass name {m.name!r}")
            if not m.directions or len(set(m.directions)) != len(m.directions):
                raise ValueError(f"mass {m.name!r}: directions must be unique and non-empty")
            self.mass_dofs[m.name] = {}
            for d in m.directions:
                self.mass_dofs[m.name][d] = len(self.labels)
                self.labels.append(f"{m.name}.{d}")
        self.bodies = {}
        for b in config.bodies:
            if b.name in self.mass_dofs or b.name in self.body_slices:
                raise ValueError(f"duplicate component name {b.name!r}")
            start = len(self.labels)
            self.labels.extend(f"{b.name}.q{i + 1}" for i in range(b.n_modes))
            self.body_slices[b.name] = (slice(start, start + b.n_modes), b.direction)
            self.bodies[b.name] = (b, _reduced_body(b))

    @property
    def n_dof(self) -> int:
        return len(self.labels)

    def vectors(self, ref: str, direction: str | None) -> dict[str, np.ndarray]:
        """Displacement-extraction vectors of endpoint ``ref``, keyed by direction."""
        if ref == "ground":
            return {}
        if "@" in ref:
            name, pos = ref.split("@", 1)
            if name not in self.bodies:
                raise ValueError(f"unknown body {name!r} in {ref!r}")
            body, red = self.bodies[name]
            sl, bdir = self.body_slices[name]
            if direction is not None and direction != bdir:
                return {}
            v = np.zeros(self.n_dof)
            v[sl] = red.shape_at(float(pos) * body.length)
            return {bdir: v}
        if ref not in self.mass_dofs:
            raise ValueError(f"connection references unknown DOF owner {ref!r}")
        out = {}
        for d, i in self.mass_dofs[ref].items():
            if direction is None or direction == d:
                v = np.zeros(self.n_dof)
                v[i] = 1.0
                out[d] = v
        if direction is not None and not out:
            raise ValueError(f"{ref!r} has no direction {direction!r}")
        return out


@functools.lru_cache(maxsize=16)
def _layout(config: SystemConfig) -> _Layout:
    return _Layout(config)


def build_system(config: SystemConfig, params: Mapping[str, float] | None = None) -> SecondOrderSystem:
    """Assemble ``M``, ``C``, ``K`` and the excitation map for one parameter set."""
    params = params or {}
    lay = _layout(config)
    n = lay.n_dof
    M = np.zeros((n, n))
    C = np.zeros((n, n))
    K = np.zeros((n, n))
    for m in config.masses:
        mass = _resolve(m.mass, params)
        if not mass > 0:
            raise ValueError(f"mass {m.name!r} must be positive, got {mass}")
        for i in lay.mass_dofs[m.name].values():
            M[i, i] = mass
    for name, (body, red) in lay.bodies.items():
        sl, _ = lay.body_slices[name]
        M[sl, sl] = np.diag(red.mu)
        C[sl, sl] = np.diag(red.damping)
        K[sl, sl] = np.diag(red.Omega)
    for con in config.connections:
        k = _resolve(con.k, params)
        c = _resolve(con.c, params)
        va = lay.vectors(con.a, con.direction)
        vb = lay.vectors(con.b, con.direction)
        dirs = set(va) | set(vb)
        if con.a != "ground" and con.b != "ground":
            dirs = set(va) & set(vb)
            if not dirs:
                raise ValueError(f"connection {con.a}-{con.b} shares no direction")
        for d in sorted(dirs):
            rel = va.get(d, 0.0) - vb.get(d, 0.0)
            K += k * np.outer(rel, rel)
            C += c * np.outer(rel, rel)
    F = np.zeros((n, config.n_channels))
    for ld in config.loads:
        vecs = lay.vectors(ld.at, ld.direction)
        if not vecs:
            raise ValueError(f"load on {ld.at!r} hits no DOF")
        if len(vecs) > 1:
            raise ValueError(f"load on {ld.at!r} needs a direction")
        F[:, ld.channel] += _resolve(ld.scale, params) * next(iter(vecs.values()))
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise ValueError("assembled mass matrix is not positive definite") from exc
    return SecondOrderSystem(M=M, C=C, K=K, force_map=F, labels=list(lay.labels))


def system_arrays(config: SystemConfig, P: np.ndarray, names: Sequence[str]):
    """Stacked ``(M, C, K, force_map)`` for every row of the parameter matrix ``P``."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    systems = [build_system(config, dict(zip(names, row))) for row in P]
    return tuple(np.stack([getattr(s, a) for s in systems]) for a in ("M", "C", "K", "force_map"))


# -- parameter spaces -----------------------------------------------------------

class ParamSpec(_Strict):
    name: str
    dist: Literal["uniform", "fixed"] = "uniform"
    lo: float | None = None
    hi: float | None = None
    value: float | None = None

    @model_validator(mode="after")
    def _check(self):
        if self.dist == "uniform":
            if self.lo is None or self.hi is None or not self.lo < self.hi:
                raise ValueError(f"parameter {self.name!r}: uniform needs lo < hi")
        elif self.value is None:
            raise ValueError(f"parameter {self.name!r}: fixed needs a value")
        return self

    @property
    def median(self) -> float:
        return self.value if self.dist == "fixed" else 0.5 * (self.lo + self.hi)

    def ppf(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.dist == "fixed":
            return np.full_like(u, self.value)
        return self.lo + (self.hi - self.lo) * u


class ExcitationSpec(_Strict):
    """Stochastic (or deterministic harmonic) load description.

    ``psd_params`` keys: ``intensity`` (one-sided PSD level, units^2/Hz) for
    both spectral kinds, plus ``omega_g`` [rad/s] and ``zeta_g`` for the
    Kanai-Tajimi shape of ``spectrum-with-random-phase``. The ``harmonic``
    kind reads ``amplitude``, ``frequency`` [Hz] and optional ``phase``.
    """

    kind: Literal["band-limited-noise", "spectrum-with-random-phase", "harmonic"] = "band-limited-noise"
    psd_params: dict[str, float] = Field(default_factory=lambda: {"intensity": 1.0})
    band: tuple[float, float] = (0.0, 1.0)
    channels: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _check(self):
        lo, hi = self.band
        if self.kind != "harmonic" and not 0 <= lo < hi:
            raise ValueError("band must satisfy 0 <= f_lo < f_hi")
        if self.kind != "harmonic" and self.psd_params.get("intensity", 0.0) < 0:
            raise ValueError("PSD intensity must be nonnegative")
        if self.kind == "spectrum-with-random-phase":
            for key in ("omega_g", "zeta_g"):
                if key not in self.psd_params:
                    raise ValueError(f"Kanai-Tajimi spectrum needs {key!r}")
        if self.kind == "harmonic":
            for key in ("amplitude", "frequency"):
                if key not in self.psd_params:
                    raise ValueError(f"harmonic excitation needs {key!r}")
        return self


class ParameterSpace(_Strict):
    params: list[ParamSpec] = Field(default_factory=list)
    excitation: ExcitationSpec = Field(default_factory=ExcitationSpec)
    dt: float = Field(gt=0)
    T: float = Field(gt=0)

    @model_validator(mode="after")
    def _check(self):
        names = self.names
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")
        if self.excitation.kind != "harmonic" and self.excitation.band[1] >= 0.5 / self.dt:
            raise ValueError("excitation band reaches the Nyquist frequency of the time grid")
        return self

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.params]

    @property
    def n_t(self) -> int:
        return int(round(self.T / self.dt)) + 1

    @property
    def dims(self) -> int:
        return len(self.params) + self.excitation.channels

    @property
    def random_params(self) -> list[ParamSpec]:
        return [p for p in self.params if p.dist == "uniform"]

    def time_grid(self) -> np.ndarray:
        return np.arange(self.n_t) * self.dt


@dataclass
class ParameterSample:
    p: np.ndarray
    f: np.ndarray
    names: list[str]
    dt: float
    seed: int | None = None

    @property
    def params(self) -> dict[str, float]:
        return dict(zip(self.names, map(float, self.p)))


def sample_parameters(space: ParameterSpace, seed: int) -> ParameterSample:
    """Draw one parameter configuration and its excitation."""
    rng = np.random.default_rng(derive_seed(seed, 0))
    p = np.array([spec.ppf(rng.uniform()) for spec in space.params], dtype=float)
    f = generate_excitation(space.excitation, space.dt, space.T, derive_seed(seed, 1))
    return ParameterSample(p=p, f=f, names=space.names, dt=space.dt, seed=seed)


def excitation_psd(spec: ExcitationSpec, freqs: np.ndarray) -> np.ndarray:
    """One-sided target PSD at ``freqs`` [Hz], zero outside the band."""
    freqs = np.asarray(freqs, dtype=float)
    s0 = spec.psd_params.get("intensity", 1.0)
    if spec.kind == "band-limited-noise":
        S = np.full_like(freqs, s0)
    elif spec.kind == "spectrum-with-random-phase":
        wg = spec.psd_params["omega_g"]
        zg = spec.psd_params["zeta_g"]
        w = 2 * np.pi * freqs
        S = s0 * (wg**4 + 4 * zg**2 * wg**2 * w**2) / ((wg**2 - w**2) ** 2 + 4 * zg**2 * wg**2 * w**2)
    else:
        raise ValueError("harmonic excitation has no PSD")
    lo, hi = spec.band
    return np.where((freqs >= lo) & (freqs <= hi), S, 0.0)


def generate_excitation(spec: ExcitationSpec, dt: float, T: float, seed: int) -> np.ndarray:
    """Synthesize an ``(n_t, channels)`` load history.

    Spectral representation with one random phase per bin: bin spacing is
    ``1/T``, bin amplitude ``sqrt(2 S(f) df)``, phases uniform on [0, 2pi).
    The DC bin is zero and the record is periodic over ``T``.
    """
    n = int(round(T / dt))
    t = np.arange(n + 1) * dt
    if spec.kind == "harmonic":
        a = spec.psd_params["amplitude"]
        fr = spec.psd_params["frequency"]
        ph = spec.psd_params.get("phase", 0.0)
        return np.repeat((a * np.sin(2 * np.pi * fr * t + ph))[:, None], spec.channels, axis=1)
    if spec.band[1] >= 0.5 / dt:
        raise ValueError(f"band upper edge {spec.band[1]} Hz reaches Nyquist {0.5 / dt} Hz")
    freqs = np.fft.rfftfreq(n, dt)
    df = 1.0 / (n * dt)
    S = excitation_psd(spec, freqs)
    S[0] = 0.0
    amp = np.sqrt(2.0 * S * df)
    rng = np.random.default_rng(seed)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(spec.channels, len(freqs)))
    X = 0.5 * n * amp * np.exp(1j * phases)
    x = np.fft.irfft(X, n=n, axis=-1)
    return np.concatenate([x, x[:, :1]], axis=1).T.copy()


def residual(system: SecondOrderSystem, sample: ParameterSample, u: np.ndarray,
             du: np.ndarray, ddu: np.ndarray) -> np.ndarray:
    """Equation residual ``M u'' + C u' + K u - force_map f`` per time step."""
    u, du, ddu = (np.asarray(a, dtype=float) for a in (u, du, ddu))
    shape = (sample.f.shape[0], system.n_dof)
    if u.shape != shape or du.shape != shape or ddu.shape != shape:
        raise ValueError(f"state arrays must have shape {shape}")
    if sample.f.shape[1] != system.n_channels:
        raise ValueError("excitation channels do not match the force map")
    return ddu @ system.M.T + du @ system.C.T + u @ system.K.T - sample.f @ system.force_map.T


def write_excitation_csv(path: str | Path, f: np.ndarray, dt: float) -> None:
    f = np.atleast_2d(np.asarray(f, dtype=float).T).T
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time"] + [f"ch{j}" for j in range(f.shape[1])])
        for i, row in enumerate(f):
            w.writerow([repr(i * dt)] + [repr(float(v)) for v in row])


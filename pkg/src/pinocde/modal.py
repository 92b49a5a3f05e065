"""Mode superposition: eigen solve, modal reduction and field recovery.

Flexible bodies are reduced to a handful of diagonal modal ODEs

    mu_i q_i'' + (alpha mu_i + beta Omega_i) q_i' + Omega_i q_i = U_i^T f(t)

and any physical field is rebuilt as ``sum_i phi_i(x) q_i(t)``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import linalg

__all__ = [
    "ModalBasis",
    "ReducedFlexibleBody",
    "ModeShapeTable",
    "solve_eigen",
    "euler_beam_modes",
    "reduce",
    "effective_mass",
    "recover_field",
    "shear_beam_matrices",
]


@dataclass
class ModalBasis:
    """Mass-normalised eigenmodes of ``K u = omega^2 M u``.

    ``gamma`` and ``m_eff_fraction`` refer to the unit-displacement vector
    used when the basis was built (all ones unless stated otherwise).
    """

    U: np.ndarray
    omega: np.ndarray
    mu: np.ndarray
    Omega: np.ndarray
    gamma: np.ndarray
    m_eff_fraction: float

    @property
    def n_modes(self) -> int:
        return self.U.shape[1]


@dataclass
class ReducedFlexibleBody:
    """Diagonal modal ODE system of one flexible component."""

    mu: np.ndarray
    damping: np.ndarray
    Omega: np.ndarray
    U: np.ndarray
    alpha: float
    beta: float
    coords: np.ndarray | None = None

    @property
    def n_modes(self) -> int:
        return len(self.Omega)

    def modal_force(self, f: np.ndarray) -> np.ndarray:
        """Project nodal loads ``f`` (..., n_dof) onto the modes."""
        return np.asarray(f) @ self.U

    def shape_at(self, x: float) -> np.ndarray:
        """Mode-shape row at coordinate ``x`` by linear interpolation between nodes."""
        if self.coords is None:
            raise ValueError("body has no nodal coordinates")
        if not self.coords[0] - 1e-12 <= x <= self.coords[-1] + 1e-12:
            raise ValueError(f"x={x} outside body span [{self.coords[0]}, {self.coords[-1]}]")
        return np.array([np.interp(x, self.coords, self.U[:, i]) for i in range(self.n_modes)])


@dataclass
class ModeShapeTable:
    points: np.ndarray
    values: np.ndarray
    provenance: str = "discrete"
    axis_names: list[str] = field(default_factory=lambda: ["x"])

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim == 1:
            self.points = self.points[:, None]
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[0] != self.points.shape[0]:
            raise ValueError("mode-shape rows must match points")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("mode-shape table contains non-finite values")
        if self.provenance not in ("analytic", "discrete"):
            raise ValueError(f"unknown provenance {self.provenance!r}")

    @property
    def n_modes(self) -> int:
        return self.values.shape[1]

    def to_csv(self, path: str | Path) -> None:
        axes = list(self.axis_names)[: self.points.shape[1]]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(axes + [f"mode_{i + 1}" for i in range(self.n_modes)])
            for pt, row in zip(self.points, self.values):
                w.writerow([repr(float(v)) for v in pt] + [repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path: str | Path, provenance: str = "discrete") -> "ModeShapeTable":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        axes = [h for h in header if h in ("x", "y", "z")]
        n_ax = len(axes)
        if n_ax == 0 or header[:n_ax] != axes:
            raise ValueError("mode-shape CSV must start with x[, y, z] columns")
        if not all(h.startswith("mode_") for h in header[n_ax:]):
            raise ValueError("mode columns must be named mode_1..mode_n")
        data = np.array([[float(v) for v in r] for r in body if r], dtype=float).reshape(-1, len(header))
        return cls(data[:, :n_ax], data[:, n_ax:], provenance=provenance, axis_names=axes)


def solve_eigen(M: np.ndarray, K: np.ndarray, n: int, D: np.ndarray | None = None) -> ModalBasis:
    """Lowest ``n`` eigenpairs of the generalised problem ``K u = w^2 M u``.

    The problem is made standard with the Cholesky factor ``M = L L^T`` and
    solved with LAPACK's symmetric tridiagonal eigensolver.
    """
    M = np.asarray(M, dtype=float)
    K = np.asarray(K, dtype=float)
    dim = M.shape[0]
    if M.shape != (dim, dim) or K.shape != (dim, dim):
        raise ValueError("M and K must be square and of equal size")
    if not 1 <= n <= dim:
        raise ValueError(f"requested {n} modes from a {dim}-DOF model")
    try:
        L = linalg.cholesky(M, lower=True)
    except linalg.LinAlgError as exc:
        raise ValueError("mass matrix is not positive definite") from exc
    Linv_K = linalg.solve_triangular(L, K, lower=True)
    A = linalg.solve_triangular(L, Linv_K.T, lower=True)
    A = 0.5 * (A + A.T)
    lam, V = linalg.eigh(A, subset_by_index=[0, n - 1])
    U = linalg.solve_triangular(L.T, V, lower=False)
    # sign convention: largest-magnitude entry of each mode is positive
    idx = np.argmax(np.abs(U), axis=0)
    U = U * np.sign(U[idx, np.arange(n)])
    lam = np.clip(lam, 0.0, None)
    D = np.ones(dim) if D is None else np.asarray(D, dtype=float)
    gamma = U.T @ M @ D
    frac = float(np.sum(gamma**2) / (D @ M @ D))
    return ModalBasis(U=U, omega=np.sqrt(lam), mu=np.ones(n), Omega=lam, gamma=gamma, m_eff_fraction=frac)


def euler_beam_modes(m_r: float, l: float, k_max: int, x: Sequence[float]) -> ModeShapeTable:
    """Analytic mass-normalised modes of a pinned-pinned Euler beam."""
    if m_r <= 0 or l <= 0:
        raise ValueError("mass per length and span must be positive")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(x > l):
        raise ValueError("coordinates outside the beam span")
    k = np.arange(1, k_max + 1)
    vals = np.sqrt(2.0 / (m_r * l)) * np.sin(np.outer(x, k) * np.pi / l)
    # sin(k*pi) is not exactly zero in floating point
    vals[np.isclose(x, l, rtol=0, atol=1e-15 * l)] = 0.0
    return ModeShapeTable(x[:, None], vals, provenance="analytic")


def euler_beam_stiffness(m_r: float, l: float, EI: float, k_max: int) -> np.ndarray:
    """Modal stiffnesses ``Omega_k = (k pi / l)^4 EI / m_r`` of the analytic beam."""
    k = np.arange(1, k_max + 1)
    return (k * np.pi / l) ** 4 * EI / m_r


def shear_beam_matrices(length: float, mass_per_length: float, rigidity: float, n_elements: int):
    """Consistent-mass FE matrices of a pinned-pinned shear beam (taut string).

    Returns ``(M, K, coords)`` for the interior nodes; ``coords`` includes both
    supports.
    """
    if n_elements < 2:
        raise ValueError("need at least two elements")
    h = length / n_elements
    n_nodes = n_elements + 1
    M = np.zeros((n_nodes, n_nodes))
    K = np.zeros((n_nodes, n_nodes))
    me = mass_per_length * h / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]])
    ke = rigidity / h * np.array([[1.0, -1.0], [-1.0, 1.0]])
    for e in range(n_elements):
        sl = slice(e, e + 2)
        M[sl, sl] += me
        K[sl, sl] += ke
    inner = slice(1, n_nodes - 1)
    return M[inner, inner], K[inner, inner], np.linspace(0.0, length, n_nodes)


def reduce(M: np.ndarray, K: np.ndarray, basis: ModalBasis, alpha: float = 0.0,
           beta: float = 0.0, coords: np.ndarray | None = None) -> ReducedFlexibleBody:
    """Project ``(M, K)`` onto ``basis`` with Rayleigh damping ``alpha M + beta K``.

    ``coords`` optionally gives nodal positions (supports included, where the
    mode shapes vanish) for later interpolation of attachment rows.
    """
    M = np.asarray(M, dtype=float)
    K = np.asarray(K, dtype=float)
    U = basis.U
    if U.shape[0] != M.shape[0]:
        raise ValueError("basis does not match the matrices")
    mu_full = U.T @ M @ U
    Om_full = U.T @ K @ U
    scale = max(1.0, float(np.max(np.abs(Om_full))))
    if not (np.allclose(mu_full, np.diag(np.diag(mu_full)), atol=1e-8)
            and np.allclose(Om_full, np.diag(np.diag(Om_full)), atol=1e-8 * scale)):
        raise ValueError("basis was not computed from these matrices")
    mu = np.diag(mu_full).copy()
    Omega = np.diag(Om_full).copy()
    U_nodes = U
    if coords is not None:
        coords = np.asarray(coords, dtype=float)
        if len(coords) == U.shape[0] + 2:
            U_nodes = np.vstack([np.zeros(U.shape[1]), U, np.zeros(U.shape[1])])
        elif len(coords) != U.shape[0]:
            raise ValueError("coords must cover the nodes (optionally plus both supports)")
    return ReducedFlexibleBody(mu=mu, damping=alpha * mu + beta * Omega, Omega=Omega,
                               U=U_nodes, alpha=alpha, beta=beta, coords=coords)


def effective_mass(basis: ModalBasis, M: np.ndarray, D: np.ndarray) -> float:
    """Fraction of the mass along ``D`` captured by the retained modes."""
    D = np.asarray(D, dtype=float)
    M = np.asarray(M, dtype=float)
    if D.shape != (M.shape[0],) or basis.U.shape[0] != M.shape[0]:
        raise ValueError("shape mismatch between basis, M and D")
    total = float(D @ M @ D)
    if not np.any(D) or total == 0.0:
        raise ValueError("unit-displacement vector must be nonzero")
    gamma = basis.U.T @ M @ D
    return float(np.sum(gamma**2) / total)


def recover_field(shapes: ModeShapeTable | np.ndarray, q: np.ndarray) -> np.ndarray:
    """Rebuild ``field[t, p] = sum_i shapes[p, i] q[t, i]``.

    Works unchanged for modal velocities and accelerations.
    """
    values = shapes.values if isinstance(shapes, ModeShapeTable) else np.asarray(shapes)
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != values.shape[1]:
        raise ValueError(f"{q.shape[-1]} modal amplitudes for {values.shape[1]} mode shapes")
    return q @ values.T

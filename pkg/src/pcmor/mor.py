"""Proper orthogonal decomposition and Galerkin-type reduced models.

Snapshots of a full-order model are compressed by a thin SVD; the
leading left singular vectors span the projection space and the ROM is

    E_bar v' = A_bar v + T^T F_hat(T v) + B_bar u(t),   w_bar = C_hat T v,

with ``E_bar = T^T E_hat T``, ``A_bar = T^T A_hat T`` and ``B_bar = T^T B_hat``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .coupled import CoupledSystem
from .timeint import IntegratorConfig, Trajectory, integrate

__all__ = [
    "PodResult",
    "pod",
    "projection_basis",
    "ReducedModel",
    "reduce",
]


@dataclass(frozen=True)
class PodResult:
    """Singular values (descending) and left singular vectors of snapshots."""

    singular_values: np.ndarray
    vectors: np.ndarray
    n_snapshots: int

    @property
    def state_dim(self) -> int:
        return self.vectors.shape[0]

    @property
    def available(self) -> int:
        return self.vectors.shape[1]

    def rank(self, rtol: float = 1e-14) -> int:
        """Numerical rank: count of ``sigma_i > rtol sigma_1``."""
        s = self.singular_values
        if s.size == 0 or s[0] == 0:
            return 0
        return int(np.sum(s > rtol * s[0]))

    def energy(self, r: int) -> float:
        """Captured fraction ``sum_{i<=r} sigma_i^2 / sum sigma_i^2``."""
        s2 = self.singular_values**2
        return float(s2[:r].sum() / s2.sum())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "singular_value"])
            for i, s in enumerate(self.singular_values, start=1):
                writer.writerow([i, repr(float(s))])


def pod(snapshots) -> PodResult:
    """Thin SVD of a snapshot matrix with one snapshot per column.

    The sign of every singular vector is fixed so that its first entry that
    is not negligible (above ``1e-12`` times the largest magnitude) is
    positive, which makes the basis reproducible.

    Raises
    ------
    ValueError
        If the snapshots contain NaN or infinite values.
    """
    V = np.asarray(snapshots, dtype=float)
    if V.ndim != 2:
        raise ValueError("snapshot matrix must be two-dimensional")
    if not np.all(np.isfinite(V)):
        raise ValueError("snapshot matrix contains non-finite values")
    U, s, _ = np.linalg.svd(V, full_matrices=False)
    absU = np.abs(U)
    idx = np.argmax(absU > 1e-12 * absU.max(axis=0, initial=0.0), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return PodResult(s, U * signs, V.shape[1])


def projection_basis(result: PodResult, r: int) -> np.ndarray:
    """First ``r`` POD vectors, an ``N x r`` matrix with orthonormal columns."""
    if int(r) != r or r < 1:
        raise ValueError("reduced dimension must be a positive integer")
    if r > result.available:
        raise ValueError(f"reduced dimension {r} exceeds the {result.available} available POD vectors")
    return np.ascontiguousarray(result.vectors[:, :r])


def _dense(mat) -> np.ndarray:
    return mat.toarray() if hasattr(mat, "toarray") else np.asarray(mat)


class ReducedModel:
    """One-sided projection of a :class:`CoupledSystem` onto ``span(T)``."""

    def __init__(self, fom: CoupledSystem, T):
        T = np.asarray(T, dtype=float)
        if T.ndim != 2 or T.shape[0] != fom.N:
            raise ValueError(f"projection matrix must have {fom.N} rows")
        self.fom = fom
        self.T = T
        self.E_bar = T.T @ (fom.E_hat @ T)
        self.A_bar = T.T @ (fom.A_hat @ T)
        self.B_bar = T.T @ fom.B_hat
        self.C_bar = np.einsum("oin,nr->oir", fom.C_hat, T)
        self.v0 = T.T @ fom.x0

    @property
    def r(self) -> int:
        return self.T.shape[1]

    @property
    def mass(self):
        return self.E_bar

    def lift(self, v_bar) -> np.ndarray:
        return np.asarray(v_bar) @ self.T.T

    def rhs(self, t, v):
        return self.A_bar @ v + self.T.T @ self.fom.F_hat(self.T @ v) + self.B_bar @ self.fom.input(t)

    def jac(self, t, v):
        return self.A_bar + self.fom.projected_jacobian(self.T @ v, self.T)

    def outputs(self, states) -> np.ndarray:
        """Reduced output coefficients, ``(T, r)`` states -> ``(T, n_out, m)``."""
        return np.einsum("oir,tr->toi", self.C_bar, np.atleast_2d(states))

    def simulate(self, config: IntegratorConfig, t_eval=None, t_span=None) -> Trajectory:
        t_span = self.fom.system.t_span if t_span is None else t_span
        return integrate(self, t_span, self.v0, config, t_eval=t_eval)

    def is_mass_singular(self, rtol: float = 1e-12) -> bool:
        s = np.linalg.svd(_dense(self.E_bar), compute_uv=False)
        return bool(s.size == 0 or s[-1] <= rtol * s[0])


def reduce(fom: CoupledSystem, result_or_T, r: int | None = None) -> ReducedModel:
    """Build the ROM from a POD result and dimension ``r`` or from ``T``."""
    if isinstance(result_or_T, PodResult):
        if r is None:
            raise ValueError("reduced dimension r required")
        return ReducedModel(fom, projection_basis(result_or_T, r))
    return ReducedModel(fom, result_or_T)

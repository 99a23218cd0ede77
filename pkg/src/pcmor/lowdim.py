"""Low-dimensional representations of a quantity of interest.

A reduced model with output matrix ``C_bar`` (``m x r``) defines new
basis functions ``Psi_j = sum_i c_ij Phi_i``.  Its states are directly the
coefficients over ``Psi``.  The best approximation in ``span(Psi)`` is the
per-time least-squares fit of the full-order output coefficients.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .pcbasis import BasisSpec, evaluate_basis

__all__ = [
    "Representation",
    "RankDeficientError",
    "mor_representation",
    "best_approximation",
    "orthonormalize_basis",
    "evaluate_qoi",
    "phi_representation",
]


class RankDeficientError(np.linalg.LinAlgError):
    """The output matrix has dependent columns; use :func:`orthonormalize_basis`."""


@dataclass(frozen=True)
class Representation:
    """Coefficient trajectories of a scalar QoI on a time grid.

    ``coeffs`` has shape ``(len(times), r)``.  With ``basis == 'phi'`` they
    address ``Phi_1..Phi_m``; with ``basis == 'psi'`` they address
    ``Psi_j = sum_i C_bar[i, j] Phi_i``.
    """

    times: np.ndarray
    coeffs: np.ndarray
    basis: str = "phi"
    C_bar: np.ndarray | None = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).ravel()
        coeffs = np.atleast_2d(np.asarray(self.coeffs, dtype=float))
        if coeffs.shape[0] != times.size:
            raise ValueError("one coefficient vector per time point required")
        if self.basis not in ("phi", "psi"):
            raise ValueError("basis must be 'phi' or 'psi'")
        if self.basis == "psi":
            if self.C_bar is None or np.shape(self.C_bar)[1] != coeffs.shape[1]:
                raise ValueError("psi representation needs C_bar with matching columns")
            object.__setattr__(self, "C_bar", np.asarray(self.C_bar, dtype=float))
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def r(self) -> int:
        return self.coeffs.shape[1]

    def phi_coefficients(self) -> np.ndarray:
        """Coefficients over ``Phi``, shape ``(len(times), m)``."""
        if self.basis == "phi":
            return self.coeffs
        return self.coeffs @ self.C_bar.T

    def to_csv(self, path, cbar_path=None) -> None:
        """Time column plus coefficient columns; ``C_bar`` optionally separately."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            prefix = "w" if self.basis == "phi" else "wbar"
            writer.writerow(["t"] + [f"{prefix}{j + 1}" for j in range(self.r)])
            for t, row in zip(self.times, self.coeffs):
                writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])
        if cbar_path is not None and self.C_bar is not None:
            np.savetxt(cbar_path, self.C_bar, delimiter=",")


def phi_representation(times, w_hat) -> Representation:
    """Representation of full-order output coefficients ``(T, m)``."""
    return Representation(times, w_hat, "phi")


def mor_representation(times, rom_states, C_bar) -> Representation:
    """The ROM states themselves are the coefficients over ``Psi``."""
    rom_states = np.atleast_2d(rom_states)
    C_bar = np.atleast_2d(C_bar)
    if rom_states.shape[1] != C_bar.shape[1]:
        raise ValueError("ROM dimension and columns of C_bar differ")
    return Representation(times, rom_states, "psi", C_bar)


def best_approximation(times, w_hat, C_bar, rank_tol: float = 1e-12, orthonormalize: bool = False) -> Representation:
    """Per-time least-squares coefficients ``argmin ||w_hat(t) - C_bar w||_2``.

    One QR factorisation of ``C_bar`` is shared by all time points; the
    normal equations are never formed.

    With ``orthonormalize=True`` a rank-deficient ``C_bar`` is replaced by
    an orthonormal basis of its range (same subspace, same best
    approximation) instead of raising.

    Raises
    ------
    RankDeficientError
        If a diagonal entry of ``R`` is below ``rank_tol`` times the
        largest one.
    """
    C_bar = np.atleast_2d(np.asarray(C_bar, dtype=float))
    w_hat = np.atleast_2d(np.asarray(w_hat, dtype=float))
    if orthonormalize:
        try:
            return best_approximation(times, w_hat, C_bar, rank_tol)
        except RankDeficientError:
            C_new, _ = orthonormalize_basis(C_bar)
            return Representation(times, w_hat @ C_new, "psi", C_new)
    m, r = C_bar.shape
    if r > m:
        raise RankDeficientError(f"C_bar has more columns ({r}) than rows ({m}); orthonormalize_basis first")
    Q, R = np.linalg.qr(C_bar)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag.min() <= rank_tol * max(diag.max(), np.finfo(float).tiny):
        raise RankDeficientError("C_bar is (numerically) rank deficient; call orthonormalize_basis first")
    coeffs = sla.solve_triangular(R, Q.T @ w_hat.T).T
    return Representation(times, coeffs, "psi", C_bar)


def orthonormalize_basis(C_bar, rtol: float = 1e-12):
    """Orthonormal basis of ``range(C_bar)`` from its SVD.

    Returns ``(C_new, rank)`` where ``C_new`` has ``rank`` orthonormal
    columns.  Singular values below ``max(m, r) * sigma_1 * rtol`` count as
    zero.
    """
    C_bar = np.atleast_2d(np.asarray(C_bar, dtype=float))
    U, s, _ = np.linalg.svd(C_bar, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return np.zeros((C_bar.shape[0], 0)), 0
    rank = int(np.sum(s > max(C_bar.shape) * s[0] * rtol))
    return U[:, :rank], rank


def evaluate_qoi(rep: Representation, spec: BasisSpec, t, p) -> np.ndarray:
    """Pointwise value ``sum_i w_i(t) Phi_i(p)``.

    ``t`` may lie between grid points (linear interpolation of the
    coefficients); ``p`` may be a single point or a stack ``(k, q)``.
    Result has shape ``(len(t), k)`` or is squeezed for scalar inputs.

    Raises
    ------
    ValueError
        For times outside the grid or parameters outside the box.
    """
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    if t_arr.min() < rep.times[0] - 1e-12 * max(1.0, abs(rep.times[0])) or t_arr.max() > rep.times[-1] + 1e-12 * max(
        1.0, abs(rep.times[-1])
    ):
        raise ValueError("time outside the representation grid (no extrapolation)")
    coeffs = rep.phi_coefficients()
    w = np.empty((t_arr.size, coeffs.shape[1]))
    for j in range(coeffs.shape[1]):
        w[:, j] = np.interp(t_arr, rep.times, coeffs[:, j])
    s = np.atleast_2d(evaluate_basis(spec, p))
    out = w @ s.T
    if np.ndim(t) == 0 and np.ndim(p) == 1:
        return float(out[0, 0])
    return out

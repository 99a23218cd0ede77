"""Multivariate orthonormal Legendre bases on a parameter box.

Random parameters are independent and uniformly distributed on a box
``[lower, upper]``.  Each coordinate is mapped affinely onto ``[-1, 1]`` and
the basis functions are products of univariate Legendre polynomials
normalised with respect to the uniform probability density, so that
``E[Phi_i Phi_j] = delta_ij`` and ``Phi_1 == 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .quadrature import QuadratureRule

__all__ = [
    "ParameterBox",
    "MultiIndexSet",
    "BasisSpec",
    "basis_dimension",
    "legendre_orthonormal",
    "legendre_recurrence",
    "evaluate_basis",
    "gram_matrix",
]

_MAX_BASIS = 10**8


@dataclass(frozen=True)
class ParameterBox:
    """Axis-aligned box of admissible parameter values.

    Parameters
    ----------
    lower, upper : array_like, shape (q,)
        Box bounds, ``lower < upper`` componentwise.
    nominal : array_like, shape (q,), optional
        Nominal parameter values; defaults to the box midpoint.
    """

    lower: np.ndarray
    upper: np.ndarray
    nominal: np.ndarray = None

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float)).copy()
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float)).copy()
        if lower.ndim != 1 or lower.shape != upper.shape:
            raise ValueError("lower and upper must be 1-d arrays of equal length")
        if not np.all(lower < upper):
            raise ValueError("box requires lower < upper in every coordinate")
        if self.nominal is None:
            nominal = 0.5 * (lower + upper)
        else:
            nominal = np.atleast_1d(np.asarray(self.nominal, dtype=float)).copy()
        if nominal.shape != lower.shape:
            raise ValueError("nominal has wrong length")
        if np.any(nominal < lower) or np.any(nominal > upper):
            raise ValueError("nominal value lies outside the box")
        for arr in (lower, upper, nominal):
            arr.setflags(write=False)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "nominal", nominal)

    @classmethod
    def around(cls, nominal, variation: float) -> "ParameterBox":
        """Box ``nominal * (1 -/+ variation)``, e.g. ``variation=0.1`` for 10 %."""
        nominal = np.atleast_1d(np.asarray(nominal, dtype=float))
        if variation <= 0:
            raise ValueError("variation must be positive")
        spread = np.abs(nominal) * variation
        return cls(nominal - spread, nominal + spread, nominal)

    @property
    def q(self) -> int:
        return self.lower.size

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def half_width(self) -> np.ndarray:
        return 0.5 * (self.upper - self.lower)

    def to_reference(self, p) -> np.ndarray:
        """Map parameters to ``[-1, 1]^q``."""
        return (np.asarray(p, dtype=float) - self.center) / self.half_width

    def from_reference(self, xi) -> np.ndarray:
        """Map reference coordinates in ``[-1, 1]^q`` to the box."""
        return self.center + self.half_width * np.asarray(xi, dtype=float)

    def contains(self, p, rtol: float = 1e-12) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        slack = rtol * np.maximum(np.abs(self.lower), np.abs(self.upper))
        return np.all((p >= self.lower - slack) & (p <= self.upper + slack), axis=-1)

    def to_dict(self) -> dict:
        return {
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
            "nominal": self.nominal.tolist(),
        }


def basis_dimension(q: int, d: int) -> int:
    """Number of ``q``-variate polynomials of total degree at most ``d``.

    Equals ``(q + d)! / (q! d!)``.  Raises ``OverflowError`` when the count
    exceeds what the package is prepared to handle.
    """
    if int(q) != q or int(d) != d:
        raise TypeError("q and d must be integers")
    if q < 1 or d < 0:
        raise ValueError("need q >= 1 and d >= 0")
    m = math.comb(int(q) + int(d), int(d))
    if m > _MAX_BASIS:
        raise OverflowError(f"basis with q={q}, d={d} has {m} terms (limit {_MAX_BASIS})")
    return m


def _graded_indices(q: int, d: int) -> tuple[tuple[int, ...], ...]:
    # grlex: by total degree, then descending lexicographic within a degree
    def compositions(total, slots):
        if slots == 1:
            yield (total,)
            return
        for first in range(total, -1, -1):
            for rest in compositions(total - first, slots - 1):
                yield (first,) + rest

    out = []
    for deg in range(d + 1):
        out.extend(compositions(deg, q))
    return tuple(out)


@dataclass(frozen=True)
class MultiIndexSet:
    """Total-degree multi-index set in graded lexicographic order."""

    q: int
    d: int
    indices: tuple = field(init=False, repr=False)

    def __post_init__(self):
        basis_dimension(self.q, self.d)
        object.__setattr__(self, "indices", _graded_indices(self.q, self.d))

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def __getitem__(self, i):
        return self.indices[i]

    def as_array(self) -> np.ndarray:
        return np.array(self.indices, dtype=int).reshape(len(self.indices), self.q)

    def position(self, alpha) -> int:
        return self.indices.index(tuple(int(a) for a in alpha))

    def degrees(self) -> np.ndarray:
        return self.as_array().sum(axis=1)


def legendre_recurrence(n: int) -> np.ndarray:
    """Off-diagonal coefficients ``b_1..b_n`` of the orthonormal recurrence.

    ``x p_k = b_{k+1} p_{k+1} + b_k p_{k-1}`` with ``b_k = k / sqrt(4k^2 - 1)``.
    """
    k = np.arange(1, n + 1, dtype=float)
    return k / np.sqrt(4.0 * k * k - 1.0)


def legendre_orthonormal(x, degree: int) -> np.ndarray:
    """Orthonormal Legendre polynomials ``p_0..p_degree`` at ``x`` in [-1, 1].

    Returns an array of shape ``x.shape + (degree + 1,)``.  Normalised so
    that ``int_{-1}^{1} p_j p_k dx / 2 = delta_jk``.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty(x.shape + (degree + 1,))
    out[..., 0] = 1.0
    if degree == 0:
        return out
    b = legendre_recurrence(degree)
    out[..., 1] = x / b[0]
    for k in range(1, degree):
        out[..., k + 1] = (x * out[..., k] - b[k - 1] * out[..., k - 1]) / b[k]
    return out


@dataclass(frozen=True)
class BasisSpec:
    """Orthonormal product-Legendre basis of total degree ``d`` on ``box``."""

    box: ParameterBox
    index_set: MultiIndexSet

    @classmethod
    def total_degree(cls, box: ParameterBox, d: int) -> "BasisSpec":
        return cls(box, MultiIndexSet(box.q, d))

    def __post_init__(self):
        if self.box.q != self.index_set.q:
            raise ValueError("box and index set disagree on the number of parameters")

    @property
    def q(self) -> int:
        return self.box.q

    @property
    def d(self) -> int:
        return self.index_set.d

    @property
    def m(self) -> int:
        return len(self.index_set)

    def evaluate(self, p, check: bool = True) -> np.ndarray:
        return evaluate_basis(self, p, check=check)


def evaluate_basis(spec: BasisSpec, p, check: bool = True) -> np.ndarray:
    """Evaluate ``s(p) = (Phi_1(p), ..., Phi_m(p))``.

    ``p`` may be a single parameter vector of shape ``(q,)`` or a stack of
    shape ``(k, q)``; the result has shape ``(m,)`` or ``(k, m)``.

    Raises
    ------
    ValueError
        If a parameter lies outside the box and ``check`` is true.
    """
    p = np.asarray(p, dtype=float)
    single = p.ndim == 1
    pts = np.atleast_2d(p)
    if pts.shape[-1] != spec.q:
        raise ValueError(f"expected parameters of length {spec.q}, got {pts.shape[-1]}")
    if check and not np.all(spec.box.contains(pts)):
        bad = int(np.flatnonzero(~spec.box.contains(pts))[0])
        raise ValueError(f"parameter {pts[bad]} lies outside the box")
    xi = spec.box.to_reference(pts)
    uni = legendre_orthonormal(xi, spec.d)  # (k, q, d+1)
    alpha = spec.index_set.as_array()  # (m, q)
    vals = np.ones((pts.shape[0], spec.m))
    for j in range(spec.q):
        vals *= uni[:, j, alpha[:, j]]
    return vals[0] if single else vals


def gram_matrix(spec: BasisSpec, rule: "QuadratureRule") -> np.ndarray:
    """Quadrature approximation of ``E[s s^T]``."""
    if rule.nodes.shape[1] != spec.q:
        raise ValueError("rule and basis live on different parameter spaces")
    phi = evaluate_basis(spec, rule.nodes)
    return phi.T @ (rule.weights[:, None] * phi)

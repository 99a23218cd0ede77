"""Probabilistic quadrature on a parameter box.

All rules integrate against the uniform *probability* density, so the
weights sum to one.  Univariate Gauss--Legendre rules come from the
Golub--Welsch eigenvalue problem; multivariate rules are full tensor
products or Smolyak sparse grids.
"""

from __future__ import annotations

import csv
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .pcbasis import ParameterBox, legendre_recurrence

__all__ = [
    "QuadratureRule",
    "QuadratureError",
    "gauss_legendre_1d",
    "tensor_rule",
    "sparse_grid",
    "expect",
    "GROWTH_RULES",
    "DEFAULT_NODE_CAP",
]

DEFAULT_NODE_CAP = 10**7

GROWTH_RULES = {
    "linear": lambda level: level,
    "odd": lambda level: 2 * level - 1,
    "exponential": lambda level: 2**level - 1,
}


class QuadratureError(RuntimeError):
    """Evaluation of an integrand failed at a quadrature node."""

    def __init__(self, index: int, node, cause: BaseException):
        super().__init__(f"integrand failed at node {index} ({np.asarray(node)}): {cause}")
        self.index = index
        self.node = node


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes ``p^(l)`` in the box with weights ``gamma_l`` summing to one.

    Sparse-grid weights may be negative.
    """

    nodes: np.ndarray
    weights: np.ndarray
    box: ParameterBox = None
    label: str = ""

    def __post_init__(self):
        nodes = np.atleast_2d(np.asarray(self.nodes, dtype=float)).copy()
        weights = np.asarray(self.weights, dtype=float).ravel().copy()
        if nodes.shape[0] != weights.size:
            raise ValueError("number of nodes and weights differ")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {weights.sum()!r}, expected 1")
        if self.box is not None and not np.all(self.box.contains(nodes)):
            raise ValueError("quadrature node outside the parameter box")
        nodes.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def k(self) -> int:
        return self.weights.size

    @property
    def q(self) -> int:
        return self.nodes.shape[1]

    def __len__(self) -> int:
        return self.k

    def to_csv(self, path) -> None:
        """Write one row per node: coordinates followed by the weight."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"p{j + 1}" for j in range(self.q)] + ["weight"])
            for node, w in zip(self.nodes, self.weights):
                writer.writerow([repr(float(v)) for v in node] + [repr(float(w))])

    @classmethod
    def from_csv(cls, path, box: ParameterBox = None) -> "QuadratureRule":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, :-1], data[:, -1], box)


@lru_cache(maxsize=64)
def _gl_reference(n: int) -> tuple[np.ndarray, np.ndarray]:
    if n == 1:
        return np.zeros(1), np.ones(1)
    b = legendre_recurrence(n - 1)
    x, vecs = eigh_tridiagonal(np.zeros(n), b)
    w = vecs[0] ** 2
    # exact symmetry about 0; the middle node of odd rules becomes exactly 0
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    w /= w.sum()
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_legendre_1d(n: int) -> tuple[np.ndarray, np.ndarray]:
    """``n``-point Gauss--Legendre rule on ``[-1, 1]`` for the density 1/2.

    Nodes are ascending.  The rule is exact for polynomials of degree
    ``2n - 1`` and its weights sum to one.
    """
    if int(n) != n or n < 1:
        raise ValueError("n must be a positive integer")
    x, w = _gl_reference(int(n))
    return x.copy(), w.copy()


def _check_cap(count: int, cap: int) -> None:
    if count > cap:
        raise ValueError(f"quadrature rule would have {count} nodes (cap {cap})")


def tensor_rule(box: ParameterBox, per_axis: int, cap: int = DEFAULT_NODE_CAP) -> QuadratureRule:
    """Full tensor product of ``per_axis``-point Gauss--Legendre rules."""
    if int(per_axis) != per_axis or per_axis < 1:
        raise ValueError("per_axis must be a positive integer")
    _check_cap(per_axis**box.q, cap)
    x, w = gauss_legendre_1d(per_axis)
    grids = np.meshgrid(*([x] * box.q), indexing="ij")
    xi = np.stack([g.ravel() for g in grids], axis=1)
    wgrids = np.meshgrid(*([w] * box.q), indexing="ij")
    weights = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
    weights /= weights.sum()
    return QuadratureRule(box.from_reference(xi), weights, box, f"tensor-GL{per_axis}^{box.q}")


def _level_vectors(q: int, total: int):
    """All ``i`` in ``N^q`` with ``i_j >= 1`` and ``|i| = total``."""
    if q == 1:
        if total >= 1:
            yield (total,)
        return
    for first in range(1, total - q + 2):
        for rest in _level_vectors(q - 1, total - first):
            yield (first,) + rest


def sparse_grid(
    box: ParameterBox,
    level: int,
    growth: str = "linear",
    cap: int = DEFAULT_NODE_CAP,
    merge_tol: float = 1e-12,
) -> QuadratureRule:
    """Smolyak sparse grid built from Gauss--Legendre rules.

    Parameters
    ----------
    box : ParameterBox
    level : int
        Smolyak level ``L >= 1``.  Univariate levels are one-based and the
        grid combines tensor rules with ``|i| <= q + L - 1``; in one
        dimension the result is the univariate rule of level ``L``.
    growth : {'linear', 'odd', 'exponential'}
        Points per univariate level: ``l``, ``2l - 1`` or ``2^l - 1``.
    cap : int
        Maximal number of (merged) nodes.
    merge_tol : float
        Nodes whose reference coordinates agree to this tolerance are merged
        and their weights summed.

    Notes
    -----
    With ``growth='linear'`` the rule integrates all polynomials of total
    degree ``2L - 1`` exactly.  Weights may be negative.
    """
    if int(level) != level or level < 1:
        raise ValueError("level must be a positive integer")
    try:
        npts = GROWTH_RULES[growth]
    except KeyError:
        raise ValueError(f"unknown growth rule {growth!r}; choose from {sorted(GROWTH_RULES)}") from None
    q = box.q
    digits = max(1, int(round(-math.log10(merge_tol))))
    acc: dict[tuple, list] = {}
    for total in range(max(q, level), q + level):
        coeff = (-1) ** (q + level - 1 - total) * math.comb(q - 1, q + level - 1 - total)
        if coeff == 0:
            continue
        for ivec in _level_vectors(q, total):
            rules = [gauss_legendre_1d(npts(i)) for i in ivec]
            size = math.prod(len(r[0]) for r in rules)
            _check_cap(size, 50 * cap)
            for combo in itertools.product(*[range(len(r[0])) for r in rules]):
                xi = tuple(rules[j][0][c] for j, c in enumerate(combo))
                w = coeff * math.prod(rules[j][1][c] for j, c in enumerate(combo))
                key = tuple(round(v, digits) + 0.0 for v in xi)
                if key in acc:
                    acc[key][1] += w
                else:
                    acc[key] = [xi, w]
            _check_cap(len(acc), cap)
    keys = sorted(acc)
    xi = np.array([acc[k][0] for k in keys], dtype=float).reshape(len(keys), q)
    weights = np.array([acc[k][1] for k in keys], dtype=float)
    keep = np.abs(weights) > 1e-15
    xi, weights = xi[keep], weights[keep]
    weights = weights / weights.sum()
    return QuadratureRule(box.from_reference(xi), weights, box, f"smolyak-GL-{growth}-L{level}")


def expect(rule: QuadratureRule, f, vectorized: bool = False, workers: int | None = None) -> np.ndarray:
    """Quadrature expectation ``sum_l gamma_l f(p^(l))``.

    Parameters
    ----------
    rule : QuadratureRule
    f : callable
        Maps a parameter vector to a scalar or array.  With
        ``vectorized=True`` it receives all nodes at once, shape ``(k, q)``,
        and returns an array with leading dimension ``k``.
    workers : int, optional
        Evaluate nodes in a thread pool.  The summation order is always the
        node order.

    Raises
    ------
    QuadratureError
        Carries the index of the node at which ``f`` failed.
    """
    if vectorized:
        vals = np.asarray(f(rule.nodes), dtype=float)
        if vals.shape[0] != rule.k:
            raise ValueError("vectorized integrand returned wrong leading dimension")
        if not np.all(np.isfinite(vals)):
            bad = int(np.flatnonzero((~np.isfinite(vals.reshape(rule.k, -1))).any(axis=1))[0])
            raise QuadratureError(bad, rule.nodes[bad], FloatingPointError("non-finite value"))
        return np.tensordot(rule.weights, vals, axes=(0, 0))

    def one(idx):
        try:
            val = np.asarray(f(rule.nodes[idx]), dtype=float)
        except Exception as exc:  # noqa: BLE001 - re-raised with node context
            raise QuadratureError(idx, rule.nodes[idx], exc) from exc
        if not np.all(np.isfinite(val)):
            raise QuadratureError(idx, rule.nodes[idx], FloatingPointError("non-finite value"))
        return val

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(one, range(rule.k)))
    else:
        values = [one(i) for i in range(rule.k)]
    total = np.zeros_like(values[0])
    for w, v in zip(rule.weights, values):
        total = total + w * v
    return total

"""Stochastic Galerkin projection of a parametric system.

The state is expanded as ``x(t, p) ~ sum_i v_i(t) Phi_i(p)`` and the
residual is projected onto every ``Phi_i``.  The coupled unknown
``v_hat = (v_1, ..., v_m)`` has length ``m n`` and block ``i`` holds the
coefficient vector of ``Phi_i``.

Matrices that are affine in ``p`` are assembled exactly from the
three-term recurrence of the Legendre basis; all other coefficients and
the nonlinear term use a quadrature rule.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .coupled import CoupledSystem
from .models import AffineMatrix, ParametricSystem, consistent_init
from .pcbasis import BasisSpec, evaluate_basis, legendre_recurrence
from .quadrature import QuadratureRule, expect

__all__ = [
    "GalerkinSystem",
    "assemble_galerkin",
    "assemble_linear",
    "galerkin_nonlinear",
    "galerkin_initial",
    "parameter_moment_matrices",
    "export_triplets",
]

SPARSE_THRESHOLD = 2000


def parameter_moment_matrices(basis: BasisSpec) -> list:
    """Sparse matrices ``E[p_j S(p)]`` for ``j = 1..q`` (exact).

    Uses ``p_j = c_j + h_j xi_j`` and the recurrence
    ``xi p_k = b_{k+1} p_{k+1} + b_k p_{k-1}`` of the orthonormal Legendre
    polynomials.
    """
    alpha = basis.index_set.as_array()
    lookup = {tuple(a): i for i, a in enumerate(alpha)}
    b = legendre_recurrence(max(basis.d, 1) + 1)
    m = basis.m
    out = []
    for j in range(basis.q):
        rows, cols, vals = list(range(m)), list(range(m)), [basis.box.center[j]] * m
        for i, a in enumerate(alpha):
            up = a.copy()
            up[j] += 1
            k = lookup.get(tuple(up))
            if k is not None:
                val = basis.box.half_width[j] * b[a[j]]
                rows += [i, k]
                cols += [k, i]
                vals += [val, val]
        out.append(sp.csr_matrix((vals, (rows, cols)), shape=(m, m)))
    return out


def _affine_expectation(mat: AffineMatrix, moments, m) -> sp.csr_matrix:
    out = sp.kron(sp.identity(m), sp.csr_matrix(mat.const))
    for j, coef in mat.terms.items():
        out = out + sp.kron(moments[j], sp.csr_matrix(coef))
    return sp.csr_matrix(out)


def _sandwich(phi, W) -> np.ndarray:
    """``sum_l phi_li W_lab phi_lj`` arranged as ``(m a, m b)`` via BLAS."""
    k, m = phi.shape
    r, c = W.shape[1:]
    left = (phi[:, :, None, None] * W[:, None, :, :]).reshape(k, m * r * c)
    out = (phi.T @ left).reshape(m, m, r, c)  # (j, i, a, b)
    return out.transpose(1, 2, 0, 3).reshape(m * r, m * c)


def _quadrature_expectation(fn, basis, rule, shape, left_only=False) -> np.ndarray:
    phi = evaluate_basis(basis, rule.nodes)
    vals = np.broadcast_to(np.asarray(fn(rule.nodes), dtype=float), (rule.k,) + shape)
    weighted = rule.weights[:, None, None] * vals
    if left_only:
        # E[s (x) M]: (m*r) x c
        out = np.einsum("li,lab->iab", phi, weighted)
        return out.reshape(basis.m * shape[0], shape[1])
    return _sandwich(phi, weighted)


def _finish(mat, sparse):
    if sparse:
        return sp.csr_matrix(mat)
    return mat.toarray() if sp.issparse(mat) else np.asarray(mat)


def assemble_linear(
    sys: ParametricSystem,
    basis: BasisSpec,
    rule: QuadratureRule | None,
    method: str = "auto",
    sparse: bool | None = None,
):
    """Galerkin matrices ``E_hat, A_hat, B_hat, C_hat``.

    ``E_hat = E[S (x) E]``, ``A_hat = E[S (x) A]``, ``B_hat = E[s (x) B]`` and
    ``C_hat = E[S (x) C]``; ``C_hat`` is returned with shape
    ``(n_out, m, m n)``.

    Parameters
    ----------
    method : {'auto', 'quadrature', 'affine'}
        ``'auto'`` uses the exact affine route where a coefficient is an
        :class:`AffineMatrix` and the rule otherwise; ``'quadrature'``
        always uses ``rule``.
    sparse : bool, optional
        Return ``E_hat``/``A_hat`` as CSR matrices; default when ``m n`` is
        larger than 2000.
    """
    if method not in ("auto", "quadrature", "affine"):
        raise ValueError("method must be 'auto', 'quadrature' or 'affine'")
    if sys.q != basis.q:
        raise ValueError(f"system has {sys.q} parameters, basis {basis.q}")
    m, n = basis.m, sys.n
    sparse = (m * n > SPARSE_THRESHOLD) if sparse is None else sparse
    moments = None

    def build(coef, shape, kind):
        nonlocal moments
        affine = isinstance(coef, AffineMatrix) and method != "quadrature"
        if method == "affine" and not isinstance(coef, AffineMatrix):
            raise ValueError(f"coefficient {kind} is not affine in p")
        if affine:
            if moments is None:
                moments = parameter_moment_matrices(basis)
            full = _affine_expectation(coef, moments, m)
            if kind == "B":
                # E[s (x) B] is the first block column of E[S (x) B]
                return full[:, : shape[1]].toarray()
            return full
        if rule is None:
            raise ValueError(f"coefficient {kind} needs a quadrature rule")
        if kind == "B":
            return _quadrature_expectation(coef, basis, rule, shape, left_only=True)
        return _quadrature_expectation(coef, basis, rule, shape)

    E_hat = _finish(build(sys.E, (n, n), "E"), sparse)
    A_hat = _finish(build(sys.A, (n, n), "A"), sparse)
    B_hat = np.asarray(build(sys.B, (n, sys.n_in), "B"))
    C_full = build(sys.C, (sys.n_out, n), "C")
    C_full = C_full.toarray() if sp.issparse(C_full) else np.asarray(C_full)
    C_hat = C_full.reshape(m, sys.n_out, m * n).transpose(1, 0, 2).copy()
    return E_hat, A_hat, B_hat, C_hat


def galerkin_nonlinear(v_hat, sys: ParametricSystem, basis: BasisSpec, rule: QuadratureRule, phi=None) -> np.ndarray:
    """Quadrature approximation of ``F_hat_i(v) = E[F(sum_j v_j Phi_j, p) Phi_i]``.

    Costs ``k`` evaluations of ``F`` (vectorised) plus two matrix products.
    """
    phi = evaluate_basis(basis, rule.nodes) if phi is None else phi
    V = np.asarray(v_hat, dtype=float).reshape(basis.m, sys.n)
    X = phi @ V
    Fx = sys.F_at(X, rule.nodes)
    return (phi.T @ (rule.weights[:, None] * Fx)).ravel()


def galerkin_initial(sys: ParametricSystem, basis: BasisSpec, rule: QuadratureRule) -> np.ndarray:
    """Projection ``E[x0(p) Phi_i]`` of the (consistent) initial values."""
    if sys.is_dae:
        x0 = np.array([consistent_init(sys, p) for p in rule.nodes])
    else:
        x0 = np.broadcast_to(sys.x0_at(rule.nodes), (rule.k, sys.n))
    phi = evaluate_basis(basis, rule.nodes)
    coeffs = expect(rule, lambda nodes: phi[:, :, None] * x0[:, None, :], vectorized=True)
    return coeffs.ravel()


class GalerkinSystem(CoupledSystem):
    """Assembled stochastic Galerkin system of dimension ``m n``."""

    kind = "galerkin"

    def __init__(self, system, basis, rule, nonlinear_rule, E_hat, A_hat, B_hat, C_hat, v0):
        super().__init__(system, basis, E_hat, A_hat, B_hat, C_hat, v0)
        self.rule = rule
        self.nonlinear_rule = nonlinear_rule
        self._phi = evaluate_basis(basis, nonlinear_rule.nodes) if nonlinear_rule is not None else None

    @property
    def v0(self) -> np.ndarray:
        return self.x0

    def _node_states(self, v):
        V = np.asarray(v, dtype=float).reshape(self.m, self.system.n)
        return self._phi @ V

    def F_hat(self, v) -> np.ndarray:
        if self.system.F is None:
            return np.zeros(self.N)
        return galerkin_nonlinear(v, self.system, self.basis, self.nonlinear_rule, self._phi)

    def jac_F_hat(self, v) -> np.ndarray:
        """``d F_hat / d v_hat`` by the same quadrature rule, shape ``(N, N)``."""
        if self.system.F is None:
            return np.zeros((self.N, self.N))
        X = self._node_states(v)
        Jn = self.system.jac_F_at(X, self.nonlinear_rule.nodes)
        W = self.nonlinear_rule.weights[:, None, None] * Jn
        return _sandwich(self._phi, W)

    def projected_jacobian(self, v, T) -> np.ndarray:
        """``T^T (d F_hat / d v) T`` without forming the full Jacobian."""
        r = T.shape[1]
        if self.system.F is None:
            return np.zeros((r, r))
        X = self._node_states(v)
        Jn = self.system.jac_F_at(X, self.nonlinear_rule.nodes)
        P = np.einsum("li,inr->lnr", self._phi, T.reshape(self.m, self.system.n, r))
        W = self.nonlinear_rule.weights[:, None, None] * Jn
        WP = np.matmul(W, P)
        return P.reshape(-1, r).T @ WP.reshape(-1, r)


def assemble_galerkin(
    sys: ParametricSystem,
    basis: BasisSpec,
    rule: QuadratureRule | None,
    nonlinear_rule: QuadratureRule | None = None,
    linear_method: str = "auto",
    sparse: bool | None = None,
) -> GalerkinSystem:
    """Assemble the stochastic Galerkin system.

    ``rule`` serves the linear coefficients that are not affine in ``p``;
    ``nonlinear_rule`` (default: ``rule``) approximates ``F_hat`` and
    projects the initial values.
    """
    nonlinear_rule = rule if nonlinear_rule is None else nonlinear_rule
    if nonlinear_rule is None:
        raise ValueError("a quadrature rule is required for the nonlinear term")
    E_hat, A_hat, B_hat, C_hat = assemble_linear(sys, basis, rule, method=linear_method, sparse=sparse)
    v0 = galerkin_initial(sys, basis, nonlinear_rule)
    return GalerkinSystem(sys, basis, rule, nonlinear_rule, E_hat, A_hat, B_hat, C_hat, v0)


def export_triplets(matrix, path) -> None:
    """Write a matrix as ``row col value`` lines (zero-based, nonzeros only)."""
    coo = sp.coo_matrix(matrix)
    with open(path, "w") as fh:
        fh.write(f"# {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{int(i)} {int(j)} {float(v)!r}\n")

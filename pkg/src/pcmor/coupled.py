"""Common interface of the large coupled systems (full-order models).

Both the stochastic Galerkin system and the collocation system read::

    E_hat y' = A_hat y + F_hat(y) + B_hat u(t),    w_hat = C_hat y

with an ``m``-dimensional output per physical output.  ``C_hat`` is stored
with shape ``(n_out, m, N)``.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .models import ParametricSystem
from .pcbasis import BasisSpec


class CoupledSystem:
    """Base class; subclasses provide ``F_hat``, ``jac_F_hat`` and
    ``projected_jacobian``."""

    kind = "coupled"

    def __init__(self, system: ParametricSystem, basis: BasisSpec, E_hat, A_hat, B_hat, C_hat, x0):
        self.system = system
        self.basis = basis
        self.E_hat = E_hat
        self.A_hat = A_hat
        self.B_hat = np.asarray(B_hat, dtype=float)
        self.C_hat = np.asarray(C_hat, dtype=float)
        self.x0 = np.asarray(x0, dtype=float)
        if self.C_hat.ndim != 3 or self.C_hat.shape[2] != self.N:
            raise ValueError("C_hat must have shape (n_out, m, N)")

    @property
    def N(self) -> int:
        return self.E_hat.shape[0]

    @property
    def m(self) -> int:
        return self.basis.m

    @property
    def n_out(self) -> int:
        return self.C_hat.shape[0]

    @property
    def mass(self):
        return self.E_hat

    def input(self, t) -> np.ndarray:
        return self.system.input(t)

    def rhs(self, t, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return self.A_hat @ y + self.F_hat(y) + self.B_hat @ self.input(t)

    def jac(self, t, y):
        JF = self.jac_F_hat(y)
        if sp.issparse(self.A_hat) or sp.issparse(JF):
            return (sp.csr_matrix(self.A_hat) + sp.csr_matrix(JF)).tocsr()
        return self.A_hat + JF

    def outputs(self, states) -> np.ndarray:
        """Output coefficients ``w_hat`` for states ``(T, N)`` -> ``(T, n_out, m)``."""
        states = np.atleast_2d(states)
        return np.einsum("oin,tn->toi", self.C_hat, states)

    def output_matrix(self, which: int = 0) -> np.ndarray:
        """The ``m x N`` output matrix of physical output ``which``."""
        return self.C_hat[which]

    def summary(self) -> dict:
        return {
            "kind": self.kind,
            "model": self.system.name,
            "n": self.system.n,
            "m": self.m,
            "N": self.N,
            "n_out": self.n_out,
            "q": self.basis.q,
            "d": self.basis.d,
        }

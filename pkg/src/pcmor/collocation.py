"""Stochastic collocation: decoupled node systems and their coupled form.

The original system is solved at every quadrature node ``p^(l)``.  The
node states stacked into ``x_hat = (x(t, p^(1)), ..., x(t, p^(k)))`` obey
a block-diagonal system whose output matrix applies the quadrature
weights and basis values, so ``C_hat x_hat`` approximates the PC
coefficients of the output.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .coupled import CoupledSystem
from .models import ParametricSystem, consistent_init
from .pcbasis import BasisSpec, evaluate_basis
from .quadrature import QuadratureRule
from .timeint import ImplicitSystem, IntegratorConfig, Trajectory, integrate, interpolate

__all__ = [
    "CollocationSystem",
    "assemble_collocation",
    "collocation_output_matrix",
    "node_system",
    "solve_nodes",
    "solve_coupled",
]


def _block_diag(blocks: np.ndarray) -> sp.bsr_matrix:
    k, r, c = blocks.shape
    return sp.bsr_matrix(
        (np.ascontiguousarray(blocks), np.arange(k), np.arange(k + 1)), shape=(k * r, k * c)
    ).tocsr()


def collocation_output_matrix(sys: ParametricSystem, basis: BasisSpec, rule: QuadratureRule) -> np.ndarray:
    """``C_hat`` of shape ``(n_out, m, k n)``.

    Row ``i`` of output ``o`` has the block ``gamma_l Phi_i(p^(l)) C_o(p^(l))``
    at node ``l``, so that ``C_hat x_hat`` is the quadrature approximation
    of ``E[y_o Phi_i]``.
    """
    phi = evaluate_basis(basis, rule.nodes)  # (k, m)
    C = sys.C_at(rule.nodes)  # (k, n_out, n)
    full = np.einsum("l,li,loa->oila", rule.weights, phi, C)
    return full.reshape(sys.n_out, basis.m, rule.k * sys.n)


class CollocationSystem(CoupledSystem):
    """Block-diagonal system of dimension ``k n``."""

    kind = "collocation"

    def __init__(self, system, basis, rule, E_nodes, A_nodes, B_nodes, C_hat, x0):
        self.rule = rule
        self.E_nodes = E_nodes
        self.A_nodes = A_nodes
        self.B_nodes = B_nodes
        super().__init__(
            system,
            basis,
            _block_diag(E_nodes),
            _block_diag(A_nodes),
            B_nodes.reshape(rule.k * system.n, system.n_in),
            C_hat,
            x0,
        )

    @property
    def k(self) -> int:
        return self.rule.k

    def _split(self, y):
        return np.asarray(y, dtype=float).reshape(self.k, self.system.n)

    def F_hat(self, y) -> np.ndarray:
        if self.system.F is None:
            return np.zeros(self.N)
        return self.system.F_at(self._split(y), self.rule.nodes).ravel()

    def jac_F_hat(self, y):
        n = self.system.n
        if self.system.F is None:
            return sp.csr_matrix((self.N, self.N))
        return _block_diag(self.system.jac_F_at(self._split(y), self.rule.nodes).reshape(self.k, n, n))

    def jac(self, t, y):
        blocks = self.A_nodes + self.system.jac_F_at(self._split(y), self.rule.nodes)
        return _block_diag(blocks)

    def projected_jacobian(self, y, T) -> np.ndarray:
        n, r = self.system.n, T.shape[1]
        if self.system.F is None:
            return np.zeros((r, r))
        Jn = self.system.jac_F_at(self._split(y), self.rule.nodes)
        P = T.reshape(self.k, n, r)
        JP = np.matmul(Jn, P)
        return P.reshape(-1, r).T @ JP.reshape(-1, r)

    def node_states(self, states) -> np.ndarray:
        """Reshape stacked states ``(..., k n)`` to ``(..., k, n)``."""
        states = np.asarray(states)
        return states.reshape(states.shape[:-1] + (self.k, self.system.n))


def assemble_collocation(sys: ParametricSystem, basis: BasisSpec, rule: QuadratureRule) -> CollocationSystem:
    """Evaluate all coefficients at the nodes and build the coupled system.

    Initial values are made consistent node by node for DAEs.
    """
    if sys.q != basis.q or rule.q != sys.q:
        raise ValueError("parameter dimensions of system, basis and rule differ")
    nodes = rule.nodes
    n = sys.n
    E_nodes = np.array(sys.E_at(nodes), dtype=float).reshape(rule.k, n, n)
    A_nodes = np.array(sys.A_at(nodes), dtype=float).reshape(rule.k, n, n)
    B_nodes = np.array(sys.B_at(nodes), dtype=float).reshape(rule.k, n, sys.n_in)
    if sys.is_dae:
        x0 = np.array([consistent_init(sys, p) for p in nodes])
    else:
        x0 = np.array(np.broadcast_to(sys.x0_at(nodes), (rule.k, n)))
    C_hat = collocation_output_matrix(sys, basis, rule)
    return CollocationSystem(sys, basis, rule, E_nodes, A_nodes, B_nodes, C_hat, x0.ravel())


def node_system(csys: CollocationSystem, index: int) -> ImplicitSystem:
    """The original system at node ``index`` as an :class:`ImplicitSystem`."""
    sys = csys.system
    p = csys.rule.nodes[index]
    A, B = csys.A_nodes[index], csys.B_nodes[index]

    def rhs(t, x):
        return A @ x + sys.F_at(x, p) + B @ sys.input(t)

    def jac(t, x):
        return A + sys.jac_F_at(x, p)

    return ImplicitSystem(csys.E_nodes[index], rhs, jac)


def _cache_key(csys, index, cfg, t_span, t_eval) -> str:
    h = hashlib.sha256()
    h.update(csys.system.name.encode())
    h.update(np.ascontiguousarray(csys.rule.nodes[index]).tobytes())
    h.update(np.ascontiguousarray(csys.x0.reshape(csys.k, -1)[index]).tobytes())
    h.update(json.dumps(asdict(cfg), sort_keys=True, default=str).encode())
    h.update(np.asarray(t_span, dtype=float).tobytes())
    h.update(np.asarray(t_eval, dtype=float).tobytes())
    return h.hexdigest()[:32]


def solve_nodes(
    csys: CollocationSystem,
    config: IntegratorConfig,
    t_eval,
    t_span=None,
    workers: int | None = None,
    cache_dir=None,
) -> np.ndarray:
    """Integrate every node system separately.

    Each node uses its own adaptive step sizes; the results are sampled on
    the common grid ``t_eval`` and stacked into an array ``(T, k n)``
    comparable with states of the coupled system.

    Parameters
    ----------
    workers : int, optional
        Number of threads.  The result does not depend on it.
    cache_dir : path, optional
        Node trajectories are stored as ``.npz`` files keyed by a hash of
        the node, initial value, configuration and time grid, and reused.
    """
    t_span = csys.system.t_span if t_span is None else tuple(t_span)
    t_eval = np.asarray(t_eval, dtype=float)
    n = csys.system.n
    x0 = csys.x0.reshape(csys.k, n)
    if cache_dir is not None:
        cache_dir = Path(cache_dir)
        cache_dir.mkdir(parents=True, exist_ok=True)

    def one(index):
        path = None
        if cache_dir is not None:
            path = cache_dir / f"node-{_cache_key(csys, index, config, t_span, t_eval)}.npz"
            if path.exists():
                with np.load(path) as data:
                    return data["states"]
        traj = integrate(node_system(csys, index), t_span, x0[index], config, t_eval=t_eval, dense=False)
        states = traj.sample_states
        if path is not None:
            tmp = path.with_suffix(f".{os.getpid()}.tmp.npz")
            np.savez(tmp, states=states)
            os.replace(tmp, path)
        return states

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(csys.k)))
    else:
        results = [one(i) for i in range(csys.k)]
    return np.stack(results, axis=1).reshape(t_eval.size, csys.k * n)


def solve_coupled(csys: CollocationSystem, config: IntegratorConfig, t_eval=None, t_span=None) -> Trajectory:
    """Integrate the coupled block-diagonal system with shared step sizes."""
    t_span = csys.system.t_span if t_span is None else tuple(t_span)
    return integrate(csys, t_span, csys.x0, config, t_eval=t_eval)


def sample(traj: Trajectory, times) -> np.ndarray:
    """States of a trajectory on ``times`` (wrapper of :func:`interpolate`)."""
    return interpolate(traj, times)

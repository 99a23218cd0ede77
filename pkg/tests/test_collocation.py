import numpy as np
import pytest
import scipy.sparse as sp

from pcmor.collocation import (
    assemble_collocation,
    collocation_output_matrix,
    node_system,
    solve_coupled,
    solve_nodes,
)
from pcmor.galerkin import assemble_galerkin
from pcmor.models import AffineMatrix, ParametricSystem, eval_rhs, scrapie
from pcmor.pcbasis import BasisSpec, ParameterBox, evaluate_basis
from pcmor.quadrature import QuadratureRule, tensor_rule
from pcmor.timeint import IntegratorConfig, integrate

SCRAPIE = scrapie()


def decay_system():
    # x' = -p x, x(0) = 1, p uniform on [1, 3]
    return ParametricSystem(
        name="decay",
        n=1,
        n_in=1,
        n_out=1,
        box=ParameterBox([1.0], [3.0]),
        E=AffineMatrix(np.eye(1), q=1),
        A=AffineMatrix([[0.0]], {0: [[-1.0]]}, q=1),
        B=AffineMatrix([[0.0]], q=1),
        C=AffineMatrix([[1.0]], q=1),
        x0=lambda p: np.ones(1),
        u=lambda t: np.zeros(1),
        t_span=(0.0, 1.0),
    )


def exact_decay_coefficients(basis, t, n_points=40):
    """E[exp(-p t) Phi_i] by a 40-point numpy Gauss-Legendre rule."""
    x, w = np.polynomial.legendre.leggauss(n_points)
    p = 2.0 + x
    phi = evaluate_basis(basis, p[:, None])
    return (0.5 * w * np.exp(-np.outer(t, p))) @ phi


@pytest.fixture(scope="module")
def scrapie_collocation():
    basis = BasisSpec.total_degree(SCRAPIE.box, 3)
    return assemble_collocation(SCRAPIE, basis, tensor_rule(SCRAPIE.box, 3))


class TestAssembly:
    def test_dimensions(self, scrapie_collocation):
        col = scrapie_collocation
        assert (col.k, col.N, col.m) == (243, 729, 56)
        assert col.C_hat.shape == (3, 56, 729)
        assert sp.issparse(col.E_hat)
        assert np.count_nonzero(col.E_hat.toarray()) == 729

    def test_single_nominal_node(self):
        basis = BasisSpec.total_degree(SCRAPIE.box, 2)
        rule = QuadratureRule(SCRAPIE.box.nominal[None, :], [1.0], SCRAPIE.box)
        C_hat = collocation_output_matrix(SCRAPIE, basis, rule)
        s = evaluate_basis(basis, SCRAPIE.box.nominal)
        np.testing.assert_allclose(C_hat, s[None, :, None] * np.eye(3)[:, None, :])

    def test_node_system_matches_model(self, scrapie_collocation):
        col = scrapie_collocation
        x = np.array([0.8, 0.3, 0.2])
        for l in (0, 100, 242):
            ns = node_system(col, l)
            np.testing.assert_allclose(ns.rhs(0.0, x), eval_rhs(SCRAPIE, 0.0, x, col.rule.nodes[l]), atol=1e-16)

    def test_block_diagonal_rhs(self, scrapie_collocation):
        col = scrapie_collocation
        y = np.random.default_rng(0).uniform(0, 1, col.N)
        got = col.node_states(col.rhs(0.0, y))
        want = eval_rhs(SCRAPIE, 0.0, col.node_states(y), col.rule.nodes)
        np.testing.assert_allclose(got, want, atol=1e-16)

    def test_jacobians(self, scrapie_collocation):
        col = scrapie_collocation
        rng = np.random.default_rng(1)
        y = rng.uniform(0, 1, col.N)
        J = col.jac(0.0, y).toarray()
        np.testing.assert_allclose(J, col.A_hat.toarray() + col.jac_F_hat(y).toarray())
        T, _ = np.linalg.qr(rng.standard_normal((col.N, 5)))
        np.testing.assert_allclose(col.projected_jacobian(y, T), T.T @ col.jac_F_hat(y).toarray() @ T, atol=1e-13)


class TestOutputs:
    def test_identical_nodes(self, scrapie_collocation):
        col = scrapie_collocation
        # the 3-point rule is exact to degree 5 per axis, enough for E[Phi_i]
        x = np.array([0.4, 0.5, 0.6])
        w = col.outputs(np.tile(x, col.k))[0]
        np.testing.assert_allclose(w[:, 0], x)
        np.testing.assert_allclose(w[:, 1:], 0.0, atol=1e-14)

    def test_mean_only(self):
        basis = BasisSpec.total_degree(SCRAPIE.box, 0)
        rule = tensor_rule(SCRAPIE.box, 2)
        col = assemble_collocation(SCRAPIE, basis, rule)
        X = np.random.default_rng(2).uniform(size=(rule.k, 3))
        w = col.outputs(X.ravel())[0]
        np.testing.assert_allclose(w[:, 0], rule.weights @ X)


class TestSolve:
    def test_decay_against_exact_and_galerkin(self):
        sys = decay_system()
        basis = BasisSpec.total_degree(sys.box, 6)
        rule = tensor_rule(sys.box, 8)
        t = np.linspace(0.0, 1.0, 11)
        cfg = IntegratorConfig(rel_tol=1e-9, abs_tol=1e-12)
        col = assemble_collocation(sys, basis, rule)
        w_col = col.outputs(solve_nodes(col, cfg, t))[:, 0]
        gal = assemble_galerkin(sys, basis, rule)
        w_gal = gal.outputs(integrate(gal, (0.0, 1.0), gal.v0, cfg, t_eval=t).sample_states)[:, 0]
        exact = exact_decay_coefficients(basis, t)
        np.testing.assert_allclose(w_col, exact, atol=1e-7)
        np.testing.assert_allclose(w_gal, exact, atol=1e-7)

    def test_cache_and_workers(self, scrapie_collocation, tmp_path):
        col = scrapie_collocation
        cfg = IntegratorConfig(rel_tol=1e-3, abs_tol=1e-6)
        t = np.linspace(0.0, 500.0, 5)
        first = solve_nodes(col, cfg, t, cache_dir=tmp_path)
        assert len(list(tmp_path.glob("node-*.npz"))) == col.k
        again = solve_nodes(col, cfg, t, cache_dir=tmp_path, workers=4)
        plain = solve_nodes(col, cfg, t, workers=4)
        np.testing.assert_array_equal(first, again)
        np.testing.assert_array_equal(first, plain)

    def test_converges_to_tight_reference(self):
        from scipy.integrate import solve_ivp

        basis = BasisSpec.total_degree(SCRAPIE.box, 1)
        rule = tensor_rule(SCRAPIE.box, 1)
        col = assemble_collocation(SCRAPIE, basis, rule)
        t = np.linspace(0.0, 500.0, 50)
        p = rule.nodes[0]
        ref = solve_ivp(lambda s, x: eval_rhs(SCRAPIE, s, x, p), (0, 500), SCRAPIE.x0_at(p), method="Radau",
                        rtol=1e-12, atol=1e-14, t_eval=t).y.T
        errs = [np.abs(solve_nodes(col, IntegratorConfig(rel_tol=tol, abs_tol=tol * 1e-2), t) - ref).max()
                for tol in (1e-3, 1e-5, 1e-7)]
        assert errs[0] > errs[1] > errs[2]
        assert errs[2] < 1e-5

    def test_coupled_matches_blockwise(self):
        basis = BasisSpec.total_degree(SCRAPIE.box, 1)
        rule = tensor_rule(SCRAPIE.box, 2)
        col = assemble_collocation(SCRAPIE, basis, rule)
        t = np.linspace(0.0, 500.0, 20)
        diffs = []
        for tol in (1e-5, 1e-8):
            cfg = IntegratorConfig(rel_tol=tol, abs_tol=tol * 1e-3)
            coupled = solve_coupled(col, cfg, t_eval=t).sample_states
            diffs.append(np.abs(coupled - solve_nodes(col, cfg, t)).max())
        # shared and per-node step sizes solve the same equations
        assert diffs[1] < diffs[0] / 10
        assert diffs[1] < 1e-6

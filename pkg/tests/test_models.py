import numpy as np
import pytest
import sympy
from hypothesis import given, settings
from hypothesis import strategies as st

from pcmor.models import (
    AffineMatrix,
    ConsistencyError,
    ModelEvaluationError,
    consistent_init,
    eval_rhs,
    get_model,
    is_index_one,
    load_model,
    scrapie,
    transistor_amplifier,
)

SCRAPIE = scrapie()
AMP = transistor_amplifier()

positive = st.floats(0.0, 2.0, allow_nan=False)


def scrapie_symbolic_rhs():
    x1, x2, x3 = sympy.symbols("x1 x2 x3")
    p = sympy.symbols("p1:6")
    rhs = [
        -p[0] * x1 + p[1] * x2 - p[4] * x1 * x3,
        p[0] * x1 - p[1] * x2 - 2 * p[2] * x2**2 + 2 * p[3] * x3 + p[4] * x1 * x3,
        p[2] * x2**2 - p[3] * x3,
    ]
    return sympy.lambdify([(x1, x2, x3), p], rhs)


class TestAffineMatrix:
    def test_evaluation(self):
        M = AffineMatrix([[1.0, 0.0]], {1: [[0.0, 2.0]]}, q=2)
        np.testing.assert_allclose(M([5.0, 3.0]), [[1.0, 6.0]])
        np.testing.assert_allclose(M(np.array([[0.0, 1.0], [0.0, 2.0]])), [[[1.0, 2.0]], [[1.0, 4.0]]])

    def test_bad_index(self):
        with pytest.raises(ValueError):
            AffineMatrix(np.eye(2), {3: np.eye(2)}, q=2)

    def test_bad_shape(self):
        with pytest.raises(ValueError):
            AffineMatrix(np.eye(2), {0: np.eye(3)}, q=1)


class TestScrapie:
    def test_zero_state(self):
        np.testing.assert_array_equal(eval_rhs(SCRAPIE, 0.0, np.zeros(3), SCRAPIE.box.upper), 0.0)

    def test_nominal_value(self):
        got = eval_rhs(SCRAPIE, 0.0, [1.0, 0.0, 0.1], SCRAPIE.box.nominal)
        # p1 x1 = 1e-5, p4 x3 = 1e-5, p5 x1 x3 = 0.1 * 1 * 0.1, x2 = 0
        want = [-1e-5 - 0.01, 1e-5 + 2e-4 * 0.1 + 0.01, -1e-5]
        np.testing.assert_allclose(got, want, rtol=1e-14)

    @settings(max_examples=40)
    @given(st.tuples(positive, positive, positive), st.tuples(*[st.floats(0.0, 1.0)] * 5))
    def test_matches_symbolic(self, x, s):
        p = SCRAPIE.box.lower + np.array(s) * (SCRAPIE.box.upper - SCRAPIE.box.lower)
        want = scrapie_symbolic_rhs()(x, p)
        np.testing.assert_allclose(eval_rhs(SCRAPIE, 0.0, x, p), want, rtol=1e-12, atol=1e-15)

    @settings(max_examples=40)
    @given(st.tuples(positive, positive, positive), st.tuples(*[st.floats(0.0, 1.0)] * 5))
    def test_conserved_quantity(self, x, s):
        p = SCRAPIE.box.lower + np.array(s) * (SCRAPIE.box.upper - SCRAPIE.box.lower)
        rhs = eval_rhs(SCRAPIE, 0.0, x, p)
        assert abs(rhs[0] + rhs[1] + 2 * rhs[2]) < 1e-14

    def test_jacobian_finite_difference(self):
        x = np.array([0.7, 0.2, 0.4])
        p = SCRAPIE.box.upper
        J = SCRAPIE.jac_F_at(x, p)
        eps = 1e-7
        fd = np.column_stack([(SCRAPIE.F_at(x + eps * e, p) - SCRAPIE.F_at(x - eps * e, p)) / (2 * eps) for e in np.eye(3)])
        np.testing.assert_allclose(J, fd, atol=1e-8)

    def test_vectorised(self):
        P = np.tile(SCRAPIE.box.nominal, (4, 1))
        X = np.tile([1.0, 0.5, 0.1], (4, 1))
        assert SCRAPIE.F_at(X, P).shape == (4, 3)
        assert SCRAPIE.jac_F_at(X, P).shape == (4, 3, 3)
        assert SCRAPIE.A_at(P).shape == (4, 3, 3)

    def test_ode_init_unchanged(self):
        np.testing.assert_array_equal(consistent_init(SCRAPIE, SCRAPIE.box.nominal), [1.0, 0.0, 0.1])


class TestAmplifier:
    def test_dimensions(self):
        assert (AMP.n, AMP.q, AMP.n_in, AMP.n_out) == (5, 10, 2, 1)
        assert AMP.is_dae
        assert np.linalg.matrix_rank(AMP.E_at(AMP.box.nominal)) == 3

    @pytest.mark.parametrize("where", ["nominal", "lower", "upper"])
    def test_consistent_init(self, where):
        p = getattr(AMP.box, where)
        x = consistent_init(AMP, p)
        E = AMP.E_at(p)
        U, s, _ = np.linalg.svd(E)
        W = U[:, 3:]
        res = W.T @ eval_rhs(AMP, 0.0, x, p)
        assert np.linalg.norm(res) < 1e-12 * max(1.0, np.abs(x).max())
        assert is_index_one(AMP, p, x)

    def test_consistent_derivative(self):
        # E x' = rhs is solvable for x' at a consistent state
        p = AMP.box.nominal
        x = consistent_init(AMP, p)
        E = AMP.E_at(p)
        rhs = eval_rhs(AMP, 0.0, x, p)
        xdot, *_ = np.linalg.lstsq(E, rhs, rcond=None)
        assert np.linalg.norm(E @ xdot - rhs) < 1e-10 * max(1.0, np.linalg.norm(rhs))

    def test_parameter_dependent_init(self):
        a = consistent_init(AMP, AMP.box.lower)
        b = consistent_init(AMP, AMP.box.upper)
        assert np.abs(a - b).max() > 1e-4

    def test_overflow_reported(self):
        x = np.array([0.0, 100.0, 0.0, 0.0, 0.0])
        with pytest.raises(ModelEvaluationError):
            eval_rhs(AMP, 0.0, x, AMP.box.nominal)

    def test_jacobian_finite_difference(self):
        x = consistent_init(AMP, AMP.box.nominal)
        J = AMP.jac_F_at(x, AMP.box.nominal)
        eps = 1e-7
        fd = np.column_stack(
            [(AMP.F_at(x + eps * e, AMP.box.nominal) - AMP.F_at(x - eps * e, AMP.box.nominal)) / (2 * eps) for e in np.eye(5)]
        )
        np.testing.assert_allclose(J, fd, rtol=1e-6, atol=1e-10)

    def test_input(self):
        np.testing.assert_allclose(AMP.input(0.0025), [0.4, 1.0])


class TestRegistry:
    def test_get_model_overrides(self):
        sys = get_model("scrapie", variation=0.2)
        np.testing.assert_allclose(sys.box.upper, 1.2 * sys.box.nominal)

    def test_unknown(self):
        with pytest.raises(KeyError):
            get_model("nope")


YAML_MODEL = """
name: decay
n: 2
n_in: 1
n_out: 1
parameters:
  nominal: [1.0, 2.0]
  variation: 0.1
A:
  const: [[0, 0], [0, 0]]
  terms:
    1: [[-1, 0], [0, 0]]
    2: [[0, 0], [0, -1]]
C: [[1, 1]]
x0: [1.0, 0.5]
F:
  kind: polynomial
  terms:
    - {row: 1, coef: -0.5, param: 1, powers: [1, 1]}
t_span: [0, 2]
"""


class TestLoadModel:
    def test_yaml(self, tmp_path):
        path = tmp_path / "decay.yaml"
        path.write_text(YAML_MODEL)
        sys = load_model(path)
        assert (sys.n, sys.q, sys.is_dae) == (2, 2, False)
        p = np.array([1.0, 2.0])
        x = np.array([0.3, 0.4])
        want = [-1.0 * 0.3 - 0.5 * 1.0 * 0.3 * 0.4, -2.0 * 0.4]
        np.testing.assert_allclose(eval_rhs(sys, 0.0, x, p), want)
        J = sys.jac_F_at(x, p)
        np.testing.assert_allclose(J, [[-0.5 * 0.4, -0.5 * 0.3], [0.0, 0.0]])
        assert get_model(str(path)).name == "decay"

    def test_bad_shape(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text(YAML_MODEL.replace("C: [[1, 1]]", "C: [[1, 1, 1]]"))
        with pytest.raises(ValueError):
            load_model(path)


def test_consistency_error_raised():
    # a singular algebraic block cannot be solved
    from dataclasses import replace

    sys = replace(AMP, A=lambda p: np.zeros((5, 5)), F=None, jac_F=None)
    with pytest.raises((ConsistencyError, np.linalg.LinAlgError)):
        consistent_init(sys, AMP.box.nominal)

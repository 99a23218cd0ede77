import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcmor.pcbasis import BasisSpec, ParameterBox, evaluate_basis
from pcmor.quadrature import (
    QuadratureError,
    QuadratureRule,
    expect,
    gauss_legendre_1d,
    sparse_grid,
    tensor_rule,
)


def unit_box(q):
    return ParameterBox(-np.ones(q), np.ones(q))


def uniform_moment(powers):
    """Closed form of E[prod x_j^a_j] for x uniform on [-1, 1]^q."""
    out = 1.0
    for a in powers:
        out *= 0.0 if a % 2 else 1.0 / (a + 1)
    return out


def rule_moment(rule, powers):
    xi = rule.box.to_reference(rule.nodes)
    return float(np.sum(rule.weights * np.prod(xi ** np.asarray(powers), axis=1)))


class TestGaussLegendre:
    def test_one_point(self):
        x, w = gauss_legendre_1d(1)
        assert x.tolist() == [0.0] and w.tolist() == [1.0]

    def test_two_point(self):
        x, w = gauss_legendre_1d(2)
        np.testing.assert_allclose(x, [-1 / np.sqrt(3), 1 / np.sqrt(3)], atol=1e-15)
        np.testing.assert_allclose(w, [0.5, 0.5])

    def test_three_point(self):
        x, w = gauss_legendre_1d(3)
        np.testing.assert_allclose(x, [-np.sqrt(0.6), 0.0, np.sqrt(0.6)], atol=1e-15)
        np.testing.assert_allclose(w, [5 / 18, 4 / 9, 5 / 18], atol=1e-15)

    @given(st.integers(1, 25))
    def test_exactness(self, n):
        x, w = gauss_legendre_1d(n)
        assert abs(w.sum() - 1.0) < 1e-14
        assert np.all(np.diff(x) > 0)
        for deg in range(2 * n):
            assert abs(np.dot(w, x**deg) - uniform_moment([deg])) < 1e-13

    def test_not_exact_beyond(self):
        x, w = gauss_legendre_1d(3)
        assert abs(np.dot(w, x**6) - 1 / 7) > 1e-3

    @pytest.mark.parametrize("n", [0, -1, 2.5])
    def test_invalid(self, n):
        with pytest.raises(ValueError):
            gauss_legendre_1d(n)


class TestTensorRule:
    def test_scrapie_node_count(self):
        box = ParameterBox.around([1e-5, 0.1, 1.0, 1e-4, 0.1], 0.1)
        assert tensor_rule(box, 3).k == 243

    def test_one_dimensional(self):
        box = ParameterBox([2.0], [6.0])
        rule = tensor_rule(box, 4)
        x, w = gauss_legendre_1d(4)
        np.testing.assert_allclose(rule.nodes[:, 0], 4.0 + 2.0 * x)
        np.testing.assert_allclose(rule.weights, w)

    def test_two_by_two(self):
        rule = tensor_rule(unit_box(2), 2)
        assert rule.k == 4
        np.testing.assert_allclose(rule.weights, 0.25)

    @settings(max_examples=20)
    @given(st.integers(1, 4), st.lists(st.integers(0, 7), min_size=3, max_size=3))
    def test_per_axis_exactness(self, n, powers):
        rule = tensor_rule(unit_box(3), n)
        if max(powers) <= 2 * n - 1:
            assert abs(rule_moment(rule, powers) - uniform_moment(powers)) < 1e-13

    def test_cap(self):
        with pytest.raises(ValueError):
            tensor_rule(unit_box(10), 10, cap=1000)


class TestSparseGrid:
    @pytest.mark.parametrize("level", [1, 2, 3, 4])
    @pytest.mark.parametrize("growth", ["linear", "exponential"])
    def test_one_dimensional_collapse(self, level, growth):
        rule = sparse_grid(unit_box(1), level, growth)
        n = level if growth == "linear" else 2**level - 1
        x, w = gauss_legendre_1d(n)
        np.testing.assert_allclose(rule.nodes[:, 0], x, atol=1e-14)
        np.testing.assert_allclose(rule.weights, w, atol=1e-14)

    def test_level_two_linear_exact_degree_three(self):
        rule = sparse_grid(unit_box(2), 2, "linear")
        for powers in itertools.product(range(4), repeat=2):
            if sum(powers) <= 3:
                assert abs(rule_moment(rule, powers) - uniform_moment(powers)) < 1e-14

    @pytest.mark.parametrize("q, level", [(3, 3), (4, 4)])
    def test_total_degree_exactness(self, q, level):
        rule = sparse_grid(unit_box(q), level, "linear")
        for powers in itertools.product(range(2 * level), repeat=q):
            if sum(powers) <= 2 * level - 1:
                assert abs(rule_moment(rule, powers) - uniform_moment(powers)) < 1e-13

    @pytest.mark.parametrize("level, k", [(1, 1), (2, 21), (3, 261), (4, 2441)])
    def test_ten_dimensional_exponential_counts(self, level, k):
        assert sparse_grid(unit_box(10), level, "exponential").k == k

    def test_negative_weights_allowed(self):
        rule = sparse_grid(unit_box(3), 3, "linear")
        assert rule.weights.min() < 0
        assert abs(rule.weights.sum() - 1) < 1e-13

    def test_invalid(self):
        with pytest.raises(ValueError):
            sparse_grid(unit_box(2), 0)
        with pytest.raises(ValueError):
            sparse_grid(unit_box(2), 2, "cubic")

    def test_cap(self):
        with pytest.raises(ValueError):
            sparse_grid(unit_box(10), 4, "exponential", cap=100)


class TestQuadratureRule:
    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError):
            QuadratureRule([[0.0]], [0.5])

    def test_nodes_inside_box(self):
        with pytest.raises(ValueError):
            QuadratureRule([[2.0]], [1.0], unit_box(1))

    def test_csv_roundtrip(self, tmp_path):
        rule = sparse_grid(ParameterBox([0.0, 1.0], [1.0, 3.0]), 3)
        rule.to_csv(tmp_path / "rule.csv")
        back = QuadratureRule.from_csv(tmp_path / "rule.csv", rule.box)
        np.testing.assert_array_equal(back.nodes, rule.nodes)
        np.testing.assert_array_equal(back.weights, rule.weights)


class TestExpect:
    def test_constant(self):
        rule = sparse_grid(unit_box(3), 3)
        np.testing.assert_allclose(expect(rule, lambda p: 2.5), 2.5)

    def test_identity_gives_midpoint(self):
        box = ParameterBox([1.0, 10.0], [3.0, 20.0])
        np.testing.assert_allclose(expect(tensor_rule(box, 3), lambda p: p), [2.0, 15.0])

    def test_orthonormality(self):
        spec = BasisSpec.total_degree(unit_box(2), 3)
        rule = tensor_rule(spec.box, 4)
        G = expect(rule, lambda p: np.outer(evaluate_basis(spec, p), evaluate_basis(spec, p)))
        np.testing.assert_allclose(G, np.eye(spec.m), atol=1e-14)

    @pytest.mark.parametrize("kwargs", [{}, {"workers": 3}, {"vectorized": True}])
    def test_modes_agree(self, kwargs):
        rule = tensor_rule(unit_box(2), 3)
        f = (lambda P: np.sin(P)) if kwargs.get("vectorized") else np.sin
        want = expect(rule, np.sin)
        np.testing.assert_allclose(expect(rule, f, **kwargs), want, atol=1e-15)

    def test_failure_reports_node(self):
        rule = tensor_rule(unit_box(1), 3)

        def f(p):
            if p[0] > 0.5:
                raise ZeroDivisionError("boom")
            return p

        with pytest.raises(QuadratureError) as info:
            expect(rule, f)
        assert info.value.index == 2

    def test_non_finite(self):
        rule = tensor_rule(unit_box(1), 3)
        with pytest.raises(QuadratureError) as info:
            expect(rule, lambda P: np.where(P > 0.5, np.inf, P), vectorized=True)
        assert info.value.index == 2

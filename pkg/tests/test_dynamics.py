import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from safereach.dynamics import (DynamicsError, InclusionSpec, LINEAR_SAFE_A,
                                Selector, builtin_field, eval_inclusion,
                                field_from_expressions, inclusion_extreme_points,
                                lipschitz_estimate, negate, rescale_field, select)
from safereach.geometry import SetSpec


class TestBuiltins:
    def test_counterexample_vanishes_at_origin(self):
        f = builtin_field("counterexample2d")
        assert np.array_equal(f(np.zeros(2)), np.zeros(2))

    def test_radial_zero_on_limit_cycles(self):
        f = builtin_field("counterexample_radial")
        for k in (1, 2, 5):
            assert abs(f(np.array([1.0 / (k * np.pi)]))[0]) < 1e-30

    def test_linear_safe_matrix_product(self):
        f = builtin_field("linear_safe")
        assert np.allclose(f(np.array([1.0, 0.0])), [-1.0, 1.0])
        x = np.array([0.3, -0.7])
        assert np.allclose(f(x), LINEAR_SAFE_A @ x)

    def test_unknown_name(self):
        with pytest.raises(DynamicsError):
            builtin_field("nope")

    def test_polar_consistency(self):
        # radial rate (r^2/2) sin^2(1/r) and angular rate 1, on random points
        f = builtin_field("counterexample2d")
        rng = np.random.default_rng(42)
        X = rng.uniform(-1.0, 1.0, size=(1000, 2))
        X = X[np.linalg.norm(X, axis=1) > 1e-3]
        V = f(X)
        r = np.linalg.norm(X, axis=1)
        radial = (X * V).sum(axis=1) / r
        expected = 0.5 * r ** 2 * np.sin(1.0 / r) ** 2
        assert np.max(np.abs(radial - expected)) < 1e-10
        angular = (X[:, 0] * V[:, 1] - X[:, 1] * V[:, 0]) / r ** 2
        assert np.max(np.abs(angular - 1.0)) < 1e-10

    def test_radial_matches_planar_radial_rate(self):
        f2 = builtin_field("counterexample2d")
        f1 = builtin_field("counterexample_radial")
        for r in (0.07, 0.2, 0.9):
            x = np.array([r, 0.0])
            radial = x @ f2(x) / r
            assert radial == pytest.approx(f1(np.array([r]))[0], abs=1e-14)


class TestInclusion:
    def test_singleton_eval(self):
        F = InclusionSpec.singleton(builtin_field("linear_safe"))
        ev = eval_inclusion(F, np.array([1.0, 0.0]))
        assert ev.radius == 0.0
        assert np.allclose(ev.vertices, [[-1.0, 1.0]])

    def test_ball_degenerates_to_singleton(self):
        F = InclusionSpec.ball_perturbed(builtin_field("linear_safe"), 0.0)
        assert eval_inclusion(F, np.zeros(2)).radius == 0.0

    def test_hull_of_f_and_minus_f(self):
        f = builtin_field("linear_safe")
        F = InclusionSpec.hull([f, f.negated()])
        ev = eval_inclusion(F, np.array([0.5, 0.5]))
        assert np.allclose(ev.vertices[0], -ev.vertices[1])

    def test_selection_is_member(self):
        f = builtin_field("linear_safe")
        x = np.array([0.7, -0.2])
        F = InclusionSpec.ball_perturbed(f, 0.1)
        u = np.array([0.6, 0.8])
        v = select(F, x, Selector.constant(u))
        assert np.allclose(v, f(x) + 0.1 * u)
        assert np.linalg.norm(v - f(x)) <= 0.1 + 1e-12
        H = InclusionSpec.hull([f, f.negated()])
        w = select(H, x, Selector.constant([0.5, 0.5]))
        assert np.allclose(w, 0.0)

    def test_singleton_ignores_selector(self):
        F = InclusionSpec.singleton(builtin_field("linear_safe"))
        x = np.array([1.0, 1.0])
        assert np.allclose(select(F, x, Selector.constant()),
                           F.fields[0](x))

    def test_selector_validation(self):
        f = builtin_field("linear_safe")
        F = InclusionSpec.ball_perturbed(f, 0.1)
        with pytest.raises(DynamicsError):
            select(F, np.zeros(2), Selector.constant([1.0, 1.0]))  # not unit
        H = InclusionSpec.hull([f, f.negated()])
        with pytest.raises(DynamicsError):
            select(H, np.zeros(2), Selector.constant([0.7, 0.7]))  # sum != 1

    def test_extreme_points_on_ball(self):
        f = builtin_field("linear_safe")
        F = InclusionSpec.ball_perturbed(f, 0.25)
        x = np.array([1.0, 0.0])
        pts = inclusion_extreme_points(F, x, directions=8)
        assert len(pts) == 8
        assert np.allclose(np.linalg.norm(pts - f(x), axis=1), 0.25)

    @given(st.floats(0, 2 * np.pi), st.floats(0, 1),
           st.lists(st.floats(-3, 3), min_size=2, max_size=2))
    @settings(max_examples=40, deadline=None)
    def test_selection_always_member_of_inclusion(self, angle, w0, xs):
        # selected velocities sit inside F(x) to round-off for every variant
        f = builtin_field("linear_safe")
        x = np.array(xs)
        u = np.array([np.cos(angle), np.sin(angle)])
        ball = InclusionSpec.ball_perturbed(f, 0.3)
        v = select(ball, x, Selector.constant(u))
        assert np.linalg.norm(v - f(x)) <= 0.3 + 1e-12
        hull = InclusionSpec.hull([f, f.negated()])
        w = np.array([w0, 1.0 - w0])
        v2 = select(hull, x, Selector.constant(w))
        # distance to the segment [f(x), -f(x)]
        a, b = f(x), -f(x)
        seg = b - a
        tt = 0.0 if seg @ seg == 0 else np.clip((v2 - a) @ seg / (seg @ seg), 0, 1)
        assert np.linalg.norm(v2 - (a + tt * seg)) <= 1e-12

    def test_piecewise_selector(self):
        s = Selector.piecewise([1.0, 2.0], [[1, 0], [0, 1], [-1, 0]])
        assert np.allclose(s.direction_at(0.5), [1, 0])
        assert np.allclose(s.direction_at(1.5), [0, 1])
        assert np.allclose(s.direction_at(2.5), [-1, 0])
        with pytest.raises(DynamicsError):
            Selector.piecewise([2.0, 1.0], [[1, 0]] * 3)


class TestNegate:
    def test_pointwise(self):
        f = builtin_field("linear_safe")
        F = InclusionSpec.singleton(f)
        x = np.array([0.4, 0.9])
        assert np.allclose(negate(F).fields[0](x), -f(x))

    def test_involution(self):
        F = InclusionSpec.singleton(builtin_field("counterexample2d"))
        G = negate(negate(F))
        pts = np.random.default_rng(5).normal(size=(20, 2))
        assert np.allclose(G.fields[0](pts), F.fields[0](pts))

    def test_ball_radius_preserved(self):
        F = InclusionSpec.ball_perturbed(builtin_field("linear_safe"), 0.3)
        G = negate(F)
        x = np.array([1.0, 2.0])
        ev = eval_inclusion(G, x)
        assert ev.radius == 0.3
        assert np.allclose(ev.center, -F.fields[0](x))


def _sqnorm(X):
    return (np.atleast_2d(X) ** 2).sum(axis=1)


class TestRescale:
    def test_zero_on_zero_set(self):
        f = rescale_field(builtin_field("linear_safe"), _sqnorm)
        assert np.allclose(f(np.zeros(2)), 0.0)

    def test_large_v_limit(self):
        base = builtin_field("linear_safe")
        f = rescale_field(base, _sqnorm)
        x = np.array([50.0, 0.0])
        assert np.allclose(f(x), base(x), rtol=1e-3)

    def test_constant_v_is_half(self):
        base = builtin_field("linear_safe")
        f = rescale_field(base, lambda X: np.ones(len(np.atleast_2d(X))))
        x = np.array([1.0, -1.0])
        assert np.allclose(f(x), 0.5 * base(x))

    def test_norm_never_exceeds_base(self):
        base = builtin_field("counterexample2d")
        f = rescale_field(base, _sqnorm)
        pts = np.random.default_rng(0).normal(size=(100, 2))
        assert np.all(np.linalg.norm(f(pts), axis=1)
                      <= np.linalg.norm(base(pts), axis=1) + 1e-15)

    def test_negative_v_rejected(self):
        f = rescale_field(builtin_field("linear_safe"),
                          lambda X: -np.ones(len(np.atleast_2d(X))))
        with pytest.raises(DynamicsError):
            f(np.ones(2))


class TestLipschitzEstimate:
    box = SetSpec.box([-3, -3], [3, 3])

    def test_linear_matches_operator_norm(self):
        F = InclusionSpec.singleton(builtin_field("linear_safe"))
        est = lipschitz_estimate(F, self.box, grid=9)
        sigma = np.linalg.norm(LINEAR_SAFE_A, 2)
        assert est <= sigma + 1e-9
        assert est >= 0.98 * sigma

    def test_constant_field(self):
        F = InclusionSpec.singleton(field_from_expressions(["1", "2"], "const"))
        assert lipschitz_estimate(F, self.box, grid=5) == 0.0

    def test_identity_field(self):
        F = InclusionSpec.singleton(field_from_expressions(["x1", "x2"], "id"))
        assert lipschitz_estimate(F, SetSpec.box([0, 0], [1, 1]), grid=5) \
            == pytest.approx(1.0, abs=1e-12)

    def test_hull_uses_vertex_hausdorff(self):
        f = field_from_expressions(["x1", "x2"], "id")
        F = InclusionSpec.hull([f, f.negated()])
        est = lipschitz_estimate(F, SetSpec.box([0, 0], [1, 1]), grid=4)
        assert est == pytest.approx(1.0, abs=1e-9)


class TestExpressionFields:
    def test_vectorized_evaluation(self):
        f = field_from_expressions(["0 - x2", "x1"], "rot")
        X = np.random.default_rng(1).normal(size=(10, 2))
        V = f(X)
        assert np.allclose(V[:, 0], -X[:, 1]) and np.allclose(V[:, 1], X[:, 0])

    def test_functions_and_powers(self):
        f = field_from_expressions(["sin(x1)^2 + sqrt(abs(x2))", "x1 * x2"], "g")
        v = f(np.array([0.5, 4.0]))
        assert v[0] == pytest.approx(np.sin(0.5) ** 2 + 2.0)
        assert v[1] == pytest.approx(2.0)

    def test_bad_symbol_rejected(self):
        from safereach.expr import ExpressionError
        with pytest.raises(ExpressionError):
            field_from_expressions(["y1 + 1"], "bad")

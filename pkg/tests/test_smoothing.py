import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from safereach.dynamics import builtin_field
from safereach.geometry import SetSpec, distance_to_set_many
from safereach.smoothing import (ConverseResolution, SmoothingError,
                                 annulus_points, build_time_partition,
                                 converse_smooth_barrier, hermite_segment,
                                 smooth_global, smooth_on_compact)
from safereach.solver import IntegratorConfig


def exp_decay(t, X):
    return np.exp(-t) * np.linalg.norm(np.atleast_2d(X), axis=1)


def annulus_grid(n=41, lo=0.5, hi=1.0):
    ax = np.linspace(-hi, hi, n)
    gx, gy = np.meshgrid(ax, ax, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    r = np.linalg.norm(pts, axis=1)
    return pts[(r >= lo) & (r <= hi)]


class TestHermiteSegment:
    def test_endpoint_identities(self):
        assert hermite_segment(0.0, 0.0, 1.0, 3.0, 1.0) == 3.0
        assert hermite_segment(1.0, 0.0, 1.0, 3.0, 1.0) == 1.0

    def test_midpoint_is_mean(self):
        assert hermite_segment(0.5, 0.0, 1.0, 3.0, 1.0) == pytest.approx(2.0, abs=1e-15)

    def test_constant_segment(self):
        ts = np.linspace(0.2, 0.7, 11)
        assert all(hermite_segment(t, 0.2, 0.7, 5.0, 5.0) == 5.0 for t in ts)

    def test_outside_segment_rejected(self):
        with pytest.raises(SmoothingError):
            hermite_segment(1.5, 0.0, 1.0, 1.0, 0.0)

    @given(st.floats(-10, 10), st.floats(-10, 10),
           st.floats(0.05, 5.0), st.floats(-3, 3))
    @settings(max_examples=200, deadline=None)
    def test_contract_random_segments(self, w0, w1, width, t0):
        t1 = t0 + width
        # endpoint values exact
        assert hermite_segment(t0, t0, t1, w0, w1) == w0
        assert hermite_segment(t1, t0, t1, w0, w1) == w1
        # midpoint = mean
        mid = hermite_segment(t0 + width / 2, t0, t1, w0, w1)
        assert mid == pytest.approx((w0 + w1) / 2, abs=1e-12 * max(1, abs(w0), abs(w1)))
        # flat endpoint derivatives (central difference, step 1e-6)
        h = 1e-6
        d0 = (hermite_segment(t0 + h, t0, t1, w0, w1)
              - hermite_segment(t0 - h, t0, t1, w0, w1)) / (2 * h)
        d1 = (hermite_segment(t1 + h, t0, t1, w0, w1)
              - hermite_segment(t1 - h, t0, t1, w0, w1)) / (2 * h)
        assert abs(d0) <= 1e-6 and abs(d1) <= 1e-6
        # monotone between endpoint values
        scale = max(1.0, abs(w1 - w0))
        samples = [hermite_segment(t, t0, t1, w0, w1)
                   for t in np.linspace(t0, t1, 9)]
        diffs = np.diff(samples)
        if w0 > w1:
            assert np.all(diffs <= 1e-12 * scale)
        elif w0 < w1:
            assert np.all(diffs >= -1e-12 * scale)


class TestTimePartition:
    def test_constant_h_trivial_partition(self):
        grid = annulus_grid(21)
        h = lambda t, X: 2.5 * np.ones(len(np.atleast_2d(X)))
        part = build_time_partition(h, grid, k_max=4, table_res=64)
        assert part.u_counts == (1, 1, 1, 1)
        assert np.allclose(part.eta, 2.5)
        assert part.zeta_budget_ok()

    def test_exponential_decay_analytic_u(self):
        # oracle: u must satisfy 1 - exp(-1/u) < exp(-1)/8, i.e. u >= 22,
        # and the doubling search lands on 32 for every unit interval
        grid = annulus_grid(41)
        part = build_time_partition(exp_decay, grid, k_max=3, table_res=256)
        assert part.u_counts == (32, 32, 32)
        assert np.allclose(part.eta, 0.5 * np.exp(-np.arange(1, 4)), rtol=1e-12)

    def test_eta_positive_nonincreasing(self):
        part = build_time_partition(exp_decay, annulus_grid(21), k_max=3,
                                    table_res=128)
        assert np.all(part.eta > 0)
        assert np.all(np.diff(part.eta) <= 0)

    def test_oscillation_bound_on_nodes(self):
        part = build_time_partition(exp_decay, annulus_grid(21), k_max=2,
                                    table_res=128)
        idx = part.node_table_indices()
        for k in range(1, part.k_max + 1):
            j0, j1 = part.block_offsets[k - 1], part.block_offsets[k]
            for i in range(j0, j1):
                drop = part.table[idx[i]] - part.table[idx[i + 1]]
                assert np.max(drop) < part.eta[k - 1] / 4.0

    def test_zeta_positive_nonincreasing_budget(self):
        part = build_time_partition(exp_decay, annulus_grid(21), k_max=3,
                                    table_res=128)
        assert np.all(part.zeta > 0)
        assert np.all(np.diff(part.zeta) <= 0)
        assert part.zeta_budget_ok()
        for k in range(1, part.k_max + 1):
            jk = part.block_offsets[k - 1]
            assert part.zeta[jk:].sum() < part.eta[k - 1] / 8.0

    def test_zero_locus_rejected(self):
        grid = np.array([[0.0, 0.0], [0.5, 0.0]])
        with pytest.raises(SmoothingError, match="zero locus"):
            build_time_partition(exp_decay, grid, k_max=1, table_res=16)

    def test_nonmonotone_h_rejected(self):
        h = lambda t, X: (1.0 + np.sin(t)) * np.ones(len(np.atleast_2d(X)))
        with pytest.raises(SmoothingError, match="nonincreasing"):
            build_time_partition(h, annulus_grid(11), k_max=2, table_res=32)

    def test_subdivision_cap_is_loud(self):
        # oscillation too fast for the table resolution
        h = lambda t, X: (2.0 - np.tanh(40 * t)) * np.ones(len(np.atleast_2d(X)))
        with pytest.raises(SmoothingError, match="subdivisions"):
            build_time_partition(h, annulus_grid(11), k_max=1, table_res=16)


class TestSmoothOnCompact:
    def test_sandwich_and_monotonicity_on_grid(self):
        grid = annulus_grid(41)
        part = build_time_partition(exp_decay, grid, k_max=2, table_res=128)
        g = smooth_on_compact(exp_decay, part)
        ts = np.linspace(0.0, 2.0, 21)
        vals = g.sample_times(ts, grid)
        for i, t in enumerate(ts):
            hv = exp_decay(t, grid)
            assert np.all(vals[i] >= 0.5 * hv - 1e-12)
            assert np.all(vals[i] <= 2.0 * hv + 1e-12)
        assert np.all(np.diff(vals, axis=0) <= 1e-12)

    def test_constant_h_reproduced(self):
        grid = annulus_grid(21)
        c = 1.7
        h = lambda t, X: c * np.ones(len(np.atleast_2d(X)))
        part = build_time_partition(h, grid, k_max=2, table_res=32)
        g = smooth_on_compact(h, part)
        assert np.allclose(g(0.7, grid), c, atol=1e-12)

    def test_time_signal_without_state_dependence(self):
        grid = np.array([[0.6, 0.0]])
        h = lambda t, X: np.exp(-t) * np.ones(len(np.atleast_2d(X)))
        part = build_time_partition(h, grid, k_max=2, table_res=64)
        g = smooth_on_compact(h, part)
        for t in (0.0, 0.5, 1.7):
            v = g.evaluate(t, np.array([0.6, 0.0]))
            assert 0.5 * np.exp(-t) <= v <= 2.0 * np.exp(-t)

    def test_certificate_present(self):
        grid = annulus_grid(21)
        part = build_time_partition(exp_decay, grid, k_max=1, table_res=64)
        g = smooth_on_compact(exp_decay, part)
        assert "fd_gradient_discrepancy" in g.certificate
        assert g.certificate["fd_gradient_discrepancy"] < 1e-2

    def test_off_grid_queries_stay_sandwiched(self):
        grid = annulus_grid(41)
        part = build_time_partition(exp_decay, grid, k_max=2, table_res=128)
        g = smooth_on_compact(exp_decay, part)
        probe = annulus_grid(29, 0.55, 0.95)      # off-construction points
        for t in (0.0, 0.31, 1.9):
            hv = exp_decay(t, probe)
            gv = g(t, probe)
            assert np.all(gv >= 0.5 * hv) and np.all(gv <= 2.0 * hv)


class TestSmoothGlobal:
    K = SetSpec.points([[0.0, 0.0]], name="origin")

    @staticmethod
    def h_dist(t, X):
        # time-constant distance profile: positive off K, zero on K
        return np.linalg.norm(np.atleast_2d(X), axis=1)

    def test_zero_on_k(self):
        g = smooth_global(self.h_dist, self.K, range(-6, 1), k_max=1,
                          table_res=16, annulus_count=256)
        assert g.evaluate(0.5, np.zeros(2)) == 0.0

    def test_sandwich_on_shells(self):
        g = smooth_global(self.h_dist, self.K, range(-6, 1), k_max=1,
                          table_res=16, annulus_count=256)
        rng = np.random.default_rng(0)
        pts = rng.uniform(-1, 1, size=(200, 2))
        pts = pts[np.linalg.norm(pts, axis=1) > 0.1]
        hv = self.h_dist(0.0, pts)
        gv = g(0.3, pts)
        assert np.all(gv >= 0.5 * hv) and np.all(gv <= 2.0 * hv)

    def test_overlap_is_convex_combination(self):
        g = smooth_global(self.h_dist, self.K, range(-6, 1), k_max=1,
                          table_res=16, annulus_count=256)
        x = np.array([0.4, 0.0])
        y = np.log2(np.linalg.norm(x) ** 2)
        covering = [s for s in g.parts if s - 2.5 < y < s + 3.5]
        assert len(covering) >= 2
        vals = [g.parts[s].evaluate(0.3, x) for s in covering]
        glued = g.evaluate(0.3, x)
        assert min(vals) - 1e-12 <= glued <= max(vals) + 1e-12

    def test_uncovered_shell_raises(self):
        g = smooth_global(self.h_dist, self.K, range(-4, 0), k_max=1,
                          table_res=16, annulus_count=128)
        with pytest.raises(SmoothingError, match="coverage"):
            g.evaluate(0.0, np.array([1e-4, 0.0]))

    def test_validation_lists_missing_shells(self):
        pts = np.array([[1e-4, 0.0], [0.5, 0.0]])
        with pytest.raises(SmoothingError, match="shells"):
            smooth_global(self.h_dist, self.K, range(-4, 0), k_max=1,
                          table_res=16, annulus_count=128,
                          validation_points=pts)

    def test_dimension_cap(self):
        K3 = SetSpec.points([[0.0, 0.0, 0.0]])
        with pytest.raises(SmoothingError, match="dimension"):
            smooth_global(self.h_dist, K3, range(-2, 1))

    def test_box_k_generic_annuli(self):
        K = SetSpec.box([-0.2, -0.2], [0.2, 0.2], name="core")
        h = lambda t, X: distance_to_set_many(np.atleast_2d(X), K)
        g = smooth_global(h, K, range(-5, 1), k_max=1, table_res=16,
                          annulus_count=512, seed=2)
        pts = np.array([[0.5, 0.1], [0.9, -0.6], [-0.4, 0.45]])
        hv = h(0.0, pts)
        gv = g(0.5, pts)
        assert np.all(gv >= 0.5 * hv) and np.all(gv <= 2.0 * hv)

    def test_annulus_points_radial_structure(self):
        pts = annulus_points(self.K, -3, 200)
        d2 = (pts ** 2).sum(axis=1)
        assert np.all(d2 >= 2.0 ** -6 - 1e-12)
        assert np.all(d2 <= 2.0 ** 1 + 1e-12)


class TestConversePipeline:
    def test_small_counterexample_pipeline(self):
        f = builtin_field("counterexample2d")
        Xo = SetSpec.points([[0.0, 0.0]], name="origin")
        res = ConverseResolution(s_range=tuple(range(-8, 1)), k_max=4,
                                 table_res=32, annulus_count=256)
        B = converse_smooth_barrier(f, Xo, IntegratorConfig(step=1 / 256), res)
        # zero on X_o, positive off it
        assert B.evaluate(1.0, np.zeros(2)) == 0.0
        for x in ([0.3, 0.0], [0.0, -0.7], [0.5, 0.5]):
            assert B.evaluate(0.5, np.array(x)) > 0.0
        # nonincreasing along a forward trajectory of the original system
        from safereach.dynamics import InclusionSpec, Selector
        from safereach.solver import integrate
        F = InclusionSpec.singleton(f)
        tr = integrate(F, Selector.constant(), np.array([0.45, 0.0]), 1.5,
                       cfg=IntegratorConfig(step=1 / 256))
        idx = np.arange(0, len(tr.times), 64)
        vals = B.evaluate_many(tr.times[idx], tr.states[idx])
        assert np.all(np.diff(vals) <= 1e-7)

    def test_backward_touch_gives_zero(self):
        # points inside the ball X_o flow backward through it -> second branch;
        # outside points floor at a limit cycle above the ball radius
        f = builtin_field("counterexample2d")
        Xo = SetSpec.ball([0.0, 0.0], 0.05, name="core")
        res = ConverseResolution(s_range=tuple(range(-10, 1)), k_max=3,
                                 table_res=32, annulus_count=256)
        B = converse_smooth_barrier(f, Xo, IntegratorConfig(step=1 / 256), res)
        assert B.evaluate(2.0, np.array([0.02, 0.0])) == 0.0
        assert B.evaluate(2.0, np.array([0.2, 0.0])) > 0.0
        assert B.evaluate(0.0, np.array([0.8, 0.0])) > 0.0

"""Prox solvers: closed forms against numeric minimizers, median, joint solver."""

import numpy as np
import pytest

from mtgmm.prox import (
    JointPenalizedSolution,
    ProxProblem,
    clamp_w,
    geometric_median_residual,
    prox_scalar_w,
    prox_vector_beta,
    prox_vector_mu,
    solve_joint_penalized,
    weighted_geometric_median,
)


def golden_section(f, lo, hi, iters=200):
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


class TestProxScalarW:
    def test_soft_threshold_value(self):
        # threshold lam / sqrt(n) = 0.05
        assert prox_scalar_w(0.6, 400, 1.0, 0.5) == pytest.approx(0.55, abs=1e-10)

    def test_zero_penalty_exact(self):
        assert prox_scalar_w(0.6125, 100, 0.0, 0.5) == 0.6125

    def test_inside_threshold_snaps_to_anchor(self):
        assert prox_scalar_w(0.52, 100, 1.0, 0.5) == 0.5

    def test_clamping(self):
        assert prox_scalar_w(1.5, 100, 0.0, 0.5) == 1.0 - 1e-6
        assert prox_scalar_w(-0.5, 100, 0.0, 0.5) == 1e-6

    def test_matches_golden_section(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            gbar = rng.uniform(0.05, 0.95)
            anchor = rng.uniform(0.05, 0.95)
            n = int(rng.integers(1, 500))
            lam = rng.uniform(0.0, 2.0)
            f = lambda w: 0.5 * n * (w - gbar) ** 2 + np.sqrt(n) * lam * abs(w - anchor)
            oracle = golden_section(f, min(gbar, anchor) - 0.5, max(gbar, anchor) + 0.5)
            ours = prox_scalar_w(gbar, n, lam, anchor)
            assert ours == pytest.approx(oracle, abs=1e-6)
            assert f(ours) <= f(oracle) + 1e-10

    def test_lipschitz_in_target(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            anchor = rng.uniform(0.2, 0.8)
            n = int(rng.integers(1, 200))
            lam = rng.uniform(0.0, 1.0)
            g1, g2 = rng.uniform(0.1, 0.9, size=2)
            d_out = abs(prox_scalar_w(g1, n, lam, anchor) - prox_scalar_w(g2, n, lam, anchor))
            assert d_out <= abs(g1 - g2) + 1e-12


class TestProxVectorMu:
    def test_zero_penalty_exact(self):
        m = np.array([0.3, -0.7])
        out = prox_vector_mu(5.0, m, 100, 0.0, np.zeros(2))
        assert np.array_equal(out, m)

    def test_full_shrinkage(self):
        anchor = np.array([1.0, 2.0])
        out = prox_vector_mu(1.0, anchor + 0.1, 100, 5.0, anchor)
        assert np.array_equal(out, anchor)

    def test_partial_shrinkage_value(self):
        out = prox_vector_mu(10.0, np.array([1.0, 0.0]), 100, 0.2, np.zeros(2))
        np.testing.assert_allclose(out, [0.8, 0.0], atol=1e-12)

    def test_rejects_degenerate_weight(self):
        with pytest.raises(ValueError):
            prox_vector_mu(0.0, np.zeros(2), 10, 0.1, np.zeros(2))

    def test_matches_segment_line_search(self):
        # minimizer lies on the segment [anchor, m] (rotational symmetry
        # about the anchor-m axis plus convexity), so a 1-d golden section
        # along it is an independent oracle
        rng = np.random.default_rng(2)
        for _ in range(200):
            p = int(rng.integers(1, 6))
            a = rng.uniform(0.5, 30.0)
            n = int(rng.integers(1, 300))
            lam = rng.uniform(0.0, 1.5)
            m = rng.standard_normal(p)
            anchor = rng.standard_normal(p)
            tau = np.sqrt(n) * lam

            def f(mu):
                return 0.5 * a * np.sum((mu - m) ** 2) + tau * np.linalg.norm(mu - anchor)

            s = golden_section(lambda t: f(anchor + t * (m - anchor)), 0.0, 1.0)
            oracle = anchor + s * (m - anchor)
            ours = prox_vector_mu(a, m, n, lam, anchor)
            assert np.linalg.norm(ours - oracle) < 1e-6
            assert f(ours) <= f(oracle) + 1e-10

    def test_lipschitz_in_target(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            p = int(rng.integers(1, 5))
            a = rng.uniform(0.5, 10.0)
            n = int(rng.integers(1, 100))
            lam = rng.uniform(0.0, 1.0)
            anchor = rng.standard_normal(p)
            m1, m2 = rng.standard_normal(p), rng.standard_normal(p)
            d_out = np.linalg.norm(
                prox_vector_mu(a, m1, n, lam, anchor) - prox_vector_mu(a, m2, n, lam, anchor)
            )
            assert d_out <= np.linalg.norm(m1 - m2) + 1e-12


def random_spd(rng, p, lo=0.3, hi=3.0):
    q = np.linalg.qr(rng.standard_normal((p, p)))[0]
    sigma = q @ np.diag(rng.uniform(lo, hi, p)) @ q.T
    return 0.5 * (sigma + sigma.T)


def dual_projected_gradient_beta(sigma, d, n, lam, anchor, iters=400):
    """Independent oracle: maximize the dual on the tau-ball by projected
    gradient, then map back to the primal."""
    h = n * sigma
    b = n * d
    tau = np.sqrt(n) * lam
    h_inv = np.linalg.inv(h)
    step = np.linalg.eigvalsh(h)[0]
    u = np.zeros_like(d)
    for _ in range(iters):
        grad = h_inv @ (b - u) - anchor
        u = u + step * grad
        norm = np.linalg.norm(u)
        if norm > tau:
            u *= tau / norm
    return h_inv @ (b - u)


class TestProxVectorBeta:
    def test_zero_penalty_is_gls(self):
        rng = np.random.default_rng(4)
        sigma = random_spd(rng, 3)
        d = rng.standard_normal(3)
        out = prox_vector_beta(sigma, d, 50, 0.0, np.zeros(3))
        np.testing.assert_allclose(out, np.linalg.solve(sigma, d), atol=1e-10)

    def test_stationary_anchor_returned(self):
        rng = np.random.default_rng(5)
        sigma = random_spd(rng, 3)
        anchor = rng.standard_normal(3)
        d = sigma @ anchor
        out = prox_vector_beta(sigma, d, 10, 0.5, anchor)
        assert np.array_equal(out, anchor)

    def test_identity_curvature_soft_threshold(self):
        out = prox_vector_beta(np.eye(2), np.array([2.0, 0.0]), 1, 1.0, np.zeros(2))
        np.testing.assert_allclose(out, [1.0, 0.0], atol=1e-9)

    def test_matches_dual_projected_gradient(self):
        rng = np.random.default_rng(6)
        for _ in range(150):
            p = int(rng.integers(1, 6))
            sigma = random_spd(rng, p)
            d = rng.standard_normal(p)
            anchor = rng.standard_normal(p)
            n = int(rng.integers(1, 200))
            lam = rng.uniform(0.0, 1.5)
            tau = np.sqrt(n) * lam

            def f(b):
                return n * (0.5 * b @ sigma @ b - b @ d) + tau * np.linalg.norm(b - anchor)

            ours = prox_vector_beta(sigma, d, n, lam, anchor)
            oracle = dual_projected_gradient_beta(sigma, d, n, lam, anchor)
            assert np.linalg.norm(ours - oracle) < 1e-6
            assert f(ours) <= f(oracle) + 1e-10

    def test_rejects_non_pd(self):
        from mtgmm.core import NotPositiveDefiniteError

        with pytest.raises(NotPositiveDefiniteError):
            prox_vector_beta(-np.eye(2), np.ones(2), 10, 0.1, np.zeros(2))


class TestWeightedGeometricMedian:
    def test_single_point(self):
        out = weighted_geometric_median(np.array([[3.0, 1.0]]), [2.0])
        np.testing.assert_array_equal(out, [3.0, 1.0])

    def test_equilateral_triangle_center(self):
        pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, np.sqrt(3) / 2]])
        out = weighted_geometric_median(pts, [1.0, 1.0, 1.0])
        np.testing.assert_allclose(out, pts.mean(axis=0), atol=1e-9)

    def test_collinear_scalar_median(self):
        # 1-d geometric median = weighted median; grid-search cross-check
        pts = np.array([0.0, 0.0, 10.0])
        out = weighted_geometric_median(pts, [1.0, 1.0, 1.0])
        grid = np.linspace(-1, 11, 4001)
        obj = np.abs(grid[:, None] - pts[None, :]).sum(axis=1)
        assert abs(out - grid[np.argmin(obj)]) < 5e-3
        assert out == pytest.approx(0.0, abs=1e-12)

    def test_majority_point_dominates(self):
        pts = np.array([[0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [5.0, 1.0]])
        out = weighted_geometric_median(pts, [1.0, 1.0, 1.0, 1.0])
        np.testing.assert_allclose(out, [0.0, 0.0], atol=1e-9)

    def test_kkt_residual_small(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            k = int(rng.integers(2, 12))
            p = int(rng.integers(2, 5))
            pts = rng.standard_normal((k, p))
            wts = rng.uniform(0.5, 3.0, size=k)
            out = weighted_geometric_median(pts, wts, tol=1e-9)
            assert geometric_median_residual(pts, wts, out) <= 1e-9 * wts.sum() * 10

    def test_weight_scaling_invariance(self):
        rng = np.random.default_rng(8)
        pts = rng.standard_normal((6, 3))
        wts = rng.uniform(0.5, 2.0, size=6)
        a = weighted_geometric_median(pts, wts, tol=1e-11)
        b = weighted_geometric_median(pts, 7.3 * wts, tol=1e-11)
        np.testing.assert_allclose(a, b, atol=1e-8)

    def test_two_point_tie_returns_midpoint(self):
        out = weighted_geometric_median(np.array([0.2, 0.8]), [1.0, 1.0])
        assert out == pytest.approx(0.5)


class TestProxProblem:
    def test_kind_validation(self):
        with pytest.raises(ValueError):
            ProxProblem("nope", 1.0, 0.5, 0.1, 0.4)

    def test_scalar_solve_matches_prox(self):
        problem = ProxProblem("scalar-w", 100.0, 0.6, 10.0 * 1.0, 0.5)
        assert problem.solve() == prox_scalar_w(0.6, 100, 1.0, 0.5)

    def test_mu_solve_matches_prox(self):
        m = np.array([1.0, 0.0])
        problem = ProxProblem("vector-mu", 10.0, m, 2.0, np.zeros(2))
        np.testing.assert_array_equal(problem.solve(), prox_vector_mu(10.0, m, 1, 2.0, np.zeros(2)))

    def test_beta_solve_matches_prox(self):
        rng = np.random.default_rng(9)
        sigma = random_spd(rng, 3)
        d = rng.standard_normal(3)
        target = np.linalg.solve(sigma, d)
        problem = ProxProblem("vector-beta", sigma, target, 0.7, np.zeros(3))
        np.testing.assert_allclose(
            problem.solve(), prox_vector_beta(sigma, d, 1, 0.7, np.zeros(3)), atol=1e-9
        )


class TestSolveJointPenalized:
    def _w_blocks(self, rng, k):
        return [(rng.uniform(0.2, 0.8),) for _ in range(k)]

    def test_zero_penalty_decouples(self):
        rng = np.random.default_rng(10)
        blocks = self._w_blocks(rng, 5)
        ns = [int(rng.integers(10, 200)) for _ in range(5)]
        sol = solve_joint_penalized("scalar-w", blocks, ns, 0.0)
        for (gbar,), value in zip(blocks, sol.per_task):
            assert value == clamp_w(gbar)
        assert sol.converged

    def test_huge_penalty_all_equal(self):
        rng = np.random.default_rng(11)
        k = 6
        blocks = [(rng.uniform(1.0, 20.0), rng.standard_normal(3)) for _ in range(k)]
        ns = [100] * k
        sol = solve_joint_penalized("vector-mu", blocks, ns, 1e6)
        for value in sol.per_task:
            assert np.linalg.norm(np.asarray(value) - np.asarray(sol.center)) < 1e-6

    def test_identical_w_blocks_fixed_point(self):
        gbar = 0.37
        sol = solve_joint_penalized("scalar-w", [(gbar,), (gbar,)], [50, 50], 0.8)
        assert sol.per_task[0] == pytest.approx(gbar, abs=1e-12)
        assert sol.per_task[1] == pytest.approx(gbar, abs=1e-12)
        assert sol.center == pytest.approx(gbar, abs=1e-12)

    def test_objective_monotone(self):
        rng = np.random.default_rng(12)
        for kind in ("scalar-w", "vector-mu", "vector-beta"):
            k = 7
            if kind == "scalar-w":
                blocks = self._w_blocks(rng, k)
            elif kind == "vector-mu":
                blocks = [(rng.uniform(1, 30), rng.standard_normal(4)) for _ in range(k)]
            else:
                blocks = [(random_spd(rng, 4), rng.standard_normal(4)) for _ in range(k)]
            ns = [int(rng.integers(20, 300)) for _ in range(k)]
            sol = solve_joint_penalized(kind, blocks, ns, 0.4)
            trace = np.asarray(sol.objective_trace)
            assert np.all(trace[1:] <= trace[:-1] + 1e-9 * np.abs(trace[:-1]) + 1e-12)

    def test_beta_joint_converges(self):
        rng = np.random.default_rng(13)
        k = 5
        blocks = [(random_spd(rng, 3), rng.standard_normal(3)) for _ in range(k)]
        ns = [80] * k
        sol = solve_joint_penalized("vector-beta", blocks, ns, 0.5)
        assert sol.converged
        assert isinstance(sol, JointPenalizedSolution)

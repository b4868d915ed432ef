import numpy as np
import pytest
from scipy.optimize import minimize

from gmrfmix.errors import LineSearchFailed, NotSpd
from gmrfmix.matrices import SparseSpd, SupportPattern, project_to_pattern, spd_inverse
from gmrfmix.mle import (
    MleConfig,
    armijo_spd_search,
    default_q0,
    dense_mle,
    estimate_known_support,
    gradient,
    hessian_apply,
    neg_log_likelihood,
    precond_weights,
    proj_pcg,
)


def random_sparse_spd(n, rng, fill=0.3):
    """Random SPD matrix with ~fill off-diagonal density, SPD via dominance."""
    mask = rng.random((n, n)) < fill
    mask = np.triu(mask, 1)
    vals = np.where(mask, rng.uniform(-1.0, 1.0, (n, n)), 0.0)
    m = vals + vals.T
    np.fill_diagonal(m, np.abs(m).sum(axis=1) + rng.uniform(0.5, 1.5, n))
    return SparseSpd(m)


class TestNegLogLikelihood:
    def test_identity(self):
        q = SparseSpd(np.eye(5))
        assert neg_log_likelihood(q, np.eye(5)) == pytest.approx(5.0)

    def test_scalar(self):
        q = SparseSpd(np.array([[2.0]]))
        assert neg_log_likelihood(q, np.array([[1.0]])) == pytest.approx(
            -np.log(2.0) + 2.0
        )

    def test_tridiagonal(self):
        q = SparseSpd(np.array([[2.0, -1.0], [-1.0, 2.0]]))
        assert neg_log_likelihood(q, np.eye(2)) == pytest.approx(-np.log(3.0) + 4.0)

    def test_pattern_trace_matches_dense_trace(self):
        rng = np.random.default_rng(0)
        q = random_sparse_spd(6, rng)
        a = rng.standard_normal((6, 6))
        s = a @ a.T / 6 + np.eye(6)
        expected = -np.linalg.slogdet(q.dense)[1] + np.trace(q.dense @ s)
        assert neg_log_likelihood(q, s) == pytest.approx(expected)


class TestGradient:
    def test_stationary_at_identity(self):
        q = SparseSpd(np.eye(3))
        assert np.allclose(gradient(q, np.eye(3)), 0.0)

    def test_scalar(self):
        q = SparseSpd(np.array([[2.0]]))
        assert np.allclose(gradient(q, np.array([[1.0]])), [[0.5]])

    def test_diagonal(self):
        q = SparseSpd(np.diag([1.0, 4.0]))
        assert np.allclose(gradient(q, np.eye(2)), np.diag([0.0, 0.75]))

    def test_matches_finite_differences(self):
        # central differences, symmetric perturbations counting off-diagonals once
        rng = np.random.default_rng(1)
        h = 1e-5
        for _ in range(5):
            n = int(rng.integers(2, 9))
            q = random_sparse_spd(n, rng, fill=1.0)
            a = rng.standard_normal((n, n))
            s = a @ a.T / n + np.eye(n)
            g = gradient(q, s)
            for i in range(n):
                for j in range(i, n):
                    e = np.zeros((n, n))
                    e[i, j] = e[j, i] = h
                    fp = neg_log_likelihood(SparseSpd(q.dense + e), s)
                    fm = neg_log_likelihood(SparseSpd(q.dense - e), s)
                    fd = (fp - fm) / (2 * h)
                    analytic = 2 * g[i, j] if i != j else g[i, i]
                    assert abs(fd - analytic) < 1e-5 * max(1.0, abs(analytic))


class TestDenseMle:
    def test_identity(self):
        assert np.allclose(dense_mle(np.eye(3)).dense, np.eye(3))

    def test_diagonal(self):
        assert np.allclose(dense_mle(np.diag([2.0, 4.0])).dense, np.diag([0.5, 0.25]))

    def test_two_by_two(self):
        s = np.array([[2.0, 1.0], [1.0, 2.0]]) / 3.0
        assert np.allclose(dense_mle(s).dense, [[2.0, -1.0], [-1.0, 2.0]])

    def test_gradient_zero_at_solution(self):
        rng = np.random.default_rng(2)
        a = rng.standard_normal((5, 5))
        s = a @ a.T / 5 + np.eye(5)
        q = dense_mle(s)
        assert np.max(np.abs(gradient(q, s))) < 1e-8


class TestHessianApply:
    def test_identity_operator(self):
        rng = np.random.default_rng(3)
        p = SupportPattern.from_mask(rng.random((4, 4)) < 0.5)
        a = rng.standard_normal((4, 4))
        d = project_to_pattern(a + a.T, p)
        assert np.allclose(hessian_apply(np.eye(4), d, p), d)

    def test_scalar_scaling(self):
        p = SupportPattern.full(3)
        d = np.diag([1.0, 2.0, 3.0])
        assert np.allclose(hessian_apply(2.0 * np.eye(3), d, p), 4.0 * d)

    def test_matrix_square(self):
        w = np.array([[2.0, 1.0], [1.0, 2.0]]) / 3.0
        out = hessian_apply(w, np.eye(2), SupportPattern.full(2))
        assert np.allclose(out, w @ w)

    def test_matches_directional_finite_differences(self):
        rng = np.random.default_rng(4)
        h = 1e-5
        for _ in range(5):
            n = int(rng.integers(2, 9))
            q = random_sparse_spd(n, rng, fill=1.0)
            a = rng.standard_normal((n, n))
            s = a @ a.T / n + np.eye(n)
            d = rng.standard_normal((n, n))
            d = 0.1 * (d + d.T)
            w = spd_inverse(q)
            analytic = hessian_apply(w, d, SupportPattern.full(n))
            gp = gradient(SparseSpd(q.dense + h * d), s)
            gm = gradient(SparseSpd(q.dense - h * d), s)
            fd = (gp - gm) / (2 * h)
            # Hessian of -log det is +W d W (the S term is linear)
            assert np.max(np.abs(fd - analytic)) < 1e-4


class TestPrecondWeights:
    def test_identity(self):
        m = precond_weights(np.eye(3), SupportPattern.full(3))
        assert np.allclose(m, np.ones((3, 3)))

    def test_diagonal(self):
        m = precond_weights(np.diag([2.0, 3.0]), SupportPattern.full(2))
        assert m[0, 0] == 4.0 and m[1, 1] == 9.0 and m[0, 1] == 6.0

    def test_off_diagonal_formula(self):
        w = np.array([[1.0, 0.5], [0.5, 1.0]])
        m = precond_weights(w, SupportPattern.full(2))
        assert m[0, 1] == pytest.approx(1.25)

    def test_positive_for_spd(self):
        rng = np.random.default_rng(5)
        q = random_sparse_spd(6, rng, fill=1.0)
        m = precond_weights(spd_inverse(q), SupportPattern.full(6))
        assert np.all(m > 0)


class TestProjPcg:
    def test_identity_w(self):
        rng = np.random.default_rng(6)
        q = SparseSpd(np.eye(4))
        g = rng.standard_normal((4, 4))
        g = 0.5 * (g + g.T)
        delta, ok = proj_pcg(q, g, SupportPattern.full(4), MleConfig())
        assert ok and np.allclose(delta, -g, atol=1e-8)

    def test_scaled_identity(self):
        rng = np.random.default_rng(7)
        q = SparseSpd(2.0 * np.eye(3))
        g = rng.standard_normal((3, 3))
        g = 0.5 * (g + g.T)
        delta, ok = proj_pcg(q, g, SupportPattern.full(3), MleConfig(pcg_tol=1e-10))
        assert ok and np.allclose(delta, -4.0 * g, atol=1e-6)

    def test_diagonal_pattern(self):
        q = SparseSpd(np.diag([1.0, 4.0]))
        g = np.diag([0.0, 0.75])
        delta, ok = proj_pcg(q, g, SupportPattern.diagonal(2), MleConfig(pcg_tol=1e-12))
        assert ok and np.allclose(delta, np.diag([0.0, -12.0]))

    def test_residual_tolerance(self):
        rng = np.random.default_rng(8)
        q = random_sparse_spd(8, rng)
        pattern = q.pattern
        a = rng.standard_normal((8, 8))
        g = project_to_pattern(0.5 * (a + a.T) + np.eye(8), pattern)
        cfg = MleConfig(pcg_tol=1e-3)
        w = spd_inverse(q)
        delta, ok = proj_pcg(q, g, pattern, cfg, w=w)
        assert ok
        resid = hessian_apply(w, delta, pattern) + g
        assert np.linalg.norm(resid) <= cfg.pcg_tol * np.linalg.norm(g)


class TestArmijoSpd:
    def test_scalar_lands_on_minimizer(self):
        q = SparseSpd(np.array([[2.0]]))
        s = np.array([[1.0]])
        g = np.array([[0.5]])
        delta = np.array([[-2.0]])
        alpha, q_new, _ = armijo_spd_search(q, s, g, delta, MleConfig())
        assert alpha == 0.5
        assert np.allclose(q_new.dense, [[1.0]])

    def test_spd_guard_rejects_full_step(self):
        n = 3
        q = SparseSpd(np.eye(n))
        s = 2.0 * np.eye(n)
        g = np.eye(n)
        delta = -np.eye(n)
        alpha, q_new, f_new = armijo_spd_search(q, s, g, delta, MleConfig())
        assert alpha == 0.5
        assert np.allclose(q_new.dense, 0.5 * np.eye(n))
        assert f_new == pytest.approx(n * (np.log(2.0) + 1.0))

    def test_non_descent_rejected(self):
        q = SparseSpd(np.eye(2))
        with pytest.raises(LineSearchFailed):
            armijo_spd_search(q, np.eye(2), np.eye(2), np.eye(2), MleConfig())


def brute_force_constrained_mle(s, pattern, x0_q):
    """Derivative-free minimization over the free pattern entries (oracle)."""
    pairs = sorted(pattern.pairs)
    n = pattern.n

    def unpack(x):
        m = np.zeros((n, n))
        for v, (i, j) in zip(x, pairs):
            m[i, j] = v
            m[j, i] = v
        return m

    def objective(x):
        m = unpack(x)
        try:
            chol = np.linalg.cholesky(m)
        except np.linalg.LinAlgError:
            return 1e10
        return -2.0 * np.sum(np.log(np.diag(chol))) + np.sum(m * s)

    x0 = np.array([x0_q[i, j] for i, j in pairs])
    res = minimize(objective, x0, method="Nelder-Mead",
                   options={"maxiter": 20000, "xatol": 1e-9, "fatol": 1e-12})
    return res.fun


class TestEstimateKnownSupport:
    def test_identity_immediately_stationary(self):
        res = estimate_known_support(np.eye(3), SupportPattern.diagonal(3))
        assert res.converged and res.iterations == 0
        assert np.allclose(res.q.dense, np.eye(3))

    def test_recovers_tridiagonal_from_exact_inverse(self):
        q_true = np.array([[2.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 2.0]])
        s = np.linalg.inv(q_true)
        pattern = SupportPattern.from_matrix(q_true)
        res = estimate_known_support(s, pattern, cfg=MleConfig(outer_tol=1e-9))
        assert np.max(np.abs(res.q.dense - q_true)) < 1e-6

    def test_diagonal_support_decouples(self):
        rng = np.random.default_rng(9)
        data = rng.standard_normal((10, 3))
        s = data.T @ data / 10
        res = estimate_known_support(s, SupportPattern.diagonal(3),
                                     cfg=MleConfig(outer_tol=1e-10))
        assert np.allclose(res.q.dense, np.diag(1.0 / np.diag(s)), atol=1e-8)

    def test_exact_covariance_recovers_truth_random_instances(self):
        rng = np.random.default_rng(10)
        for _ in range(10):
            n = int(rng.integers(4, 13))
            q_true = random_sparse_spd(n, rng)
            s = spd_inverse(q_true)
            res = estimate_known_support(s, q_true.pattern,
                                         cfg=MleConfig(outer_tol=1e-9))
            assert np.max(np.abs(res.q.dense - q_true.dense)) < 1e-6

    def test_matches_brute_force_small(self):
        rng = np.random.default_rng(11)
        for _ in range(3):
            n = int(rng.integers(2, 5))
            q_true = random_sparse_spd(n, rng, fill=0.5)
            a = rng.standard_normal((2 * n, n))
            s = a.T @ a / (2 * n)
            res = estimate_known_support(s, q_true.pattern,
                                         cfg=MleConfig(outer_tol=1e-9))
            obj = res.objective_trace[-1]
            oracle = brute_force_constrained_mle(s, q_true.pattern, res.q.dense * 0 + np.eye(n))
            assert obj <= oracle + 1e-4

    def test_objective_trace_non_increasing(self):
        rng = np.random.default_rng(12)
        q_true = random_sparse_spd(6, rng)
        a = rng.standard_normal((20, 6))
        s = a.T @ a / 20
        res = estimate_known_support(s, q_true.pattern)
        trace = np.asarray(res.objective_trace)
        assert np.all(np.diff(trace) <= 1e-12)

    def test_support_preserved(self):
        rng = np.random.default_rng(13)
        q_true = random_sparse_spd(7, rng)
        a = rng.standard_normal((30, 7))
        s = a.T @ a / 30
        res = estimate_known_support(s, q_true.pattern)
        outside = res.q.dense[~q_true.pattern.mask()]
        assert np.all(outside == 0.0)

    def test_default_q0_is_inverse_diagonal(self):
        s = np.array([[2.0, 0.1], [0.1, 5.0]])
        q0 = default_q0(s, SupportPattern.diagonal(2))
        assert np.allclose(q0.dense, np.diag([0.5, 0.2]))

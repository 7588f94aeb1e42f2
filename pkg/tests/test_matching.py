"""Assignment solvers, matching costs and random-projection optimisation."""

import itertools

import numpy as np
import pytest

from otrf.graph import GraphKernelSpec, erdos_renyi, taylor_coefficients
from otrf.grf import estimate_quantile_projections, modulation_from_coefficients
from otrf.matching import (
    averaged_sigma_cost_matrix,
    build_sigma_cost_matrix,
    hungarian,
    jlt_dimension,
    jlt_reduce,
    outer_product_vector,
    quadratic_matching_random_projection,
    quadratic_objective,
    solve_sigma_coupling,
)


def brute_force_assignment(cost):
    n = cost.shape[0]
    best, best_perm = np.inf, None
    for perm in itertools.permutations(range(n)):
        total = sum(cost[i, perm[i]] for i in range(n))
        if total < best:
            best, best_perm = total, perm
    return np.array(best_perm), best


class TestHungarian:
    def test_diagonal_dominance(self):
        perm, total = hungarian(np.array([[1.0, 2.0], [2.0, 1.0]]))
        assert np.array_equal(perm, [0, 1])
        assert total == 2.0

    def test_zero_diagonal(self):
        perm, total = hungarian(np.array([[0.0, 1.0], [1.0, 0.0]]))
        assert np.array_equal(perm, [0, 1])
        assert total == 0.0

    def test_matches_brute_force_random(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            cost = rng.random((5, 5))
            perm, total = hungarian(cost)
            _, best = brute_force_assignment(cost)
            assert total == pytest.approx(best, abs=1e-12)
            assert sorted(perm.tolist()) == list(range(5))

    def test_negative_entries(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            cost = rng.standard_normal((4, 4))
            _, total = hungarian(cost)
            _, best = brute_force_assignment(cost)
            assert total == pytest.approx(best, abs=1e-12)

    def test_deterministic(self):
        cost = np.ones((3, 3))
        perm1, _ = hungarian(cost)
        perm2, _ = hungarian(cost.copy())
        assert np.array_equal(perm1, perm2)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            hungarian(np.zeros((2, 3)))
        with pytest.raises(ValueError):
            hungarian(np.array([[np.inf, 0.0], [0.0, 1.0]]))


class TestSigmaCostMatrix:
    def test_zero_projections(self):
        zeros = np.zeros((3, 5))
        assert np.array_equal(build_sigma_cost_matrix(zeros, zeros), np.zeros((3, 3)))

    def test_symmetry_and_nonnegativity(self):
        rng = np.random.default_rng(2)
        a, b = rng.standard_normal((4, 6)), rng.standard_normal((4, 6))
        cost = build_sigma_cost_matrix(a, b)
        assert np.allclose(cost, cost.T)
        assert np.all(cost >= 0)

    def test_identical_projection_structure(self):
        # every quantile carries the same vector: entries are the squared
        # self dot of the doubled vector, constant across the matrix
        psi = np.tile([1.0, 2.0], (3, 1))
        cost = build_sigma_cost_matrix(psi, psi)
        norm_sq = 5.0
        assert np.allclose(cost, (4 * norm_sq) ** 2)
        assert np.allclose(cost, cost.T)

    def test_cross_favoring_two_by_two_swaps(self):
        perm, _ = hungarian(np.array([[10.0, 0.0], [0.0, 10.0]]))
        assert np.array_equal(perm, [1, 0])

    def test_spot_entries_direct_formula(self):
        rng = np.random.default_rng(3)
        a, b = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
        cost = build_sigma_cost_matrix(a, b)
        for q1 in range(3):
            for q2 in range(3):
                direct = ((a[q1] + a[q2]) @ (b[q1] + b[q2])) ** 2
                assert cost[q1, q2] == pytest.approx(direct, rel=1e-12)

    def test_quantile_relabel_equivariance(self):
        rng = np.random.default_rng(4)
        a, b = rng.standard_normal((5, 3)), rng.standard_normal((5, 3))
        perm = rng.permutation(5)
        cost = build_sigma_cost_matrix(a, b)
        cost_perm = build_sigma_cost_matrix(a[perm], b[perm])
        assert np.allclose(cost_perm, cost[np.ix_(perm, perm)])

    def test_averaged_matches_explicit_loop(self):
        rng = np.random.default_rng(5)

        class FakeQP:
            psi_hat = rng.standard_normal((4, 3, 4))

        full = averaged_sigma_cost_matrix(FakeQP(), max_pairs=10_000)
        psi = FakeQP.psi_hat
        manual = np.zeros((3, 3))
        for i in range(4):
            for j in range(4):
                manual += build_sigma_cost_matrix(psi[i], psi[j])
        manual /= 16
        assert np.allclose(full, manual, rtol=1e-10)

    def test_subsampled_average_tracks_full(self):
        class FakeQP:
            psi_hat = np.random.default_rng(6).standard_normal((10, 3, 6))

        full = averaged_sigma_cost_matrix(FakeQP(), max_pairs=10_000)
        sub = averaged_sigma_cost_matrix(FakeQP(), max_pairs=60, rng=7)
        assert np.allclose(sub, sub.T)
        assert np.all(sub >= 0)
        assert np.linalg.norm(sub - full) / np.linalg.norm(full) < 0.5


class TestSolveSigmaCoupling:
    def test_matches_exhaustive_diagonal_objective(self):
        g = erdos_renyi(10, 0.4, np.random.default_rng(6))
        spec = GraphKernelSpec("d_regularized_laplacian", sigma=1.0, degree=2)
        f = modulation_from_coefficients(taylor_coefficients(spec, 30), 30)
        rng = np.random.default_rng(7)
        qp = estimate_quantile_projections(g, 5, 0.3, f, 30, rng)
        cost = averaged_sigma_cost_matrix(qp)
        perm, total = hungarian(cost)
        _, best = brute_force_assignment(cost)
        assert total == pytest.approx(best, abs=1e-12)
        coupling = solve_sigma_coupling(g, 0.3, 5, f, 30, np.random.default_rng(7))
        assert sorted(coupling.perm.tolist()) == list(range(5))

    def test_order_bound(self):
        g = erdos_renyi(6, 0.5, np.random.default_rng(8))
        spec = GraphKernelSpec("diffusion", sigma=1.0)
        f = modulation_from_coefficients(taylor_coefficients(spec, 10), 10)
        with pytest.raises(ValueError):
            solve_sigma_coupling(g, 0.3, 1, f, 10, np.random.default_rng(0))


class TestJlt:
    def test_zero_vector(self):
        out = jlt_reduce(np.zeros((2, 50)), 7, np.random.default_rng(9))
        assert np.array_equal(out, np.zeros((2, 7)))

    def test_dimension_formula(self):
        assert jlt_dimension(8, 0.2) == int(np.ceil(8 * np.log(8) / 0.04))

    def test_unbiased_dot_products(self):
        rng = np.random.default_rng(10)
        u = rng.standard_normal(60)
        v = rng.standard_normal(60)
        trials = 10_000
        dots = np.empty(trials)
        for t in range(trials):
            red = jlt_reduce(np.vstack([u, v]), 5, np.random.default_rng((11, t)))
            dots[t] = red[0] @ red[1]
        se = dots.std(ddof=1) / np.sqrt(trials)
        assert abs(dots.mean() - u @ v) < 3 * se

    def test_invalid_r(self):
        with pytest.raises(ValueError):
            jlt_reduce(np.zeros((1, 4)), 0, np.random.default_rng(0))


class TestQuadraticSolver:
    def test_single_vector_identity(self):
        perm = quadratic_matching_random_projection(
            np.ones((1, 3)), 5, np.random.default_rng(12)
        )
        assert np.array_equal(perm, [0])

    def test_never_worse_than_diagonal_solution(self):
        rng = np.random.default_rng(13)
        for seed in range(10):
            vectors = np.random.default_rng(seed).standard_normal((5, 4))
            diag_perm, _ = hungarian(build_sigma_cost_matrix(vectors, vectors))
            diag_obj = quadratic_objective(vectors, diag_perm)
            perm = quadratic_matching_random_projection(vectors, 8, rng)
            assert quadratic_objective(vectors, perm) <= diag_obj + 1e-12

    def test_best_of_k_monotone(self):
        vectors = np.random.default_rng(14).standard_normal((5, 4))
        objs = []
        for k in (1, 5, 25):
            perm = quadratic_matching_random_projection(
                vectors, k, np.random.default_rng(15)
            )
            objs.append(quadratic_objective(vectors, perm))
        assert objs[0] >= objs[1] >= objs[2]

    def test_outer_product_vector_symmetry(self):
        v = np.array([1.0, 2.0])
        u = outer_product_vector(v)
        assert np.array_equal(u, [1.0, 2.0, 2.0, 4.0])
        assert np.array_equal(u.reshape(2, 2), u.reshape(2, 2).T)

    def test_objective_equals_outer_product_norms(self):
        rng = np.random.default_rng(16)
        vectors = rng.standard_normal((4, 3))
        perm = np.array([2, 3, 0, 1])
        total = np.zeros(9)
        for q in range(4):
            total += outer_product_vector(vectors[q] + vectors[perm[q]])
        assert quadratic_objective(vectors, perm) == pytest.approx(
            float(total @ total) / 1, rel=1e-10
        )

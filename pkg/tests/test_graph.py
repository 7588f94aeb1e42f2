"""Graph structure, kernels, Taylor expansions and walk couplings."""

import math

import numpy as np
import pytest
from scipy import stats

from otrf.graph import (
    GraphData,
    GraphKernelSpec,
    SigmaCoupling,
    antithetic_termination_pair,
    batch_walk_endpoints,
    batch_walk_lengths,
    erdos_renyi,
    exact_graph_kernel,
    laplacian,
    normalized_laplacian,
    sample_coupled_lengths,
    simulate_walk,
    taylor_coefficients,
    write_kernel_csv,
)
from otrf.mathcore import GeometricParams, geometric_cdf

TWO_PATH = GraphData(np.array([[0.0, 1.0], [1.0, 0.0]]))


def geometric_chisquare_pvalue(lengths, p_halt, cut=12):
    """Chi-square test of observed lengths against the geometric pmf.

    Bins 0..cut-1 individually plus one tail bin; sparse bins are merged
    into the tail before testing.
    """
    lengths = np.asarray(lengths)
    gp = GeometricParams(p_halt)
    observed = np.array(
        [np.sum(lengths == l) for l in range(cut)] + [np.sum(lengths >= cut)],
        dtype=float,
    )
    cdf_vals = np.asarray(geometric_cdf(np.arange(cut), gp))
    probs = np.concatenate([[cdf_vals[0]], np.diff(cdf_vals), [1.0 - cdf_vals[-1]]])
    expected = probs * lengths.size
    while expected[-1] < 5 or expected.size > 2 and expected[-2] < 5:
        observed[-2] += observed[-1]
        expected[-2] += expected[-1]
        observed, expected = observed[:-1], expected[:-1]
    return stats.chisquare(observed, expected).pvalue


class TestGraphData:
    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            GraphData(np.array([[0.0, 1.0], [0.0, 0.0]]))

    def test_rejects_isolated(self):
        with pytest.raises(ValueError):
            GraphData(np.array([[0.0, 0.0], [0.0, 0.0]]))

    def test_neighbors_and_degrees(self):
        g = GraphData.from_edges(3, [(0, 1), (1, 2, 2.0)])
        assert list(g.neighbors(1)) == [0, 2]
        assert g.degrees[1] == 3.0
        assert g.neighbor_counts[1] == 2

    def test_file_round_trip(self, tmp_path):
        g = GraphData.from_edges(4, [(0, 1), (1, 2, 0.5), (2, 3), (0, 3, 2.0)])
        path = tmp_path / "graph.edges"
        g.to_file(path)
        back = GraphData.from_file(path)
        assert np.array_equal(back.weights, g.weights)

    def test_malformed_file(self, tmp_path):
        path = tmp_path / "bad.edges"
        path.write_text("0 1\n0 1 2 3\n")
        with pytest.raises(ValueError):
            GraphData.from_file(path)


class TestLaplacians:
    def test_two_path_normalized(self):
        expected = np.array([[1.0, -1.0], [-1.0, 1.0]])
        assert np.allclose(normalized_laplacian(TWO_PATH), expected)

    def test_unnormalized_row_sums_zero(self):
        g = erdos_renyi(20, 0.3, np.random.default_rng(0))
        assert np.allclose(laplacian(g).sum(axis=1), 0.0)

    def test_spectrum_in_range(self):
        g = erdos_renyi(50, 0.1, np.random.default_rng(1))
        evals = np.linalg.eigvalsh(normalized_laplacian(g))
        assert evals.min() > -1e-10
        assert evals.max() < 2 + 1e-10

    def test_adjacency_spectral_radius(self):
        g = erdos_renyi(40, 0.15, np.random.default_rng(2))
        # power-iteration estimate of the spectral radius
        v = np.ones(g.n_nodes) / np.sqrt(g.n_nodes)
        for _ in range(200):
            v = g.adjacency_norm @ v
            v /= np.linalg.norm(v)
        radius = abs(v @ g.adjacency_norm @ v)
        assert radius <= 1 + 1e-8


class TestExactKernels:
    def test_two_path_regularized_oracle(self):
        # direct inverse-square oracle on the 2x2 normalised Laplacian
        lap = normalized_laplacian(TWO_PATH)
        oracle = np.linalg.inv(np.eye(2) + lap)
        oracle = oracle @ oracle
        spec = GraphKernelSpec("d_regularized_laplacian", sigma=1.0, degree=2)
        K = exact_graph_kernel(TWO_PATH, spec)
        assert np.allclose(K, oracle, atol=1e-12)
        assert K[0, 0] == pytest.approx(5.0 / 9.0, abs=1e-12)
        assert K[0, 1] == pytest.approx(4.0 / 9.0, abs=1e-12)

    def test_diffusion_zero_rate_identity(self):
        g = erdos_renyi(10, 0.4, np.random.default_rng(3))
        K = exact_graph_kernel(g, GraphKernelSpec("diffusion", sigma=0.0))
        assert np.allclose(K, np.eye(10), atol=1e-12)

    @pytest.mark.parametrize(
        "spec",
        [
            GraphKernelSpec("d_regularized_laplacian", sigma=0.8, degree=3),
            GraphKernelSpec("p_step_random_walk", alpha=2.5, p=3),
            GraphKernelSpec("diffusion", sigma=1.2),
            GraphKernelSpec("inverse_cosine"),
        ],
    )
    def test_psd_on_random_graphs(self, spec):
        g = erdos_renyi(15, 0.3, np.random.default_rng(4))
        K = exact_graph_kernel(g, spec)
        assert np.allclose(K, K.T)
        assert np.min(np.linalg.eigvalsh(K)) > -1e-8

    def test_alpha_range_enforced(self):
        with pytest.raises(ValueError):
            GraphKernelSpec("p_step_random_walk", alpha=1.5)


class TestTaylorCoefficients:
    def test_one_regularized_geometric_series(self):
        spec = GraphKernelSpec("d_regularized_laplacian", sigma=1.0, degree=1)
        alpha = taylor_coefficients(spec, 10)
        expected = 0.5 * 0.5 ** np.arange(11)
        assert np.allclose(alpha, expected, atol=1e-14)

    def test_diffusion_poisson_weights(self):
        gamma_sq = 0.7
        spec = GraphKernelSpec("diffusion", sigma=np.sqrt(2 * gamma_sq))
        alpha = taylor_coefficients(spec, 8)
        k = np.arange(9)
        expected = np.exp(-gamma_sq) * gamma_sq**k / [math.factorial(i) for i in k]
        assert np.allclose(alpha, expected, rtol=1e-12)

    @pytest.mark.parametrize(
        "spec",
        [
            GraphKernelSpec("d_regularized_laplacian", sigma=1.0, degree=2),
            GraphKernelSpec("diffusion", sigma=1.0),
            GraphKernelSpec("p_step_random_walk", alpha=2.0, p=4),
            GraphKernelSpec("inverse_cosine"),
        ],
    )
    def test_partial_sums_reconstruct_kernel(self, spec):
        g = erdos_renyi(10, 0.4, np.random.default_rng(5))
        K = exact_graph_kernel(g, spec)
        alpha = taylor_coefficients(spec, 40)
        acc = np.zeros_like(K)
        power = np.eye(10)
        for a in alpha:
            acc += a * power
            power = power @ g.adjacency_norm
        assert np.linalg.norm(acc - K) / np.linalg.norm(K) < 1e-6

    def test_nonnegative_families(self):
        for spec in (
            GraphKernelSpec("d_regularized_laplacian", sigma=1.3, degree=2),
            GraphKernelSpec("diffusion", sigma=0.9),
        ):
            assert np.all(taylor_coefficients(spec, 30) >= 0)

    def test_unnormalized_rejected(self):
        spec = GraphKernelSpec("diffusion", sigma=1.0, normalized=False)
        with pytest.raises(ValueError):
            taylor_coefficients(spec, 10)


class TestWalks:
    def test_fixed_length_zero(self):
        walk = simulate_walk(TWO_PATH, 1, np.random.default_rng(6), length=0)
        assert walk.nodes == [1]
        assert walk.length == 0
        assert walk.prefix_weights[0] == 1.0

    def test_two_cycle_alternates(self):
        walk = simulate_walk(TWO_PATH, 0, np.random.default_rng(7), length=5)
        assert walk.nodes == [0, 1, 0, 1, 0, 1]

    def test_mode_arguments(self):
        rng = np.random.default_rng(8)
        with pytest.raises(ValueError):
            simulate_walk(TWO_PATH, 0, rng)
        with pytest.raises(ValueError):
            simulate_walk(TWO_PATH, 0, rng, p_halt=0.5, length=3)

    def test_geometric_lengths_chisquare(self):
        rng = np.random.default_rng(9)
        lengths = [
            simulate_walk(TWO_PATH, 0, rng, p_halt=0.5).length for _ in range(20_000)
        ]
        assert geometric_chisquare_pvalue(lengths, 0.5) > 0.01

    def test_batch_lengths_chisquare(self):
        rng = np.random.default_rng(10)
        lengths = batch_walk_lengths(100_000, 0.3, rng)
        assert geometric_chisquare_pvalue(lengths, 0.3) > 0.01

    def test_batch_endpoints_one_step_uniform(self):
        g = erdos_renyi(12, 0.4, np.random.default_rng(11))
        rng = np.random.default_rng(12)
        start = 3
        ends = batch_walk_endpoints(g, np.full(30_000, start), np.ones(30_000), rng)
        nbrs = g.neighbors(start)
        counts = np.bincount(ends, minlength=12)[nbrs]
        assert stats.chisquare(counts).pvalue > 0.01
        assert counts.sum() == 30_000


class TestCoupledLengths:
    def test_reversal_order_two(self):
        coupling = SigmaCoupling(np.array([1, 0]), 0.5)
        rng = np.random.default_rng(13)
        for _ in range(500):
            l1, l2 = sample_coupled_lengths(coupling, rng)
            assert (l1 == 0) != (l2 == 0)  # u1 < 1/2 iff u2 >= 1/2

    def test_identity_order_two(self):
        coupling = SigmaCoupling(np.array([0, 1]), 0.5)
        rng = np.random.default_rng(14)
        for _ in range(500):
            l1, l2 = sample_coupled_lengths(coupling, rng)
            assert (l1 == 0) == (l2 == 0)

    @pytest.mark.parametrize("p_halt", [0.1, 0.3, 0.5])
    def test_marginals_geometric(self, p_halt):
        rng = np.random.default_rng(15)
        coupling = SigmaCoupling(np.array([2, 0, 3, 1]), p_halt)
        draws = np.array([sample_coupled_lengths(coupling, rng) for _ in range(20_000)])
        assert geometric_chisquare_pvalue(draws[:, 0], p_halt) > 0.01
        assert geometric_chisquare_pvalue(draws[:, 1], p_halt) > 0.01

    def test_perm_validation(self):
        with pytest.raises(ValueError):
            SigmaCoupling(np.array([0, 0]), 0.3)

    def test_json_round_trip(self):
        coupling = SigmaCoupling(np.array([2, 0, 1]), 0.2, seed=9)
        back = SigmaCoupling.from_json(coupling.to_json())
        assert np.array_equal(back.perm, coupling.perm)
        assert back.p_halt == 0.2
        assert back.seed == 9


class TestAntitheticTermination:
    def test_never_same_timestep_below_half(self):
        rng = np.random.default_rng(16)
        for _ in range(400):
            w1, w2 = antithetic_termination_pair(TWO_PATH, 0, 1, 0.4, rng)
            assert w1.length != w2.length

    def test_marginal_lengths_geometric(self):
        rng = np.random.default_rng(17)
        lengths = []
        for _ in range(10_000):
            w1, w2 = antithetic_termination_pair(TWO_PATH, 0, 0, 0.3, rng)
            lengths.append(w1.length)
            lengths.append(w2.length)
        assert geometric_chisquare_pvalue(lengths, 0.3) > 0.01

    def test_batch_variant_consistent(self):
        rng = np.random.default_rng(18)
        lengths = batch_walk_lengths(100_000, 0.4, rng, antithetic=True)
        l1, l2 = lengths[0::2], lengths[1::2]
        assert np.all(l1 != l2)
        assert geometric_chisquare_pvalue(lengths, 0.4) > 0.01

    def test_invalid_p(self):
        with pytest.raises(ValueError):
            antithetic_termination_pair(TWO_PATH, 0, 0, 1.0, np.random.default_rng(0))


class TestSyntheticGraphs:
    def test_connected(self):
        for seed in range(5):
            g = erdos_renyi(30, 0.08, np.random.default_rng(seed))
            lap = laplacian(g)
            # connectivity <=> second-smallest Laplacian eigenvalue positive
            assert np.sort(np.linalg.eigvalsh(lap))[1] > 1e-10

    def test_kernel_csv_size_cap(self, tmp_path):
        with pytest.raises(ValueError):
            write_kernel_csv(tmp_path / "k.csv", np.eye(2001))

    def test_kernel_csv_round_trip(self, tmp_path):
        K = np.array([[1.0, 0.5], [0.5, 1.0]])
        path = tmp_path / "k.csv"
        write_kernel_csv(path, K)
        assert np.allclose(np.loadtxt(path, delimiter=","), K)

"""Feature maps, kernel metrics, pair cost series and attention."""

import numpy as np
import pytest
from scipy.special import gamma, hyp0f1

from otrf.couplings import build_ensemble
from otrf.errors import ConvergenceError, FeatureOverflowError
from otrf.eucrf import (
    AttentionStats,
    CostSeriesConfig,
    GaussianKernelParams,
    attention_estimate,
    attention_exact,
    cost_rff,
    cost_rlf,
    gaussian_gram,
    gaussian_kernel,
    gram_estimate,
    read_gram_csv,
    relative_rmse,
    rff_feature_matrix,
    rff_features,
    rlf_feature_matrix,
    rlf_features,
    rlf_lengthscale_heuristic,
    write_gram_csv,
)


class TestGaussianKernel:
    def test_zero_distance(self):
        p = GaussianKernelParams(2.0, output_scale=1.5)
        x = np.ones(3)
        assert gaussian_kernel(x, x, p) == 1.5**2

    def test_direct_formula(self):
        p = GaussianKernelParams(1.0)
        x = np.array([1.0, 0.0])
        y = np.array([0.0, 1.0])  # squared distance 2
        assert gaussian_kernel(x, y, p) == pytest.approx(np.exp(-1.0), abs=1e-12)

    def test_symmetry(self):
        rng = np.random.default_rng(0)
        p = GaussianKernelParams(0.7, 1.2)
        x, y = rng.standard_normal(4), rng.standard_normal(4)
        assert gaussian_kernel(x, y, p) == gaussian_kernel(y, x, p)

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            gaussian_kernel(np.zeros(2), np.zeros(3), GaussianKernelParams(1.0))

    def test_gram_matches_pointwise(self):
        rng = np.random.default_rng(1)
        X = rng.standard_normal((5, 3))
        p = GaussianKernelParams(1.3, 0.9)
        K = gaussian_gram(X, X, p)
        for i in range(5):
            for j in range(5):
                assert K[i, j] == pytest.approx(gaussian_kernel(X[i], X[j], p), abs=1e-12)


class TestRffFeatures:
    def test_zero_input_single_frequency(self):
        ens = build_ensemble(1, 3, "iid", np.random.default_rng(2))
        p = GaussianKernelParams(1.0, output_scale=1.7)
        phi = rff_features(np.zeros(3), ens, p)
        assert np.allclose(phi, [0.0, 1.7])

    def test_self_dot_is_output_scale_sq(self):
        rng = np.random.default_rng(3)
        ens = build_ensemble(8, 4, "orthogonal", rng)
        p = GaussianKernelParams(0.8, output_scale=2.0)
        for _ in range(10):
            x = rng.standard_normal(4)
            phi = rff_features(x, ens, p)
            assert phi @ phi == pytest.approx(4.0, abs=1e-10)

    def test_unbiased_over_iid_ensembles(self):
        rng = np.random.default_rng(4)
        d, m, trials = 3, 4, 20_000
        p = GaussianKernelParams(1.0)
        x, y = rng.standard_normal(d), rng.standard_normal(d)
        freqs = rng.standard_normal((trials, m, d))
        args_x = freqs @ x
        args_y = freqs @ y
        phi_x = np.concatenate([np.sin(args_x), np.cos(args_x)], axis=1) / np.sqrt(m)
        phi_y = np.concatenate([np.sin(args_y), np.cos(args_y)], axis=1) / np.sqrt(m)
        ests = np.sum(phi_x * phi_y, axis=1)
        se = ests.std(ddof=1) / np.sqrt(trials)
        assert abs(ests.mean() - gaussian_kernel(x, y, p)) < 3 * se

    def test_matrix_matches_per_point(self):
        rng = np.random.default_rng(5)
        X = rng.standard_normal((6, 3))
        ens = build_ensemble(2, 3, "iid", rng)
        p = GaussianKernelParams(1.4, 1.1)
        mat = rff_feature_matrix(X, ens, p)
        for j in range(6):
            assert np.allclose(mat[:, j], rff_features(X[j], ens, p))


class TestRlfFeatures:
    def test_zero_input(self):
        ens = build_ensemble(4, 2, "iid", np.random.default_rng(6))
        phi = rlf_features(np.zeros(2), ens, GaussianKernelParams(1.0))
        assert np.allclose(phi, 0.5)  # 1/sqrt(m)
        assert phi @ phi == pytest.approx(1.0, abs=1e-12)

    def test_strict_positivity(self):
        rng = np.random.default_rng(7)
        ens = build_ensemble(6, 3, "iid", rng)
        X = rng.standard_normal((10, 3))
        mat = rlf_feature_matrix(X, ens, GaussianKernelParams(2.0))
        assert np.all(mat > 0)
        assert np.all(gram_estimate(mat) > 0)

    def test_unbiased_over_iid_ensembles(self):
        rng = np.random.default_rng(8)
        d, m, trials = 3, 4, 40_000
        x, y = rng.standard_normal(d) * 0.4, rng.standard_normal(d) * 0.4
        p = GaussianKernelParams(1.0)
        freqs = rng.standard_normal((trials, m, d))
        pre = np.exp(-x @ x - y @ y)
        ests = pre * np.mean(np.exp(freqs @ (x + y)), axis=1)
        se = ests.std(ddof=1) / np.sqrt(trials)
        assert abs(ests.mean() - gaussian_kernel(x, y, p)) < 3 * se

    def test_overflow_flagged(self):
        ens_like = np.full((1, 1), 800.0)
        with pytest.raises(FeatureOverflowError):
            rlf_features(np.ones(1), ens_like, GaussianKernelParams(1.0))

    def test_lengthscale_heuristic(self):
        X = np.array([[1.0, 0.0], [0.0, 1.0]])
        norms = [
            np.linalg.norm(X[i] + X[j]) for i in range(2) for j in range(2)
        ]
        assert rlf_lengthscale_heuristic(X) == pytest.approx(2 * np.mean(norms))


class TestGramMetrics:
    def test_cholesky_features_reproduce_kernel(self):
        rng = np.random.default_rng(9)
        X = rng.standard_normal((6, 2))
        K = gaussian_gram(X, X, GaussianKernelParams(1.0))
        R = np.linalg.cholesky(K + 1e-12 * np.eye(6))
        assert relative_rmse(gram_estimate(R.T), K) < 1e-7

    def test_gram_symmetric_psd(self):
        rng = np.random.default_rng(10)
        phi = rng.standard_normal((4, 7))
        K = gram_estimate(phi)
        assert np.allclose(K, K.T)
        assert np.min(np.linalg.eigvalsh(K)) > -1e-10

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            relative_rmse(np.eye(2), np.eye(3))

    def test_csv_round_trip(self, tmp_path):
        K = np.array([[1.0, 0.25], [0.25, 1.0]])
        path = tmp_path / "gram.csv"
        write_gram_csv(path, K, seed=3, coupling="iid", m=4, d=2)
        back, meta = read_gram_csv(path)
        assert np.array_equal(back, K)
        assert meta == {"seed": "3", "coupling": "iid", "m": "4", "d": "2"}


class TestCostSeries:
    def test_zero_frequencies_d2(self):
        assert cost_rlf(0.0, 0.0, 1.0, 2) == pytest.approx(1.0, abs=1e-12)
        assert cost_rff(0.0, 0.0, 1.0, 2) == pytest.approx(1.0, abs=1e-12)

    def test_zero_separation_ignores_frequencies(self):
        for d in (2, 3, 6):
            for w in (0.0, 1.3, 4.0):
                assert cost_rff(w, 2.0, 0.0, d) == pytest.approx(
                    1.0 / gamma(d / 2), abs=1e-12
                )

    def test_rlf_increasing_in_omega(self):
        vals = [cost_rlf(w, 1.0, 0.8, 4) for w in np.linspace(0, 4, 9)]
        assert np.all(np.diff(vals) > 0)

    @pytest.mark.parametrize("d", [2, 3, 5])
    def test_against_hypergeometric_oracle(self, d):
        # the series is 0F1(d/2; +-t^2 s / 4) / Gamma(d/2)
        rng = np.random.default_rng(11)
        for _ in range(20):
            w1, w2 = rng.random(2) * 3
            s = w1**2 + w2**2
            v = rng.random() * 1.5
            z = rng.random() * 0.8
            assert cost_rlf(w1, w2, v, d) == pytest.approx(
                hyp0f1(d / 2, v * v * s / 4) / gamma(d / 2), rel=1e-10
            )
            assert cost_rff(w1, w2, z, d) == pytest.approx(
                hyp0f1(d / 2, -z * z * s / 4) / gamma(d / 2), rel=1e-9
            )

    def test_nonconvergence_raises(self):
        with pytest.raises(ConvergenceError):
            cost_rff(40.0, 40.0, 6.0, 2, CostSeriesConfig(max_terms=200))

    def test_negative_inputs_rejected(self):
        with pytest.raises(ValueError):
            cost_rlf(-1.0, 0.0, 1.0, 2)


class TestAttention:
    def test_single_token(self):
        X = np.array([[0.3, -0.2]])
        a = attention_exact(X, GaussianKernelParams(1.0))
        assert np.array_equal(a, [[1.0]])

    def test_identical_tokens_uniform(self):
        X = np.tile([0.5, 1.0], (4, 1))
        a = attention_exact(X, GaussianKernelParams(1.0))
        assert np.allclose(a, 0.25)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(12)
        X = rng.standard_normal((6, 3))
        a = attention_exact(X, GaussianKernelParams(1.5))
        assert np.allclose(a.sum(axis=1), 1.0)

    def test_single_token_estimate_has_zero_error(self):
        # one positive estimate self-normalises to 1 for every draw
        X = np.array([[0.4, -0.1]])
        p = GaussianKernelParams(1.0)
        stats = attention_estimate(
            X, lambda r: build_ensemble(2, 2, "iid", r), p, 20, np.random.default_rng(20)
        )
        assert stats.mse == 0.0

    def test_estimate_statistics_shapes(self):
        rng = np.random.default_rng(13)
        X = rng.standard_normal((5, 4)) * 0.3
        p = GaussianKernelParams(rlf_lengthscale_heuristic(X))
        stats = attention_estimate(
            X, lambda r: build_ensemble(4, 4, "orthogonal", r), p, 50, rng
        )
        assert isinstance(stats, AttentionStats)
        assert stats.mse_per_row.shape == (5,)
        assert stats.mse > 0 and stats.kernel_var > 0
        assert stats.trials == 50

    def test_estimate_converges_to_exact(self):
        rng = np.random.default_rng(14)
        X = rng.standard_normal((4, 3)) * 0.3
        p = GaussianKernelParams(rlf_lengthscale_heuristic(X))
        few = attention_estimate(
            X, lambda r: build_ensemble(3, 3, "orthogonal", r), p, 30, np.random.default_rng(1)
        )
        many = attention_estimate(
            X, lambda r: build_ensemble(12, 3, "orthogonal", r), p, 30, np.random.default_rng(1)
        )
        assert many.mse < few.mse

"""Euclidean random feature maps and their evaluation machinery.

Covers the Gaussian kernel, trigonometric and exponential feature maps,
Gram estimation metrics, the pair cost series that drive the coupling
analysis, and a row-normalised attention estimator.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import ConvergenceError, FeatureOverflowError
from .mathcore import ensure_rng


@dataclass(frozen=True)
class GaussianKernelParams:
    """Lengthscale, output scale and observation-noise scale."""

    lengthscale: float
    output_scale: float = 1.0
    noise_scale: float = 0.0

    def __post_init__(self):
        if self.lengthscale <= 0 or self.output_scale <= 0 or self.noise_scale < 0:
            raise ValueError("kernel parameters must be positive (noise >= 0)")


@dataclass(frozen=True)
class CostSeriesConfig:
    """Truncation policy for the pair cost series."""

    tol: float = 1e-12
    max_terms: int = 200


def gaussian_kernel(x, y, params: GaussianKernelParams) -> float:
    """k(x, y) = s_v^2 exp(-||x - y||^2 / (2 l^2))."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    sq = float(np.sum((x - y) ** 2))
    return params.output_scale**2 * np.exp(-sq / (2 * params.lengthscale**2))


def gaussian_gram(X, Y, params: GaussianKernelParams) -> np.ndarray:
    """Exact kernel matrix between the rows of X and Y."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    sq = (
        np.sum(X**2, axis=1)[:, None]
        - 2.0 * X @ Y.T
        + np.sum(Y**2, axis=1)[None, :]
    )
    sq = np.maximum(sq, 0.0)
    return params.output_scale**2 * np.exp(-sq / (2 * params.lengthscale**2))


def _freqs(ens) -> np.ndarray:
    return np.asarray(getattr(ens, "freqs", ens), dtype=float)


def rff_features(x, ens, params: GaussianKernelParams) -> np.ndarray:
    """Trigonometric features of length 2m: sqrt(1/m) [sin, cos](w_i . x/l).

    The output is scaled by the kernel output scale, so the self dot
    product is exactly output_scale^2 for any input and ensemble.
    """
    freqs = _freqs(ens)
    x = np.asarray(x, dtype=float)
    if x.shape != (freqs.shape[1],):
        raise ValueError(f"dimension mismatch: x {x.shape}, freqs {freqs.shape}")
    args = freqs @ (x / params.lengthscale)
    scale = params.output_scale / np.sqrt(freqs.shape[0])
    return scale * np.concatenate([np.sin(args), np.cos(args)])


def rlf_features(x, ens, params: GaussianKernelParams) -> np.ndarray:
    """Exponential features of length m; all entries strictly positive.

    phi(x) = output_scale sqrt(1/m) exp(-||x/l||^2) exp(w_i . x/l).  Raises
    :class:`FeatureOverflowError` when the exponent would overflow; the fix
    is a larger lengthscale.
    """
    freqs = _freqs(ens)
    x = np.asarray(x, dtype=float)
    if x.shape != (freqs.shape[1],):
        raise ValueError(f"dimension mismatch: x {x.shape}, freqs {freqs.shape}")
    xs = x / params.lengthscale
    args = freqs @ xs
    if np.max(args, initial=-np.inf) > 700.0:
        raise FeatureOverflowError(
            "exp feature argument exceeds 700; enlarge the kernel lengthscale"
        )
    scale = params.output_scale / np.sqrt(freqs.shape[0])
    return scale * np.exp(args - np.sum(xs**2))


def rff_feature_matrix(X, ens, params: GaussianKernelParams) -> np.ndarray:
    """Feature matrix (2m x N) whose columns are rff_features of X's rows."""
    freqs = _freqs(ens)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    args = freqs @ (X.T / params.lengthscale)
    scale = params.output_scale / np.sqrt(freqs.shape[0])
    return scale * np.vstack([np.sin(args), np.cos(args)])


def rlf_feature_matrix(X, ens, params: GaussianKernelParams) -> np.ndarray:
    """Feature matrix (m x N) whose columns are rlf_features of X's rows."""
    freqs = _freqs(ens)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Xs = X / params.lengthscale
    args = freqs @ Xs.T
    if args.size and np.max(args) > 700.0:
        raise FeatureOverflowError(
            "exp feature argument exceeds 700; enlarge the kernel lengthscale"
        )
    scale = params.output_scale / np.sqrt(freqs.shape[0])
    return scale * np.exp(args - np.sum(Xs**2, axis=1)[None, :])


def gram_estimate(features: np.ndarray) -> np.ndarray:
    """K_hat = Phi^T Phi for a (feature_dim x N) matrix; symmetric PSD."""
    phi = np.asarray(features, dtype=float)
    return phi.T @ phi


def relative_rmse(k_hat: np.ndarray, k_exact: np.ndarray) -> float:
    """Root mean squared entrywise error between two Gram matrices.

    Benchmark reports normalise this by the value obtained with the iid
    coupling under the same protocol.
    """
    k_hat = np.asarray(k_hat, dtype=float)
    k_exact = np.asarray(k_exact, dtype=float)
    if k_hat.shape != k_exact.shape:
        raise ValueError(f"shape mismatch: {k_hat.shape} vs {k_exact.shape}")
    return float(np.sqrt(np.mean((k_hat - k_exact) ** 2)))


def rlf_lengthscale_heuristic(X) -> float:
    """Twice the average summed pair norm, (2/N^2) sum_ij ||x_i + x_j||."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    sums = np.linalg.norm(X[:, None, :] + X[None, :, :], axis=2)
    return float(2.0 * np.mean(sums))


# ---------------------------------------------------------------------------
# Pair cost series


def _pair_cost_series(t: float, omega_sq_sum: float, d: int, cfg: CostSeriesConfig,
                      alternating: bool) -> float:
    """sum_k (+-1)^k t^(2k) (w1^2+w2^2)^k / (4^k k! Gamma(k + d/2)).

    Terms are accumulated through their recurrence; truncates once a term
    falls below tol * |partial sum| and errors out if max_terms is hit
    first.
    """
    term = np.exp(-gammaln(d / 2.0))  # k = 0 term, 1/Gamma(d/2)
    total = term
    ratio_base = t * t * omega_sq_sum / 4.0
    sign = -1.0 if alternating else 1.0
    for k in range(1, cfg.max_terms + 1):
        term *= sign * ratio_base / (k * (k - 1 + d / 2.0))
        total += term
        if abs(term) < cfg.tol * max(abs(total), 1e-300):
            return float(total)
    raise ConvergenceError(
        f"pair cost series did not converge within {cfg.max_terms} terms"
    )


def cost_rff(omega1: float, omega2: float, z: float, d: int,
             cfg: CostSeriesConfig = CostSeriesConfig()) -> float:
    """Single ordered-pair trigonometric cost; alternating series in z."""
    if omega1 < 0 or omega2 < 0 or z < 0:
        raise ValueError("cost_rff requires nonnegative inputs")
    return _pair_cost_series(z, omega1**2 + omega2**2, d, cfg, alternating=True)


def cost_rlf(omega1: float, omega2: float, v: float, d: int,
             cfg: CostSeriesConfig = CostSeriesConfig()) -> float:
    """Single ordered-pair exponential cost; positive-term series in v."""
    if omega1 < 0 or omega2 < 0 or v < 0:
        raise ValueError("cost_rlf requires nonnegative inputs")
    return _pair_cost_series(v, omega1**2 + omega2**2, d, cfg, alternating=False)


# ---------------------------------------------------------------------------
# Attention


def attention_exact(X, params: GaussianKernelParams) -> np.ndarray:
    """Row-normalised kernel scores a_ij = k(x_i, x_j) / sum_l k(x_i, x_l)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    K = gaussian_gram(X, X, params)
    return K / np.sum(K, axis=1, keepdims=True)


@dataclass
class AttentionStats:
    """Monte Carlo error statistics for estimated attention scores.

    ``mse_per_row[i]`` averages the squared attention error over the tokens
    row i attends to; ``kernel_var`` and ``kernel_cov`` are the mean
    pointwise variance and the mean same-row covariance of the raw kernel
    estimates, i.e. the two competing terms in the attention error
    expansion.
    """

    mse_per_row: np.ndarray
    kernel_var: float
    kernel_cov: float
    trials: int

    @property
    def mse(self) -> float:
        return float(np.mean(self.mse_per_row))


def attention_estimate(X, sample_ensemble, params: GaussianKernelParams,
                       trials: int, rng) -> AttentionStats:
    """Estimate attention with exponential features over many ensembles.

    ``sample_ensemble`` is called with a Generator once per trial and must
    return a frequency ensemble; exponential features keep every kernel
    estimate positive so row sums never vanish.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    rng = ensure_rng(rng)
    n = X.shape[0]
    a_exact = attention_exact(X, params)

    att_sq_err = np.zeros((n, n))
    k_sum = np.zeros((n, n))
    k_sq_sum = np.zeros((n, n))
    k_cross = np.zeros(n)  # sum over trials of (sum_j khat_ij)^2 per row
    for _ in range(trials):
        ens = sample_ensemble(rng)
        phi = rlf_feature_matrix(X, ens, params)
        k_hat = gram_estimate(phi)
        a_hat = k_hat / np.sum(k_hat, axis=1, keepdims=True)
        att_sq_err += (a_hat - a_exact) ** 2
        k_sum += k_hat
        k_sq_sum += k_hat**2
        k_cross += np.sum(k_hat, axis=1) ** 2

    mse_rows = np.mean(att_sq_err, axis=1) / trials
    k_mean = k_sum / trials
    var = k_sq_sum / trials - k_mean**2
    # mean over (j1, j2) pairs of Cov(khat_ij1, khat_ij2), including j1 = j2
    row_second = k_cross / trials
    row_mean = np.sum(k_mean, axis=1)
    cov_rows = (row_second - row_mean**2) / n**2
    return AttentionStats(
        mse_per_row=mse_rows,
        kernel_var=float(np.mean(var)),
        kernel_cov=float(np.mean(cov_rows)),
        trials=trials,
    )


def write_gram_csv(path, gram: np.ndarray, *, seed, coupling: str, m: int, d: int):
    """Dense Gram matrix as CSV with a metadata header row."""
    gram = np.asarray(gram, dtype=float)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"seed={seed}", f"coupling={coupling}", f"m={m}", f"d={d}"])
        for row in gram:
            writer.writerow([repr(float(v)) for v in row])


def read_gram_csv(path) -> tuple[np.ndarray, dict]:
    """Inverse of :func:`write_gram_csv`; returns (matrix, metadata)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    meta = dict(item.split("=", 1) for item in rows[0])
    return np.array([[float(v) for v in row] for row in rows[1:]]), meta

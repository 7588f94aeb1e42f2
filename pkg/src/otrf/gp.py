"""Exact and feature-space Gaussian-process regression.

Posteriors are reported in observation space: predictive covariances carry
the +noise^2 I term, so the exact and feature-space routes agree exactly
when the features reproduce the kernel.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import NumericalError
from .eucrf import GaussianKernelParams, gaussian_gram


@dataclass
class GaussianPosterior:
    """Predictive mean vector and covariance matrix."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).ravel()
        self.cov = np.asarray(self.cov, dtype=float)
        if self.cov.shape != (self.mean.size, self.mean.size):
            raise ValueError("covariance shape does not match mean length")

    def validate(self, atol: float = 1e-10):
        if not np.allclose(self.cov, self.cov.T, atol=atol):
            raise ValueError("covariance is not symmetric")
        eigs = np.linalg.eigvalsh(0.5 * (self.cov + self.cov.T))
        floor = -1e-8 * max(np.trace(self.cov), 1.0)
        if np.min(eigs) < floor:
            raise ValueError(f"covariance not numerically PSD (min eig {eigs.min()})")


@dataclass
class RegressionData:
    """Training inputs/targets and prediction inputs."""

    train_x: np.ndarray
    train_y: np.ndarray
    pred_x: np.ndarray

    def __post_init__(self):
        self.train_x = np.atleast_2d(np.asarray(self.train_x, dtype=float))
        self.train_y = np.asarray(self.train_y, dtype=float).ravel()
        self.pred_x = np.atleast_2d(np.asarray(self.pred_x, dtype=float))
        if self.pred_x.shape[0] == 0:
            raise ValueError("prediction set must be nonempty")


def _jittered_cho(mat: np.ndarray):
    """Cholesky with escalating diagonal jitter.

    Tries the matrix as given first, then adds 1e-8 tr/N to the diagonal
    and escalates tenfold up to 1e-4 tr/N before failing.
    """
    n = mat.shape[0]
    base = max(np.trace(mat) / n, 1e-12)
    jitter = 0.0
    while True:
        try:
            return cho_factor(mat + jitter * np.eye(n), lower=True), jitter
        except LinAlgError:
            jitter = 1e-8 * base if jitter == 0.0 else jitter * 10.0
            if jitter > 1e-4 * base:
                raise NumericalError(
                    "matrix not positive definite even after 1e-4 tr/N jitter"
                ) from None


def exact_posterior(k_dd, k_pd, k_pp, y, noise_scale: float) -> GaussianPosterior:
    """Kernel-space predictive posterior for noisy observations.

    mean = K_pd (K_dd + s_n^2 I)^-1 y and cov = K_pp - K_pd (...)^-1 K_dp
    + s_n^2 I, solved through a symmetric factorisation.  With an empty
    training set this is the prior N(0, K_pp + s_n^2 I).
    """
    if noise_scale <= 0:
        raise ValueError("noise_scale must be positive")
    k_dd = np.atleast_2d(np.asarray(k_dd, dtype=float))
    k_pd = np.atleast_2d(np.asarray(k_pd, dtype=float))
    k_pp = np.atleast_2d(np.asarray(k_pp, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    n_d = k_dd.shape[0] if k_dd.size else 0
    n_p = k_pp.shape[0]
    if n_d == 0:
        return GaussianPosterior(np.zeros(n_p), k_pp + noise_scale**2 * np.eye(n_p))
    if k_pd.shape != (n_p, n_d) or y.shape != (n_d,):
        raise ValueError("inconsistent block shapes")
    cho, _ = _jittered_cho(k_dd + noise_scale**2 * np.eye(n_d))
    mean = k_pd @ cho_solve(cho, y)
    cov = k_pp - k_pd @ cho_solve(cho, k_pd.T) + noise_scale**2 * np.eye(n_p)
    return GaussianPosterior(mean, 0.5 * (cov + cov.T))


def approx_posterior(phi_d, phi_p, y, noise_scale: float) -> GaussianPosterior:
    """Feature-space posterior of the implied linear model, cost O(N m^2).

    Algebraically identical (by the Woodbury identity) to
    :func:`exact_posterior` applied to the Gram blocks Phi^T Phi.
    Feature matrices are laid out (feature_dim x N).
    """
    if noise_scale <= 0:
        raise ValueError("noise_scale must be positive")
    phi_d = np.atleast_2d(np.asarray(phi_d, dtype=float))
    phi_p = np.atleast_2d(np.asarray(phi_p, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if phi_d.shape[0] != phi_p.shape[0]:
        raise ValueError("feature dimensions of train/prediction blocks differ")
    if phi_d.shape[1] != y.size:
        raise ValueError("phi_d column count must match y")
    s = phi_d.shape[0]
    n_p = phi_p.shape[1]
    a = phi_d @ phi_d.T / noise_scale**2 + np.eye(s)
    cho, _ = _jittered_cho(a)
    mean = phi_p.T @ cho_solve(cho, phi_d @ y) / noise_scale**2
    cov = phi_p.T @ cho_solve(cho, phi_p) + noise_scale**2 * np.eye(n_p)
    return GaussianPosterior(mean, 0.5 * (cov + cov.T))


def log_marginal_likelihood(k_dd, y, noise_scale: float) -> float:
    """Gaussian log evidence of targets under kernel matrix + noise."""
    k_dd = np.atleast_2d(np.asarray(k_dd, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    cho, _ = _jittered_cho(k_dd + noise_scale**2 * np.eye(n))
    alpha = cho_solve(cho, y)
    logdet = 2.0 * np.sum(np.log(np.diag(cho[0])))
    value = -0.5 * float(y @ alpha) - 0.5 * logdet - 0.5 * n * np.log(2 * np.pi)
    if not np.isfinite(value):
        raise NumericalError("log marginal likelihood is non-finite")
    return value


@dataclass
class GPFitConfig:
    steps: int = 1000
    lr: float = 1e-2
    fix_lengthscale: float | None = None

    def __post_init__(self):
        if not 1 <= self.steps <= 5000:
            raise ValueError("steps must lie in [1, 5000]")


def _evidence_and_grad(X, y, log_params, fixed_ls):
    """Log evidence and its gradient w.r.t. (log l, log s_v, log s_n)."""
    log_l, log_v, log_n = log_params
    if fixed_ls is not None:
        log_l = np.log(fixed_ls)
    ls, sv, sn = np.exp(log_l), np.exp(log_v), np.exp(log_n)
    n = y.size
    sq = np.sum((X[:, None, :] - X[None, :, :]) ** 2, axis=2)
    k = sv**2 * np.exp(-sq / (2 * ls**2))
    cho, _ = _jittered_cho(k + sn**2 * np.eye(n))
    alpha = cho_solve(cho, y)
    k_inv = cho_solve(cho, np.eye(n))
    value = (
        -0.5 * float(y @ alpha)
        - np.sum(np.log(np.diag(cho[0])))
        - 0.5 * n * np.log(2 * np.pi)
    )
    grads = []
    for dk in (k * sq / ls**2, 2.0 * k, 2.0 * sn**2 * np.eye(n)):
        grads.append(0.5 * float(alpha @ dk @ alpha) - 0.5 * float(np.sum(k_inv * dk)))
    if fixed_ls is not None:
        grads[0] = 0.0
    return value, np.array(grads)


def fit_hyperparams(
    data: RegressionData,
    init: GaussianKernelParams,
    config: GPFitConfig = GPFitConfig(),
) -> GaussianKernelParams:
    """Maximise the exact log evidence with Adam in log-parameter space.

    Positivity is enforced by the log parameterisation; gradients are
    analytic.  Training sets are capped at 256 points.
    """
    X, y = data.train_x, data.train_y
    if y.size > 256:
        raise ValueError("training set capped at 256 points for exact fitting")
    log_params = np.log([init.lengthscale, init.output_scale, max(init.noise_scale, 1e-3)])
    m1 = np.zeros(3)
    m2 = np.zeros(3)
    for t in range(config.steps):
        value, grad = _evidence_and_grad(X, y, log_params, config.fix_lengthscale)
        if not np.isfinite(value):
            raise NumericalError(f"evidence became non-finite at step {t}")
        g = -grad  # Adam minimises
        m1 = 0.9 * m1 + 0.1 * g
        m2 = 0.999 * m2 + 0.001 * g**2
        m1_hat = m1 / (1 - 0.9 ** (t + 1))
        m2_hat = m2 / (1 - 0.999 ** (t + 1))
        log_params = log_params - config.lr * m1_hat / (np.sqrt(m2_hat) + 1e-8)
    ls = config.fix_lengthscale if config.fix_lengthscale is not None else np.exp(log_params[0])
    return GaussianKernelParams(
        lengthscale=float(ls),
        output_scale=float(np.exp(log_params[1])),
        noise_scale=float(np.exp(log_params[2])),
    )


def gaussian_kl(p: GaussianPosterior, q: GaussianPosterior,
                per_datapoint: bool = False) -> float:
    """KL(p || q) in nats between Gaussian posteriors of equal dimension.

    Tiny negative values from roundoff are clamped to zero; set
    ``per_datapoint`` to divide by the dimension.
    """
    if p.mean.size != q.mean.size:
        raise ValueError("posteriors have different dimensions")
    k = p.mean.size
    # the same jitter goes on both covariances so KL(p, p) is exactly zero
    cho_q, jitter = _jittered_cho(q.cov)
    cov_p = p.cov + jitter * np.eye(k)
    cho_p, _ = _jittered_cho(cov_p)
    diff = q.mean - p.mean
    trace_term = float(np.trace(cho_solve(cho_q, cov_p)))
    quad = float(diff @ cho_solve(cho_q, diff))
    logdet_q = 2.0 * np.sum(np.log(np.diag(cho_q[0])))
    logdet_p = 2.0 * np.sum(np.log(np.diag(cho_p[0])))
    kl = 0.5 * (trace_term + quad - k + logdet_q - logdet_p)
    if kl < -1e-10:
        raise NumericalError(f"KL evaluated to {kl}; covariances are unusable")
    kl = max(kl, 0.0)
    return kl / k if per_datapoint else kl


def kernel_blocks(train_x, pred_x, params: GaussianKernelParams):
    """Convenience: (K_dd, K_pd, K_pp) for the Gaussian kernel."""
    k_dd = gaussian_gram(train_x, train_x, params)
    k_pd = gaussian_gram(pred_x, train_x, params)
    k_pp = gaussian_gram(pred_x, pred_x, params)
    return k_dd, k_pd, k_pp


def posterior_summary_json(posterior: GaussianPosterior, kl: float | None = None,
                           rmse: float | None = None) -> str:
    """JSON export {mean, cov_diag, kl, rmse}."""
    return json.dumps(
        {
            "mean": list(posterior.mean),
            "cov_diag": list(np.diag(posterior.cov)),
            "kl": kl,
            "rmse": rmse,
        }
    )

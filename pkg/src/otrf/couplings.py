"""Frequency-ensemble construction under coupled sampling schemes.

Ensembles of m frequency vectors in R^d are built so that every vector is
marginally N(0, I_d) while the joint distribution is shaped for variance
reduction: orthogonal directions, negative-monotone norm pairs, antithetic
mirroring, positive-monotone (equal) norms, or a learned Gaussian-copula
joint over the norms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import eucrf
from .errors import NumericalError
from .mathcore import (
    ChiParams,
    chi_inv_cdf,
    ensure_rng,
    gauss_cdf,
    gauss_inv_cdf,
    halton_points,
)

COUPLING_TAGS = (
    "iid",
    "halton",
    "orthogonal",
    "orthogonal_pnc",
    "orthogonal_pnc_antithetic",
    "positive_monotone",
    "copula",
)

_TINY = 1e-300
_ONE_MINUS = 1.0 - 1e-16


@dataclass
class CorrelationParams:
    """Unconstrained parameters of a row-normalised Cholesky factor.

    ``theta`` holds the m(m-1)/2 strictly-lower-triangular entries in
    row-major order; the diagonal entries are implicitly 1.  Any real values
    are admissible: row normalisation maps them to a valid correlation
    matrix, and negative entries produce negative correlations (required to
    represent negative-monotone couplings).
    """

    m: int
    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        expect = self.m * (self.m - 1) // 2
        if self.theta.shape != (expect,):
            raise ValueError(
                f"theta must have shape ({expect},) for m={self.m}, "
                f"got {self.theta.shape}"
            )

    @classmethod
    def near_independence(cls, m: int, scale: float = 1e-3) -> "CorrelationParams":
        return cls(m, np.full(m * (m - 1) // 2, scale))

    def to_json(self) -> str:
        return json.dumps(list(self.theta))

    @classmethod
    def from_json(cls, text: str) -> "CorrelationParams":
        flat = np.asarray(json.loads(text), dtype=float)
        m = int(round((1 + np.sqrt(1 + 8 * flat.size)) / 2))
        return cls(m, flat)


@dataclass(frozen=True)
class CouplingSpec:
    """A named coupling strategy, optionally carrying copula parameters."""

    tag: str
    params: CorrelationParams | None = None

    def __post_init__(self):
        if self.tag not in COUPLING_TAGS:
            raise ValueError(f"unknown coupling tag {self.tag!r}")
        if self.tag == "copula" and self.params is None:
            raise ValueError("copula coupling requires CorrelationParams")


@dataclass
class FrequencyEnsemble:
    """m frequency vectors in R^d plus the coupling they were drawn under."""

    freqs: np.ndarray
    coupling: str
    seed: int | None = None

    @property
    def m(self) -> int:
        return self.freqs.shape[0]

    @property
    def dim(self) -> int:
        return self.freqs.shape[1]


def _open_unit(rng: np.random.Generator, size) -> np.ndarray:
    """Uniform draws restricted to the open interval (0, 1)."""
    u = rng.random(size)
    while np.any(u == 0.0):
        zeros = u == 0.0
        u[zeros] = rng.random(int(np.sum(zeros)))
    return u


def sample_orthogonal_directions(d: int, count: int, rng) -> np.ndarray:
    """``count`` pairwise-orthogonal unit vectors, jointly Haar-rotated.

    QR orthonormalisation of a d x d standard Gaussian matrix with sign
    correction, so each row is marginally uniform on the sphere.
    """
    if count > d:
        raise ValueError(f"cannot draw {count} orthogonal directions in R^{d}")
    rng = ensure_rng(rng)
    gauss = rng.standard_normal((d, d))
    q, r = np.linalg.qr(gauss)
    q = q * np.sign(np.diag(r))
    return q[:, :count].T


def _pnc_norms(count: int, d: ChiParams, rng: np.random.Generator) -> np.ndarray:
    """Chi_d norms with negative-monotone coupling on consecutive pairs.

    F(w1) + F(w2) = 1 holds exactly by construction; an odd trailing norm
    is left independent.
    """
    out = np.empty(count)
    n_pairs = count // 2
    if n_pairs:
        u = _open_unit(rng, n_pairs)
        out[0 : 2 * n_pairs : 2] = chi_inv_cdf(u, d)
        out[1 : 2 * n_pairs : 2] = chi_inv_cdf(1.0 - u, d)
    if count % 2:
        out[-1] = chi_inv_cdf(_open_unit(rng, 1), d)[0]
    return out


def sample_norms(count: int, d: int, scheme: CouplingSpec | str, rng) -> np.ndarray:
    """Frequency norms, marginally chi_d, coupled per ``scheme``.

    ``positive_monotone`` norms are equal within consecutive blocks of
    size d; ``copula`` norms are drawn jointly through the Gaussian copula.
    """
    tag = scheme if isinstance(scheme, str) else scheme.tag
    rng = ensure_rng(rng)
    chi = ChiParams(d)
    if tag in ("iid", "halton", "orthogonal"):
        return chi_inv_cdf(_open_unit(rng, count), chi)
    if tag in ("orthogonal_pnc", "orthogonal_pnc_antithetic"):
        return _pnc_norms(count, chi, rng)
    if tag == "positive_monotone":
        out = np.empty(count)
        for start in range(0, count, d):
            stop = min(start + d, count)
            out[start:stop] = chi_inv_cdf(_open_unit(rng, 1), chi)[0]
        return out
    if tag == "copula":
        if isinstance(scheme, str):
            raise ValueError("copula norms need a CouplingSpec carrying params")
        params = scheme.params
        if params.m != count:
            raise ValueError(f"copula params are for m={params.m}, need {count}")
        return sample_copula_norms(params, chi, rng)
    raise ValueError(f"unknown coupling tag {tag!r}")


def cholesky_from_params(theta: CorrelationParams) -> np.ndarray:
    """Row-normalised lower-triangular factor L with Sigma = L L^T.

    Row i is (theta_i1, ..., theta_ii) / s_i with theta_ii = 1 and s_i the
    row L2 norm, so Sigma has unit diagonal by construction.
    """
    m = theta.m
    L = np.zeros((m, m))
    L[0, 0] = 1.0
    pos = 0
    for i in range(1, m):
        row = np.empty(i + 1)
        row[:i] = theta.theta[pos : pos + i]
        row[i] = 1.0
        pos += i
        L[i, : i + 1] = row / np.linalg.norm(row)
    return L


def sample_copula_norms(theta: CorrelationParams, d: ChiParams, rng) -> np.ndarray:
    """Norms with chi_d marginals and a Gaussian-copula joint.

    A correlated Gaussian vector g = L z is pushed through the standard
    normal CDF and then the chi_d quantile function; the marginals are
    chi_d for every theta.
    """
    rng = ensure_rng(rng)
    L = cholesky_from_params(theta)
    g = L @ rng.standard_normal(theta.m)
    u = np.clip(gauss_cdf(g), _TINY, _ONE_MINUS)
    return chi_inv_cdf(u, d)


def build_ensemble(m: int, d: int, scheme: CouplingSpec | str, rng) -> FrequencyEnsemble:
    """Draw an m x d frequency ensemble under ``scheme``.

    Orthogonal schemes require m to be a multiple of d (independent blocks
    of d); the antithetic variant requires a multiple of 2d and mirrors each
    block, freq[d+i] = -freq[i].  The Halton scheme maps a d-dimensional
    Halton point through the Gaussian quantile function coordinate-wise,
    with a random modulo-1 shift so marginals stay Gaussian; pass
    ``rng=None`` for the raw, unshifted sequence.
    """
    spec = CouplingSpec(scheme) if isinstance(scheme, str) else scheme
    tag = spec.tag
    seed = rng if isinstance(rng, (int, np.integer)) else None

    if tag == "halton":
        pts = halton_points(m, d)
        if rng is not None:
            pts = np.mod(pts + ensure_rng(rng).random(d), 1.0)
        pts = np.clip(pts, _TINY, _ONE_MINUS)
        return FrequencyEnsemble(gauss_inv_cdf(pts), tag, seed)

    rng = ensure_rng(rng)
    if tag == "iid":
        return FrequencyEnsemble(rng.standard_normal((m, d)), tag, seed)

    if tag == "copula":
        if spec.params.m != m:
            raise ValueError(f"copula params are for m={spec.params.m}, need m={m}")
        dirs = _blockwise_directions(m, d, rng)
        norms = sample_copula_norms(spec.params, ChiParams(d), rng)
        return FrequencyEnsemble(norms[:, None] * dirs, tag, seed)

    if tag == "orthogonal_pnc_antithetic":
        if m % (2 * d) != 0:
            raise ValueError(
                f"antithetic scheme needs m to be a multiple of 2d, got m={m}, d={d}"
            )
        blocks = []
        for _ in range(m // (2 * d)):
            dirs = sample_orthogonal_directions(d, d, rng)
            base = _pnc_norms(d, ChiParams(d), rng)[:, None] * dirs
            blocks.append(np.vstack([base, -base]))
        return FrequencyEnsemble(np.vstack(blocks), tag, seed)

    if tag in ("orthogonal", "orthogonal_pnc", "positive_monotone"):
        if m % d != 0:
            raise ValueError(
                f"orthogonal schemes need m to be a multiple of d, got m={m}, d={d}"
            )
        blocks = []
        for _ in range(m // d):
            dirs = sample_orthogonal_directions(d, d, rng)
            norms = sample_norms(d, d, spec, rng)
            blocks.append(norms[:, None] * dirs)
        return FrequencyEnsemble(np.vstack(blocks), tag, seed)

    raise ValueError(f"unknown coupling tag {tag!r}")


def _blockwise_directions(m: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Orthogonal unit directions in independent blocks of at most d."""
    if m > d and m % d != 0:
        raise ValueError(f"need m <= d or m a multiple of d, got m={m}, d={d}")
    blocks = []
    left = m
    while left > 0:
        take = min(left, d)
        blocks.append(sample_orthogonal_directions(d, take, rng))
        left -= take
    return np.vstack(blocks)


# ---------------------------------------------------------------------------
# Copula loss and optimisation


def _batched_rmse_loss(
    thetas: np.ndarray,
    dataset: np.ndarray,
    kernel: "eucrf.GaussianKernelParams",
    featurizer: str,
    mc_samples: int,
    seed: int,
) -> np.ndarray:
    """Kernel-approximation RMSE loss for a batch of theta vectors.

    All batch entries share the same underlying noise (directions and
    Gaussian draws), giving common-random-number evaluations: the loss is a
    deterministic, smooth function of (theta, seed).  Used both for plain
    loss evaluation and for finite-difference gradients.
    """
    if featurizer not in ("rff", "rlf"):
        raise ValueError(f"featurizer must be 'rff' or 'rlf', got {featurizer!r}")
    dataset = np.atleast_2d(np.asarray(dataset, dtype=float))
    if dataset.size == 0:
        raise ValueError("copula loss requires a nonempty dataset")
    n_batch, n_par = thetas.shape
    m = int(round((1 + np.sqrt(1 + 8 * n_par)) / 2))
    d = dataset.shape[1]
    rng = np.random.default_rng(seed)

    k_exact = eucrf.gaussian_gram(dataset, dataset, kernel)
    x_scaled = dataset / kernel.lengthscale
    chi = ChiParams(d)

    ls = np.stack([cholesky_from_params(CorrelationParams(m, t)) for t in thetas])
    losses = np.zeros(n_batch)
    for _ in range(mc_samples):
        dirs = _blockwise_directions(m, d, rng)
        z = rng.standard_normal(m)
        g = ls @ z
        u = np.clip(gauss_cdf(g), _TINY, _ONE_MINUS)
        norms = chi_inv_cdf(u.ravel(), chi).reshape(n_batch, m)
        # projections of every datapoint on every direction: (m, N)
        proj = dirs @ x_scaled.T
        args = norms[:, :, None] * proj[None, :, :]
        if featurizer == "rff":
            phi = np.concatenate([np.sin(args), np.cos(args)], axis=1)
            phi *= kernel.output_scale / np.sqrt(m)
        else:
            if np.max(args) > 700.0:
                raise NumericalError("copula loss overflowed in exp features")
            sq = np.sum(x_scaled**2, axis=1)
            phi = np.exp(args - sq[None, None, :])
            phi *= kernel.output_scale / np.sqrt(m)
        k_hat = np.einsum("bfi,bfj->bij", phi, phi)
        losses += np.sqrt(np.mean((k_hat - k_exact[None]) ** 2, axis=(1, 2)))
    return losses / mc_samples


def copula_loss(
    theta: CorrelationParams,
    dataset: np.ndarray,
    kernel: "eucrf.GaussianKernelParams",
    featurizer: str,
    mc_samples: int,
    rng,
) -> float:
    """Monte Carlo estimate of the expected kernel-approximation RMSE.

    Each draw resamples orthogonal directions and copula norms, builds the
    feature Gram estimate over the dataset and takes the RMSE against the
    exact Gaussian kernel; draws are averaged.  Passing an integer seed
    gives a common-random-number evaluation, deterministic in (theta, seed).
    """
    seed = rng if isinstance(rng, (int, np.integer)) else int(ensure_rng(rng).integers(2**63))
    return float(
        _batched_rmse_loss(
            theta.theta[None, :], dataset, kernel, featurizer, mc_samples, seed
        )[0]
    )


def reference_coupling_loss(
    scheme: CouplingSpec | str,
    m: int,
    dataset: np.ndarray,
    kernel: "eucrf.GaussianKernelParams",
    featurizer: str,
    mc_samples: int,
    rng,
) -> float:
    """Same RMSE-loss protocol as :func:`copula_loss` for a fixed scheme.

    Gives a like-for-like baseline (e.g. orthogonal with independent or
    negative-monotone-paired norms) to compare learned copulas against.
    """
    dataset = np.atleast_2d(np.asarray(dataset, dtype=float))
    rng = ensure_rng(rng)
    d = dataset.shape[1]
    k_exact = eucrf.gaussian_gram(dataset, dataset, kernel)
    total = 0.0
    for _ in range(mc_samples):
        dirs = _blockwise_directions(m, d, rng)
        norms = sample_norms(m, d, scheme, rng)
        ens = FrequencyEnsemble(norms[:, None] * dirs, "reference")
        phi = (
            eucrf.rff_feature_matrix(dataset, ens, kernel)
            if featurizer == "rff"
            else eucrf.rlf_feature_matrix(dataset, ens, kernel)
        )
        total += eucrf.relative_rmse(eucrf.gram_estimate(phi), k_exact)
    return total / mc_samples


@dataclass
class CopulaOptConfig:
    """Adam settings for copula optimisation (defaults follow the protocol)."""

    steps: int = 2000
    lr: float = 1e-2
    mc_samples: int = 2
    fd_step: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: int | None = None  # ensemble size; defaults to the data dimension
    init: CorrelationParams | None = None


@dataclass
class CopulaFitResult:
    params: CorrelationParams
    loss_trace: np.ndarray = field(default_factory=lambda: np.empty(0))


def optimize_copula(
    dataset: np.ndarray,
    kernel: "eucrf.GaussianKernelParams",
    featurizer: str,
    config: CopulaOptConfig,
    rng,
) -> CopulaFitResult:
    """Learn copula parameters by Adam on the RMSE loss.

    Gradients are central finite differences with common random numbers:
    every evaluation within one step shares the same seed, so the
    differences see only the theta perturbation.  Aborts on a non-finite
    loss.
    """
    dataset = np.atleast_2d(np.asarray(dataset, dtype=float))
    rng = ensure_rng(rng)
    m = config.m if config.m is not None else dataset.shape[1]
    theta = (
        config.init.theta.copy()
        if config.init is not None
        else CorrelationParams.near_independence(m).theta.copy()
    )
    n_par = theta.size
    if config.steps == 0:
        return CopulaFitResult(CorrelationParams(m, theta))

    step_seeds = rng.integers(2**63, size=config.steps)
    m1 = np.zeros(n_par)
    m2 = np.zeros(n_par)
    trace = np.empty(config.steps)
    eye = np.eye(n_par)
    for t in range(config.steps):
        batch = np.vstack(
            [theta[None, :], theta + config.fd_step * eye, theta - config.fd_step * eye]
        )
        losses = _batched_rmse_loss(
            batch, dataset, kernel, featurizer, config.mc_samples, int(step_seeds[t])
        )
        if not np.all(np.isfinite(losses)):
            raise NumericalError(f"copula loss became non-finite at step {t}")
        trace[t] = losses[0]
        grad = (losses[1 : 1 + n_par] - losses[1 + n_par :]) / (2 * config.fd_step)
        m1 = config.beta1 * m1 + (1 - config.beta1) * grad
        m2 = config.beta2 * m2 + (1 - config.beta2) * grad**2
        m1_hat = m1 / (1 - config.beta1 ** (t + 1))
        m2_hat = m2 / (1 - config.beta2 ** (t + 1))
        theta = theta - config.lr * m1_hat / (np.sqrt(m2_hat) + config.eps)
    return CopulaFitResult(CorrelationParams(m, theta), trace)

"""Sparse node features from importance-weighted random-walk prefix sums.

A walk's projection adds, at every visited node, the product of traversed
normalised-adjacency weights times a modulation coefficient, divided by the
probability of observing that prefix.  Averaged over walks, dot products of
these features estimate graph node kernels whose adjacency Taylor
coefficients equal the self-convolution of the modulation sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import (
    GraphData,
    SigmaCoupling,
    WalkRecord,
    antithetic_termination_pair,
    batch_walk_lengths,
    sample_coupled_lengths,
    simulate_walk,
)
from .mathcore import GeometricParams, ensure_rng, geometric_inv_cdf

K_MAX_DEFAULT = 64

# walks longer than the modulation horizon contribute only their prefixes;
# this counter records how often that truncation happened
_truncations = 0


def truncation_count() -> int:
    return _truncations


def reset_truncation_count():
    global _truncations
    _truncations = 0


@dataclass
class ModulationFn:
    """Coefficient sequence whose self-convolution gives kernel coefficients."""

    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)

    @property
    def k_max(self) -> int:
        return self.coeffs.size - 1

    def __call__(self, k: int) -> float:
        return float(self.coeffs[k]) if k <= self.k_max else 0.0


def modulation_from_coefficients(alpha, k_max: int = K_MAX_DEFAULT) -> ModulationFn:
    """Discrete square root of a coefficient sequence under convolution.

    f(0) = sqrt(a_0) and f(k) = (a_k - sum_{j=1}^{k-1} f(j) f(k-j)) / (2 f(0)),
    so (f * f)(k) = a_k for k <= k_max.  Requires a_0 > 0.
    """
    alpha = np.asarray(alpha, dtype=float)
    if alpha[0] <= 0:
        raise ValueError("leading coefficient must be positive")
    padded = np.zeros(k_max + 1)
    padded[: min(alpha.size, k_max + 1)] = alpha[: k_max + 1]
    f = np.zeros(k_max + 1)
    f[0] = np.sqrt(padded[0])
    for k in range(1, k_max + 1):
        inner = np.dot(f[1:k], f[k - 1 : 0 : -1]) if k >= 2 else 0.0
        f[k] = (padded[k] - inner) / (2.0 * f[0])
    return ModulationFn(f)


@dataclass
class GrfFeature:
    """Feature vector for one node plus how it was sampled."""

    vector: np.ndarray
    m: int
    coupling: str


def project_walk(walk: WalkRecord, g: GraphData, f: ModulationFn,
                 p_halt: float) -> np.ndarray:
    """Importance-weighted prefix-sum projection of one walk.

    For the prefix of length t ending at node v_t the load is
    prefix_weight_t * f(t) / p_t, where p_t multiplies the per-step
    survival (1 - p_halt) and uniform neighbour probabilities; the empty
    prefix contributes f(0) at the start node.
    """
    global _truncations
    if not 0 < p_halt < 1:
        raise ValueError("p_halt must lie in (0, 1)")
    out = np.zeros(g.n_nodes)
    out[walk.start] += f(0)
    prob = 1.0
    for t in range(1, walk.length + 1):
        prev = walk.nodes[t - 1]
        prob *= (1.0 - p_halt) / g.neighbor_counts[prev]
        if t > f.k_max:
            _truncations += 1
            break
        out[walk.nodes[t]] += walk.prefix_weights[t] * f(t) / prob
    return out


def grf_features(g: GraphData, node: int, m: int, coupling, f: ModulationFn,
                 p_halt: float, rng) -> GrfFeature:
    """Average projection of m walks from one node under a length coupling.

    ``coupling`` is "iid", "antithetic_termination", or a
    :class:`SigmaCoupling`; the paired couplings need an even m.  Coupled
    variants impose lengths on walk pairs while leaving every walk's
    marginal unchanged.
    """
    rng = ensure_rng(rng)
    tag = coupling if isinstance(coupling, str) else "sigma"
    if tag != "iid" and m % 2:
        raise ValueError("paired couplings need an even number of walkers")
    total = np.zeros(g.n_nodes)
    if tag == "iid":
        for _ in range(m):
            total += project_walk(simulate_walk(g, node, rng, p_halt=p_halt), g, f, p_halt)
    elif tag == "antithetic_termination":
        for _ in range(m // 2):
            w1, w2 = antithetic_termination_pair(g, node, node, p_halt, rng)
            total += project_walk(w1, g, f, p_halt)
            total += project_walk(w2, g, f, p_halt)
    elif tag == "sigma":
        for _ in range(m // 2):
            l1, l2 = sample_coupled_lengths(coupling, rng)
            for l in (l1, l2):
                walk = simulate_walk(g, node, rng, length=int(l))
                total += project_walk(walk, g, f, p_halt)
    else:
        raise ValueError(f"unknown GRF coupling {coupling!r}")
    return GrfFeature(total / m, m, tag)


def _projected_batch(g: GraphData, starts: np.ndarray, lengths: np.ndarray,
                     f: ModulationFn, p_halt: float, rng,
                     row_of_walk: np.ndarray, out: np.ndarray):
    """Step a batch of fixed-length walks, scattering prefix loads into out.

    ``out`` has one row per feature (node) and one column per graph node;
    ``row_of_walk`` maps each walk to its output row.  All walks advance
    synchronously so the modulation coefficient is a scalar per step.
    """
    global _truncations
    survival = 1.0 - p_halt
    cur = np.asarray(starts, dtype=np.int64).copy()
    lengths = np.asarray(lengths, dtype=np.int64)
    weight = np.ones(cur.size)
    np.add.at(out, (row_of_walk, cur), f(0))
    max_len = int(lengths.max(initial=0))
    for t in range(1, max_len + 1):
        idx = np.flatnonzero(lengths >= t)
        if idx.size == 0:
            break
        if t > f.k_max:
            # remaining steps cannot contribute loads; record and stop
            _truncations += idx.size
            break
        nodes = cur[idx]
        deg = g.neighbor_counts[nodes]
        pick = g.indptr[nodes] + (rng.random(idx.size) * deg).astype(np.int64)
        nxt = g.indices[pick]
        weight[idx] *= g.anorm_data[pick] * deg / survival
        cur[idx] = nxt
        np.add.at(out, (row_of_walk[idx], nxt), weight[idx] * f(t))


def grf_feature_matrix(g: GraphData, m: int, coupling, f: ModulationFn,
                       p_halt: float, rng) -> np.ndarray:
    """Feature vectors for every node at once (rows = nodes).

    Vectorised equivalent of calling :func:`grf_features` per node: lengths
    are drawn per coupling up front (geometric marginals throughout) and
    all N x m walks are stepped in parallel.
    """
    rng = ensure_rng(rng)
    tag = coupling if isinstance(coupling, str) else "sigma"
    if tag != "iid" and m % 2:
        raise ValueError("paired couplings need an even number of walkers")
    n = g.n_nodes
    n_walks = n * m
    starts = np.repeat(np.arange(n), m)
    if tag == "iid":
        lengths = batch_walk_lengths(n_walks, p_halt, rng)
    elif tag == "antithetic_termination":
        lengths = batch_walk_lengths(n_walks, p_halt, rng, antithetic=True)
    elif tag == "sigma":
        n_pairs = n_walks // 2
        order = coupling.order
        q = rng.integers(order, size=n_pairs)
        u = np.empty(n_walks)
        u[0::2] = (q + rng.random(n_pairs)) / order
        u[1::2] = (coupling.perm[q] + rng.random(n_pairs)) / order
        lengths = np.asarray(geometric_inv_cdf(u, GeometricParams(p_halt)))
    else:
        raise ValueError(f"unknown GRF coupling {coupling!r}")
    out = np.zeros((n, n))
    _projected_batch(g, starts, lengths, f, p_halt, rng, starts, out)
    return out / m


@dataclass
class QuantileProjection:
    """Estimated mean projections per (node, length-quantile).

    ``psi_hat[i, q]`` estimates the projection of a walk from node i whose
    length is drawn from the qth of ``order`` equal-probability quantiles
    of the geometric length distribution, averaged over directions.
    """

    psi_hat: np.ndarray  # (n_nodes, order, n_nodes)
    p_halt: float

    @property
    def order(self) -> int:
        return self.psi_hat.shape[1]


def estimate_quantile_projections(g: GraphData, order: int, p_halt: float,
                                  f: ModulationFn, walks_per_quantile: int,
                                  rng) -> QuantileProjection:
    """Monte Carlo estimate of per-quantile mean projections for all nodes.

    For each quantile a uniform variate is drawn inside its tile, converted
    to a length, and a fixed-length walk is projected; averaging over
    ``walks_per_quantile`` draws estimates the tile-conditional mean.
    """
    if walks_per_quantile < 1:
        raise ValueError("walks_per_quantile must be >= 1")
    rng = ensure_rng(rng)
    n = g.n_nodes
    gp = GeometricParams(p_halt)
    psi_hat = np.zeros((n, order, n))
    starts = np.repeat(np.arange(n), walks_per_quantile)
    rows = starts
    for q in range(order):
        u = (q + rng.random(n * walks_per_quantile)) / order
        lengths = np.asarray(geometric_inv_cdf(u, gp))
        out = np.zeros((n, n))
        _projected_batch(g, starts, lengths, f, p_halt, rng, rows, out)
        psi_hat[:, q, :] = out / walks_per_quantile
    return QuantileProjection(psi_hat, p_halt)


def write_grf_features_csv(path, features: np.ndarray):
    """Coordinate-list export (node, coord, value) of nonzero entries."""
    features = np.atleast_2d(np.asarray(features, dtype=float))
    with open(path, "w") as fh:
        fh.write("node,coord,value\n")
        for node, coord in zip(*np.nonzero(features)):
            fh.write(f"{node},{coord},{float(features[node, coord])!r}\n")

"""Exact and walk-sampled PageRank with coupled walk lengths.

The teleporting chain is never simulated directly: terminating walks
already account for the teleport term analytically, so each walk's
endpoint is one exact draw and every sample's node counts sum to the walk
total exactly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError
from .graph import (
    GraphData,
    SigmaCoupling,
    batch_walk_endpoints,
    batch_walk_lengths,
)
from .matching import hungarian
from .mathcore import GeometricParams, ensure_rng, geometric_inv_cdf


@dataclass
class PageRankVector:
    """Stationary distribution over nodes; entries sum to one."""

    rho: np.ndarray

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=float)
        if abs(float(self.rho.sum()) - 1.0) > 1e-12:
            raise ValueError("PageRank entries must sum to 1 within 1e-12")


@dataclass
class PageRankEstimate:
    """Monte Carlo PageRank with its exact counting representation.

    ``counts[i]`` walks terminated at node i out of ``total``; the integer
    identity counts.sum() == total makes each sample sum to one exactly,
    while the float view ``rho`` rounds at machine precision.
    """

    counts: np.ndarray
    total: int
    coupling: str

    @property
    def rho(self) -> np.ndarray:
        return self.counts / self.total


def transition_matrix(g: GraphData) -> np.ndarray:
    """Row-stochastic uniform-neighbour transition matrix."""
    P = np.zeros((g.n_nodes, g.n_nodes))
    for u in range(g.n_nodes):
        nbrs = g.neighbors(u)
        P[u, nbrs] = 1.0 / len(nbrs)
    return P


def exact_pagerank(g: GraphData, p_halt: float, tol: float = 1e-12,
                   max_iters: int = 100_000) -> PageRankVector:
    """Stationary distribution of (1-p) P + (p/N) E by power iteration."""
    if not 0 < p_halt < 1:
        raise ValueError("p_halt must lie in (0, 1)")
    n = g.n_nodes
    P = transition_matrix(g)
    rho = np.full(n, 1.0 / n)
    for _ in range(max_iters):
        nxt = (1.0 - p_halt) * (P.T @ rho) + p_halt / n
        nxt /= nxt.sum()
        if np.abs(nxt - rho).sum() < tol:
            return PageRankVector(nxt)
        rho = nxt
    raise ConvergenceError(f"power iteration did not reach {tol} in {max_iters} steps")


def mc_pagerank(g: GraphData, p_halt: float, m: int, coupling, rng) -> PageRankEstimate:
    """Estimate PageRank from m terminating walks per node.

    Unbiased for every supported length coupling ("iid",
    "antithetic_termination", or a :class:`SigmaCoupling` imposing coupled
    lengths on walker pairs within each start node).
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
        raise ValueError(f"unknown PageRank coupling {coupling!r}")
    ends = batch_walk_endpoints(g, starts, lengths, rng)
    counts = np.bincount(ends, minlength=n)
    return PageRankEstimate(counts, n_walks, tag)


def solve_pagerank_sigma(g: GraphData, p_halt: float, order: int,
                         samples_per_quantile: int, rng) -> SigmaCoupling:
    """Learn a length coupling that minimises PageRank estimator variance.

    Estimates, per start node and length quantile, the distribution of walk
    endpoints; the matching cost couples quantiles whose endpoint profiles
    overlap least, averaged over target nodes, and is solved exactly.
    """
    if order < 2:
        raise ValueError("permutation order must be >= 2")
    rng = ensure_rng(rng)
    n = g.n_nodes
    gp = GeometricParams(p_halt)
    profile = np.zeros((n, order, n))  # (start, quantile, end)
    starts = np.repeat(np.arange(n), samples_per_quantile)
    for q in range(order):
        u = (q + rng.random(starts.size)) / order
        lengths = np.asarray(geometric_inv_cdf(u, gp))
        ends = batch_walk_endpoints(g, starts, lengths, rng)
        np.add.at(profile, (starts, q, ends), 1.0)
    profile /= samples_per_quantile
    cost = np.einsum("jqi,jri->qr", profile, profile) / n
    perm, _ = hungarian(cost)
    return SigmaCoupling(perm, p_halt)


def write_pagerank_csv(path, rows):
    """Rows of (p_halt, coupling, m, l2_error, seed) as CSV."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["p_halt", "coupling", "m", "l2_error", "seed"])
        for row in rows:
            writer.writerow(
                [row["p_halt"], row["coupling"], row["m"], repr(float(row["l2_error"])), row["seed"]]
            )

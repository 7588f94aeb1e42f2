"""Assignment solvers and walk-length coupling optimisation.

The length coupling of paired walkers is a permutation matching between
quantiles of the geometric length distribution.  The diagonal-restricted
objective is a linear assignment problem solved exactly in O(n^3); the full
quadratic objective is attacked with random Gaussian projections, made
node-count independent by Johnson-Lindenstrauss reduction.
"""

from __future__ import annotations

import numpy as np

from .graph import GraphData, SigmaCoupling
from .grf import ModulationFn, QuantileProjection, estimate_quantile_projections
from .mathcore import ensure_rng


def hungarian(cost: np.ndarray) -> tuple[np.ndarray, float]:
    """Minimum-cost perfect matching of a square cost matrix.

    Potential-based shortest augmenting paths, O(n^3); handles negative
    entries.  Returns (perm, total) with perm[row] = assigned column.  Ties
    are broken by scan order (smallest row, then column), so the result is
    deterministic given the input.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost matrix must be square, got {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix must be finite")
    n = cost.shape[0]
    INF = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match_row = np.zeros(n + 1, dtype=np.int64)  # column j -> row (1-indexed)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        match_row[0] = i
        j0 = 0
        minv = np.full(n + 1, INF)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match_row[j0]
            delta = INF
            j1 = 0
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[match_row[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match_row[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match_row[j0] = match_row[j1]
            j0 = j1
    perm = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        perm[match_row[j] - 1] = j - 1
    total = float(cost[np.arange(n), perm].sum())
    return perm, total


def build_sigma_cost_matrix(psi_i: np.ndarray, psi_j: np.ndarray) -> np.ndarray:
    """Diagonal-restricted matching costs for one node pair.

    Entry (q, q') is the squared dot product of summed quantile projections,
    [(psi_i(q) + psi_i(q'))^T (psi_j(q) + psi_j(q'))]^2; symmetric and
    nonnegative.
    """
    psi_i = np.asarray(psi_i, dtype=float)
    psi_j = np.asarray(psi_j, dtype=float)
    if psi_i.shape != psi_j.shape:
        raise ValueError(f"shape mismatch: {psi_i.shape} vs {psi_j.shape}")
    n = psi_i.shape[0]
    sums_i = psi_i[:, None, :] + psi_i[None, :, :]
    sums_j = psi_j[:, None, :] + psi_j[None, :, :]
    dots = np.einsum("abk,abk->ab", sums_i, sums_j)
    return dots**2


def averaged_sigma_cost_matrix(qp: QuantileProjection, max_pairs: int = 2000,
                               rng=None) -> np.ndarray:
    """Cost matrix averaged over node pairs.

    Averages over every ordered node pair when the pair count is at most
    ``max_pairs``; above that, a seeded uniform subsample of pairs is used.
    """
    psi = qp.psi_hat
    n_nodes, order = psi.shape[0], psi.shape[1]
    cost = np.zeros((order, order))
    if n_nodes**2 <= max_pairs:
        for q1 in range(order):
            for q2 in range(q1, order):
                s = psi[:, q1, :] + psi[:, q2, :]
                b = s.T @ s
                val = float(np.sum(b * b)) / n_nodes**2
                cost[q1, q2] = cost[q2, q1] = val
        return cost
    rng = ensure_rng(rng if rng is not None else 0)
    rows = rng.integers(n_nodes, size=max_pairs)
    cols = rng.integers(n_nodes, size=max_pairs)
    for q1 in range(order):
        for q2 in range(q1, order):
            s = psi[:, q1, :] + psi[:, q2, :]
            dots = np.einsum("pk,pk->p", s[rows], s[cols])
            val = float(np.mean(dots**2))
            cost[q1, q2] = cost[q2, q1] = val
    return cost


def solve_sigma_coupling(g: GraphData, p_halt: float, order: int,
                         f: ModulationFn, walks_per_quantile: int, rng,
                         max_pairs: int = 2000) -> SigmaCoupling:
    """Learn the length-coupling permutation on a training graph.

    Estimates per-quantile projections by simulation, averages the
    diagonal-restricted cost over node pairs, and solves the matching
    exactly.
    """
    if order < 2:
        raise ValueError("permutation order must be >= 2")
    rng = ensure_rng(rng)
    qp = estimate_quantile_projections(g, order, p_halt, f, walks_per_quantile, rng)
    cost = averaged_sigma_cost_matrix(qp, max_pairs=max_pairs, rng=rng)
    perm, _ = hungarian(cost)
    return SigmaCoupling(perm, p_halt)


# ---------------------------------------------------------------------------
# Quadratic objective and random-projection solver


def outer_product_vector(v: np.ndarray) -> np.ndarray:
    """Flattened self outer product vec(v x v), symmetric under index swap."""
    v = np.asarray(v, dtype=float)
    return np.outer(v, v).ravel()


def jlt_reduce(vectors: np.ndarray, r: int, rng) -> np.ndarray:
    """Gaussian random projection to r dimensions, (1/sqrt(r)) G u.

    Unbiased for dot products; with r = ceil(8 log n / eps^2) the squared
    norms of sums and differences are preserved within eps with high
    probability.
    """
    if r < 1:
        raise ValueError("r must be >= 1")
    vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
    rng = ensure_rng(rng)
    G = rng.standard_normal((r, vectors.shape[1]))
    return vectors @ G.T / np.sqrt(r)


def jlt_dimension(n: int, eps: float, c: float = 8.0) -> int:
    """Projection count r = ceil(c log(n) / eps^2)."""
    return int(np.ceil(c * np.log(n) / eps**2))


def quadratic_objective(vectors: np.ndarray, perm: np.ndarray) -> float:
    """Full self-pair matching objective sum_{q1,q2} (s_q1 . s_q2)^2.

    s_q = v_q + v_perm(q); equals the squared L2 norm of the summed outer
    products of the matched pairs.
    """
    vectors = np.asarray(vectors, dtype=float)
    s = vectors + vectors[np.asarray(perm, dtype=np.int64)]
    gram = s @ s.T
    return float(np.sum(gram * gram))


def quadratic_matching_random_projection(vectors: np.ndarray, k_iters: int,
                                         rng) -> np.ndarray:
    """Best-of-k random-projection solver for the full quadratic objective.

    Iteration 0 seeds the candidate set with the diagonal-restricted exact
    matching, so the returned permutation can never do worse than it under
    the true objective.  Each further iteration projects the outer-product
    vectors onto a random Gaussian direction, solves the induced linear
    matching and records the candidate; the candidate with the smallest
    true objective wins.
    """
    if k_iters < 1:
        raise ValueError("k_iters must be >= 1")
    vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
    rng = ensure_rng(rng)
    n, dim = vectors.shape
    if n == 1:
        return np.zeros(1, dtype=np.int64)

    diag_cost = build_sigma_cost_matrix(vectors, vectors)
    best_perm, _ = hungarian(diag_cost)
    best_obj = quadratic_objective(vectors, best_perm)
    for _ in range(k_iters):
        gm = rng.standard_normal((dim, dim))
        t = vectors @ gm @ vectors.T
        weights = (
            t.diagonal()[:, None]
            + t
            + t.T
            + t.diagonal()[None, :]
        )
        perm, _ = hungarian(weights)
        obj = quadratic_objective(vectors, perm)
        if obj < best_obj:
            best_obj = obj
            best_perm = perm
    return best_perm

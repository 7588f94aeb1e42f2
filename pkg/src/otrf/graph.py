"""Graph structure, node kernels, and random-walk simulation.

Kernels are matrix functions of the (normalised) Laplacian; their Taylor
coefficients in the normalised adjacency drive the walk-based estimators.
Walk lengths count edges and start at zero, matching the geometric
distribution in :mod:`otrf.mathcore`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import comb

from .errors import NumericalError
from .mathcore import GeometricParams, ensure_rng, geometric_inv_cdf

KERNEL_FAMILIES = (
    "d_regularized_laplacian",
    "p_step_random_walk",
    "diffusion",
    "inverse_cosine",
)


class GraphData:
    """Undirected weighted graph with dense and walk-oriented views.

    Holds the adjacency ``W``, weighted degrees, the normalised adjacency
    D^-1/2 W D^-1/2, and CSR-style neighbour arrays for fast walking.
    Isolated nodes are rejected.
    """

    def __init__(self, weights: np.ndarray):
        W = np.asarray(weights, dtype=float)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise ValueError("adjacency must be square")
        if not np.allclose(W, W.T):
            raise ValueError("adjacency must be symmetric")
        if np.any(W < 0) or not np.all(np.isfinite(W)):
            raise ValueError("edge weights must be finite and nonnegative")
        degrees = W.sum(axis=1)
        if np.any(degrees <= 0):
            raise ValueError("graph has isolated nodes")
        self.weights = W
        self.n_nodes = W.shape[0]
        self.degrees = degrees
        inv_sqrt = 1.0 / np.sqrt(degrees)
        self.adjacency_norm = W * inv_sqrt[:, None] * inv_sqrt[None, :]
        # CSR neighbour structure for walking
        indptr = [0]
        indices = []
        for u in range(self.n_nodes):
            nbrs = np.flatnonzero(W[u] > 0)
            indices.extend(nbrs.tolist())
            indptr.append(len(indices))
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.neighbor_counts = np.diff(self.indptr)
        self.anorm_data = self.adjacency_norm[
            np.repeat(np.arange(self.n_nodes), self.neighbor_counts), self.indices
        ]

    def neighbors(self, u: int) -> np.ndarray:
        return self.indices[self.indptr[u] : self.indptr[u + 1]]

    @classmethod
    def from_edges(cls, n_nodes: int, edges) -> "GraphData":
        W = np.zeros((n_nodes, n_nodes))
        for edge in edges:
            u, v = int(edge[0]), int(edge[1])
            w = float(edge[2]) if len(edge) > 2 else 1.0
            W[u, v] = w
            W[v, u] = w
        return cls(W)

    @classmethod
    def from_file(cls, path) -> "GraphData":
        """Whitespace-separated edge list ``u v [weight]``, 0-indexed."""
        edges = []
        max_node = -1
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                parts = line.split()
                if not parts:
                    continue
                if len(parts) not in (2, 3):
                    raise ValueError(f"{path}:{lineno}: expected 'u v [weight]'")
                u, v = int(parts[0]), int(parts[1])
                w = float(parts[2]) if len(parts) == 3 else 1.0
                edges.append((u, v, w))
                max_node = max(max_node, u, v)
        return cls.from_edges(max_node + 1, edges)

    def to_file(self, path):
        with open(path, "w") as fh:
            for u in range(self.n_nodes):
                for v in range(u, self.n_nodes):
                    if self.weights[u, v] > 0:
                        if self.weights[u, v] == 1.0:
                            fh.write(f"{u} {v}\n")
                        else:
                            fh.write(f"{u} {v} {float(self.weights[u, v])!r}\n")


def laplacian(g: GraphData) -> np.ndarray:
    """Unnormalised Laplacian D - W; rows sum to zero."""
    return np.diag(g.degrees) - g.weights


def normalized_laplacian(g: GraphData) -> np.ndarray:
    """D^-1/2 (D - W) D^-1/2 = I - normalised adjacency; spectrum in [0, 2]."""
    return np.eye(g.n_nodes) - g.adjacency_norm


@dataclass(frozen=True)
class GraphKernelSpec:
    """A graph node kernel as a matrix function of the Laplacian.

    Families: ``d_regularized_laplacian`` (I + sigma^2 L)^-degree,
    ``p_step_random_walk`` (alpha I - L)^p with alpha >= 2, ``diffusion``
    exp(-sigma^2 L / 2), and ``inverse_cosine`` cos(L pi/4).  ``normalized``
    selects the normalised Laplacian (required for walk expansions).
    """

    family: str
    sigma: float = 1.0
    degree: int = 1
    alpha: float = 2.0
    p: int = 1
    normalized: bool = True

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.family == "p_step_random_walk" and self.alpha < 2:
            raise ValueError("p_step_random_walk requires alpha >= 2")
        if self.family == "d_regularized_laplacian" and self.degree < 1:
            raise ValueError("regularized Laplacian requires degree >= 1")


def exact_graph_kernel(g: GraphData, spec: GraphKernelSpec) -> np.ndarray:
    """Kernel matrix via symmetric eigendecomposition of the Laplacian."""
    lap = normalized_laplacian(g) if spec.normalized else laplacian(g)
    evals, evecs = np.linalg.eigh(lap)
    if spec.family == "d_regularized_laplacian":
        fn = (1.0 + spec.sigma**2 * evals) ** (-spec.degree)
    elif spec.family == "p_step_random_walk":
        fn = (spec.alpha - evals) ** spec.p
    elif spec.family == "diffusion":
        fn = np.exp(-spec.sigma**2 * evals / 2.0)
    else:  # inverse_cosine
        fn = np.cos(evals * np.pi / 4.0)
    K = (evecs * fn) @ evecs.T
    return 0.5 * (K + K.T)


def taylor_coefficients(spec: GraphKernelSpec, max_order: int) -> np.ndarray:
    """Coefficients a_k with K = sum_k a_k (normalised adjacency)^k.

    Regularised-Laplacian and diffusion families have nonnegative
    coefficients; the inverse-cosine expansion alternates in sign.
    """
    if not spec.normalized:
        raise ValueError("walk expansions require the normalised Laplacian")
    k = np.arange(max_order + 1)
    if spec.family == "d_regularized_laplacian":
        rho = spec.sigma**2 / (1.0 + spec.sigma**2)
        lead = (1.0 + spec.sigma**2) ** (-spec.degree)
        return lead * comb(k + spec.degree - 1, spec.degree - 1) * rho**k
    if spec.family == "diffusion":
        gamma_sq = spec.sigma**2 / 2.0
        out = np.empty(max_order + 1)
        out[0] = np.exp(-gamma_sq)
        for i in range(1, max_order + 1):
            out[i] = out[i - 1] * gamma_sq / i
        return out
    if spec.family == "p_step_random_walk":
        out = np.zeros(max_order + 1)
        top = min(spec.p, max_order)
        kk = np.arange(top + 1)
        out[: top + 1] = comb(spec.p, kk) * (spec.alpha - 1.0) ** (spec.p - kk)
        return out
    # inverse cosine: cos((I - A) pi/4) = cos(pi/4) cos(A pi/4) + sin(pi/4) sin(A pi/4)
    c = np.pi / 4.0
    out = np.zeros(max_order + 1)
    fact = 1.0
    for i in range(max_order + 1):
        if i > 0:
            fact *= i
        sign = (-1.0) ** (i // 2)
        out[i] = (np.sqrt(2.0) / 2.0) * sign * c**i / fact
    return out


# ---------------------------------------------------------------------------
# Random walks


@dataclass
class WalkRecord:
    """A node sequence with its prefix edge-weight products.

    ``prefix_weights[t]`` is the product of normalised-adjacency entries
    along the first t edges (so entry 0 is 1.0).
    """

    start: int
    nodes: list[int]
    prefix_weights: np.ndarray = field(default_factory=lambda: np.ones(1))

    @property
    def length(self) -> int:
        return len(self.nodes) - 1


def _walk_from(g: GraphData, start: int, n_steps: int, rng) -> WalkRecord:
    nodes = [start]
    weights = np.ones(n_steps + 1)
    cur = start
    for t in range(n_steps):
        nbrs = g.neighbors(cur)
        nxt = int(nbrs[rng.integers(len(nbrs))])
        weights[t + 1] = weights[t] * g.adjacency_norm[cur, nxt]
        nodes.append(nxt)
        cur = nxt
    return WalkRecord(start, nodes, weights)


def simulate_walk(g: GraphData, start: int, rng, *, p_halt: float | None = None,
                  length: int | None = None) -> WalkRecord:
    """Simple random walk with uniform neighbour choice.

    Exactly one of ``p_halt`` (terminate with that probability before every
    step, so lengths are geometric) or ``length`` (take exactly that many
    steps) must be given.
    """
    if (p_halt is None) == (length is None):
        raise ValueError("give exactly one of p_halt or length")
    if not 0 <= start < g.n_nodes:
        raise ValueError(f"start node {start} out of range")
    rng = ensure_rng(rng)
    if length is not None:
        return _walk_from(g, start, length, rng)
    GeometricParams(p_halt)  # validates the range
    n_steps = 0
    while rng.random() >= p_halt:
        n_steps += 1
    return _walk_from(g, start, n_steps, rng)


@dataclass
class SigmaCoupling:
    """A permutation matching between walk-length quantiles.

    ``perm`` is stored 0-indexed; ``perm[q]`` is the quantile paired with
    quantile q.  Serialised 1-indexed alongside n, p_halt and seed so
    couplings learned on one graph can be reused on others.
    """

    perm: np.ndarray
    p_halt: float
    seed: int | None = None

    def __post_init__(self):
        self.perm = np.asarray(self.perm, dtype=np.int64)
        if sorted(self.perm.tolist()) != list(range(self.perm.size)):
            raise ValueError("perm must be a permutation of 0..n-1")

    @property
    def order(self) -> int:
        return self.perm.size

    def to_json(self) -> str:
        return json.dumps(
            {
                "sigma": [int(v) + 1 for v in self.perm],
                "n": self.order,
                "p_halt": self.p_halt,
                "seed": self.seed,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "SigmaCoupling":
        obj = json.loads(text)
        perm = np.asarray(obj["sigma"], dtype=np.int64) - 1
        return cls(perm, obj["p_halt"], obj.get("seed"))


def sample_coupled_lengths(c: SigmaCoupling, rng) -> tuple[int, int]:
    """One coupled length pair: a uniform tile and its permuted partner.

    Tile q is drawn uniformly from 1..n; u1 falls in tile q and u2 in tile
    sigma(q); both are pushed through the geometric quantile function, so
    each length is marginally geometric.
    """
    rng = ensure_rng(rng)
    n = c.order
    q = int(rng.integers(n))
    u1 = (q + rng.random()) / n
    u2 = (int(c.perm[q]) + rng.random()) / n
    gp = GeometricParams(c.p_halt)
    return geometric_inv_cdf(u1, gp), geometric_inv_cdf(u2, gp)


def antithetic_termination_pair(g: GraphData, start1: int, start2: int,
                                p_halt: float, rng) -> tuple[WalkRecord, WalkRecord]:
    """Two walks whose termination variables are offset by one half.

    At every timestep t1 ~ U[0,1) drives the first walker and
    t2 = (t1 + 1/2) mod 1 the second; a walker halts when its variable
    falls below p_halt, so marginal lengths stay geometric but (for
    p_halt < 1/2) the two walks never halt at the same step.
    """
    if not 0 < p_halt < 1:
        raise ValueError("p_halt must lie in (0, 1)")
    rng = ensure_rng(rng)
    alive = [True, True]
    lengths = [0, 0]
    while any(alive):
        t1 = rng.random()
        t2 = (t1 + 0.5) % 1.0
        for i, t in enumerate((t1, t2)):
            if alive[i]:
                if t < p_halt:
                    alive[i] = False
                else:
                    lengths[i] += 1
    return (
        _walk_from(g, start1, lengths[0], rng),
        _walk_from(g, start2, lengths[1], rng),
    )


# ---------------------------------------------------------------------------
# Batched walking (vectorised across many simultaneous walkers)


def batch_walk_lengths(n_walks: int, p_halt: float, rng,
                       antithetic: bool = False) -> np.ndarray:
    """Geometric lengths for a batch; antithetic couples consecutive pairs."""
    rng = ensure_rng(rng)
    if not antithetic:
        u = rng.random(n_walks)
        return np.asarray(geometric_inv_cdf(u, GeometricParams(p_halt)))
    if n_walks % 2:
        raise ValueError("antithetic batches need an even walk count")
    lengths = np.zeros(n_walks, dtype=np.int64)
    alive = np.ones(n_walks, dtype=bool)
    while np.any(alive):
        t1 = rng.random(n_walks // 2)
        t = np.empty(n_walks)
        t[0::2] = t1
        t[1::2] = (t1 + 0.5) % 1.0
        halts = alive & (t < p_halt)
        alive &= ~halts
        lengths[alive] += 1
    return lengths


def batch_walk_endpoints(g: GraphData, starts: np.ndarray, lengths: np.ndarray,
                         rng) -> np.ndarray:
    """Terminal node of fixed-length uniform walks, stepped in parallel."""
    rng = ensure_rng(rng)
    cur = np.asarray(starts, dtype=np.int64).copy()
    lengths = np.asarray(lengths, dtype=np.int64)
    remaining = lengths.copy()
    active = remaining > 0
    while np.any(active):
        idx = np.flatnonzero(active)
        nodes = cur[idx]
        deg = g.neighbor_counts[nodes]
        pick = g.indptr[nodes] + (rng.random(idx.size) * deg).astype(np.int64)
        cur[idx] = g.indices[pick]
        remaining[idx] -= 1
        active = remaining > 0
    return cur


# ---------------------------------------------------------------------------
# Synthetic graphs and exports


def erdos_renyi(n_nodes: int, p_edge: float, rng) -> GraphData:
    """Connected Erdos-Renyi G(n, p): resampled until connected."""
    rng = ensure_rng(rng)
    for _ in range(1000):
        upper = rng.random((n_nodes, n_nodes)) < p_edge
        W = np.triu(upper, k=1).astype(float)
        W = W + W.T
        if not np.all(W.sum(axis=1) > 0):
            continue
        if _is_connected(W):
            return GraphData(W)
    raise NumericalError(
        f"failed to sample a connected G({n_nodes}, {p_edge}) in 1000 attempts"
    )


def _is_connected(W: np.ndarray) -> bool:
    n = W.shape[0]
    seen = np.zeros(n, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        u = stack.pop()
        for v in np.flatnonzero(W[u] > 0):
            if not seen[v]:
                seen[v] = True
                stack.append(int(v))
    return bool(np.all(seen))


def write_kernel_csv(path, kernel: np.ndarray):
    """Dense kernel export, refused above 2000 nodes."""
    kernel = np.asarray(kernel, dtype=float)
    if kernel.shape[0] > 2000:
        raise ValueError("dense kernel export refused for more than 2000 nodes")
    np.savetxt(path, kernel, delimiter=",")

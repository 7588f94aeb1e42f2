"""Coupled random features with optimal-transport couplings.

Feature ensembles on Euclidean inputs (trigonometric and exponential maps)
and on graph nodes (random-walk features) whose joint sampling laws are
shaped to reduce kernel-estimator variance, together with the downstream
evaluators (GP posteriors, attention error, PageRank) and a benchmark CLI.
"""

from .couplings import (
    CorrelationParams,
    CouplingSpec,
    FrequencyEnsemble,
    build_ensemble,
    optimize_copula,
)
from .eucrf import GaussianKernelParams, gaussian_kernel, rff_features, rlf_features
from .graph import GraphData, GraphKernelSpec, SigmaCoupling, exact_graph_kernel
from .grf import ModulationFn, grf_features, modulation_from_coefficients
from .matching import hungarian, solve_sigma_coupling
from .pagerank import exact_pagerank, mc_pagerank

__all__ = [
    "CorrelationParams",
    "CouplingSpec",
    "FrequencyEnsemble",
    "GaussianKernelParams",
    "GraphData",
    "GraphKernelSpec",
    "ModulationFn",
    "SigmaCoupling",
    "build_ensemble",
    "exact_graph_kernel",
    "exact_pagerank",
    "gaussian_kernel",
    "grf_features",
    "hungarian",
    "mc_pagerank",
    "modulation_from_coefficients",
    "optimize_copula",
    "rff_features",
    "rlf_features",
    "solve_sigma_coupling",
]

__version__ = "0.1.0"

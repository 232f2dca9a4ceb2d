"""Bayesian hierarchical smoothing of functional data with an inverse-Wishart process prior."""

from .dataset import Curve, DatasetError, FunctionalDataset, PooledGrid, load_dataset, pool_grids, save_dataset
from .empirical_bayes import Hyperparams, default_hyperparams, hyperparams_from_config
from .gibbs import Chain, SamplerConfig, SamplerError, SamplerState, run_chain
from .metrics import ReplicateReport, aggregate_replicates, predict_validation, rimse_curve, rimse_surface
from .posterior import PosteriorSummary, coverage_probability, gelman_rubin, summarize
from .kernels import MaternParams, ScaleKernelSpec, build_scale_kernel, matern_cor, matern_matrix, nearest_pd
from .simulation import (SimSpec, bls_oracle, gen_nonstationary, gen_stationary, simulate, sparsify,
                         true_moments)

__version__ = "0.1.0"

__all__ = [
    "Chain",
    "Curve",
    "DatasetError",
    "FunctionalDataset",
    "Hyperparams",
    "MaternParams",
    "PooledGrid",
    "PosteriorSummary",
    "ReplicateReport",
    "SamplerConfig",
    "SamplerError",
    "SamplerState",
    "ScaleKernelSpec",
    "SimSpec",
    "aggregate_replicates",
    "bls_oracle",
    "build_scale_kernel",
    "coverage_probability",
    "default_hyperparams",
    "gen_nonstationary",
    "gen_stationary",
    "gelman_rubin",
    "hyperparams_from_config",
    "load_dataset",
    "matern_cor",
    "matern_matrix",
    "nearest_pd",
    "pool_grids",
    "predict_validation",
    "rimse_curve",
    "rimse_surface",
    "run_chain",
    "save_dataset",
    "simulate",
    "sparsify",
    "summarize",
    "true_moments",
]

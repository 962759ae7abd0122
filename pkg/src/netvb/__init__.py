"""Distributed variational Bayes for Gaussian mixtures on sensor networks.

The package simulates synchronized rounds of variational inference over a
communication graph and compares five schedulers — a centralized reference,
no cooperation, one-step neighborhood averaging, stochastic natural-gradient
diffusion, and consensus ADMM — against the exact conjugate posterior.

Module map:

* :mod:`netvb.expfam` — natural-parameter representation of the
  Dirichlet/normal-Wishart posterior: domain checks, projection, KL.
* :mod:`netvb.gmm` — the mixture model: VBE/VBM steps and local optima.
* :mod:`netvb.network` — geometric graphs and combination weights.
* :mod:`netvb.algorithms` — the five update schedulers over shared rounds.
* :mod:`netvb.harness` — synthetic data, ground truth, metrics, configs, CSV.
* :mod:`netvb.cli` — the ``netvb`` command.
* :mod:`netvb.kernels` — compiled/numpy backend for the hot inner loop.

The most common entry points are re-exported here.
"""

from .algorithms import ALGORITHM_KINDS, AlgoConfig, RunTrace, run
from .expfam import (
    DirichletNat,
    DomainError,
    GlobalNaturalParams,
    GmmHyperParams,
    NormalWishartNat,
    flatten,
    hyper_to_natural,
    kl_dirichlet,
    kl_global,
    kl_normal_wishart,
    natural_to_hyper,
    unflatten,
)
from .gmm import GmmModelConfig, make_model, vbe_step, local_vbm_optimum
from .harness import (
    ExperimentConfig,
    bundled_config_path,
    clustering_accuracy,
    generate_synthetic,
    ground_truth_posterior,
    initial_states,
    load_experiment_config,
    make_synthetic_spec,
    mean_kl_cost,
    run_experiment,
)
from .network import (
    Network,
    generate_geometric_graph,
    metropolis_weights,
    nearest_neighbor_weights,
)

__version__ = "0.1.0"

__all__ = [
    "ALGORITHM_KINDS",
    "AlgoConfig",
    "DirichletNat",
    "DomainError",
    "ExperimentConfig",
    "GlobalNaturalParams",
    "GmmHyperParams",
    "GmmModelConfig",
    "Network",
    "NormalWishartNat",
    "RunTrace",
    "__version__",
    "bundled_config_path",
    "clustering_accuracy",
    "flatten",
    "generate_geometric_graph",
    "generate_synthetic",
    "ground_truth_posterior",
    "hyper_to_natural",
    "initial_states",
    "kl_dirichlet",
    "kl_global",
    "kl_normal_wishart",
    "load_experiment_config",
    "local_vbm_optimum",
    "make_model",
    "make_synthetic_spec",
    "mean_kl_cost",
    "metropolis_weights",
    "natural_to_hyper",
    "nearest_neighbor_weights",
    "run",
    "run_experiment",
    "unflatten",
    "vbe_step",
]

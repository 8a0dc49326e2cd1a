"""Ensemble sparse models: weak-dictionary ensembles for recovery and clustering.

The package approximates data as a weighted combination of sparse
approximations from several cheaply built ("weak") dictionaries, and applies
those ensembles to compressive image recovery, single-image superresolution,
and sparse-graph spectral clustering. The numerical core (the l1 coding
iteration) runs on a compiled extension when available and on a NumPy
fallback otherwise; see :mod:`ensparse.kernels`.
"""

from .errors import ConfigError, ContractViolation, ConvergenceError, DataError
from .kernels import backend as kernel_backend
from .sparse_coding import (
    CodingProblem,
    Dictionary,
    SparseCode,
    code_batch,
    code_one_sparse,
    kkt_residual,
    solve_lasso,
)
from .dictionaries import (
    ClusterState,
    TrainingSet,
    dictionary_from_clusters,
    dictionary_update,
    draw_boostex_dictionary,
    draw_random_example_dictionary,
    learn_alt_opt,
    weighted_kmeans_parallel_init,
)
from .ensemble import (
    ApproximationStack,
    EnsembleModel,
    ExMLDModel,
    WeightVector,
    apply_ensemble,
    apply_ex_mld,
    optimal_alpha,
    residual,
    solve_weights,
    train_boosted,
    train_ex_mld,
    train_randexav,
)
from .operators import BlurDownsample, RandomProjection
from .restoration import compressive_recover, psnr
from .sisr import superresolve, train_paired_ensemble
from .clustering import (
    ClusteringResult,
    SimilarityGraph,
    build_dictionary_code_graph,
    build_ensemble_graph,
    build_l1_graph,
    score,
    spectral_cluster,
)
from .serialization import load_model, save_model

__version__ = "0.1.0"

__all__ = [
    "ApproximationStack",
    "BlurDownsample",
    "ClusterState",
    "ClusteringResult",
    "CodingProblem",
    "ConfigError",
    "ContractViolation",
    "ConvergenceError",
    "DataError",
    "Dictionary",
    "EnsembleModel",
    "ExMLDModel",
    "RandomProjection",
    "SimilarityGraph",
    "SparseCode",
    "TrainingSet",
    "WeightVector",
    "apply_ensemble",
    "apply_ex_mld",
    "build_dictionary_code_graph",
    "build_ensemble_graph",
    "build_l1_graph",
    "code_batch",
    "code_one_sparse",
    "compressive_recover",
    "dictionary_from_clusters",
    "dictionary_update",
    "draw_boostex_dictionary",
    "draw_random_example_dictionary",
    "kernel_backend",
    "kkt_residual",
    "learn_alt_opt",
    "load_model",
    "optimal_alpha",
    "psnr",
    "residual",
    "save_model",
    "score",
    "solve_lasso",
    "solve_weights",
    "spectral_cluster",
    "superresolve",
    "train_boosted",
    "train_ex_mld",
    "train_paired_ensemble",
    "train_randexav",
    "weighted_kmeans_parallel_init",
    "__version__",
]

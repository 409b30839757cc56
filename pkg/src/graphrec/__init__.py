"""Top-N recommendation by graph-regularized matrix reconstruction.

Build user and item similarity graphs from an interaction matrix, solve the
Sylvester equation for a smoothed reconstruction, and rank unseen items.
"""

__version__ = "0.1.0"

from .data import FoldSplit, InteractionMatrix, RatingScale, binarize, load_interactions, split_loo_folds
from .errors import DataError, GraphRecError, NumericalError, SpecError
from .evaluation import EvalReport, ExperimentConfig, ReconStats, arhr, hit_rate, reconstruction_stats, run_experiment
from .graph import (
    Laplacian,
    SimilarityGraph,
    cosine_similarity,
    jaccard_similarity,
    knn_sparsify,
    laplacian,
    regularizer_value,
    similarity_graph,
)
from .recommend import RankedList, itemknn_scores, top_n
from .solver import ModelConfig, ReconstructedMatrix, objective, residual, solve, solve_cg, solve_spectral

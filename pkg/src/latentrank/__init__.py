"""Recover shared latent rankings from pairwise comparisons of many users."""

from .detection import detect_novel_pairs
from .evaluation import kendall_tau_error, rmse
from .exceptions import InsufficientClustersError, NotSeparableError, RecoveryError, ValidationError
from .inference import fit_dirichlet, heldout_loglik, infer_theta, predict_comparison, predict_rating
from .model import (
    ComparisonDataset,
    DirichletPrior,
    GroundTruthModel,
    PairDistribution,
    PairIndex,
    RankingMatrix,
    comparison_pmf,
    pair_to_index,
    index_to_pair,
    sample_dataset,
)
from .moments import exact_E, moments_from_dataset
from .recovery import LearnParams, ModelEstimate, learn_from_moments, learn_rankings, theory_bounds

__version__ = "0.1.0"

__all__ = [
    "ComparisonDataset", "DirichletPrior", "GroundTruthModel", "InsufficientClustersError", "LearnParams",
    "ModelEstimate", "NotSeparableError", "PairDistribution", "PairIndex", "RankingMatrix", "RecoveryError",
    "ValidationError", "comparison_pmf", "detect_novel_pairs", "exact_E", "fit_dirichlet", "heldout_loglik",
    "index_to_pair", "infer_theta", "kendall_tau_error", "learn_from_moments", "learn_rankings",
    "moments_from_dataset", "pair_to_index", "predict_comparison", "predict_rating", "rmse", "sample_dataset",
    "theory_bounds",
]

"""Average treatment effects on latent outcomes learned by Poisson NMF."""

from .alignment import FactorPermutation, apply_permutation, consensus_align, cosine_similarity_matrix, hungarian_align
from .errors import DataValidationError, LatentATEError, NumericalError
from .estimators import (
    ALGORITHMS,
    DATA_ALGORITHMS,
    ESTIMATOR_FORM,
    AteEstimate,
    LearnedOutcomes,
    estimate,
    estimate_all_data,
    estimate_impute,
    estimate_impute_stabilize,
    estimate_observed_outcome,
    estimate_oracle,
    estimate_random_split,
    estimate_stabilize,
)
from .factorization import CountMatrix, FactorModel, FitConfig, kl_divergence, nmf_fit, nnlm_fit, normalize
from .imputation import ImputationResult, TreatmentVector, assemble_potential_matrices, impute_counterfactuals

__version__ = "0.1.0"

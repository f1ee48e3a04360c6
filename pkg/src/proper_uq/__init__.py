"""Proper scores for uncertainty quantification.

Scores, entropies and divergences for classification; Bregman Information
and bias-variance decompositions; kernel scores, MMD and their
decompositions over sample-based ensembles; calibration-error estimators
and their risk-based selection; CKA-based disentanglement of kernel
cosine similarity.
"""

from .core import (
    DataError,
    DecompositionReport,
    DiscreteDistribution,
    EnsembleGrid,
    LabeledPredictionSet,
    SampleSet,
    SimplexVector,
    load_ensemble,
    load_predictions,
    load_sample_set,
    make_rng,
    save_ensemble,
    save_predictions,
    save_sample_set,
)
from .scores import ScoreKind, divergence, empirical_risk, entropy, expected_score, score

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "DecompositionReport",
    "DiscreteDistribution",
    "EnsembleGrid",
    "LabeledPredictionSet",
    "SampleSet",
    "ScoreKind",
    "SimplexVector",
    "divergence",
    "empirical_risk",
    "entropy",
    "expected_score",
    "load_ensemble",
    "load_predictions",
    "load_sample_set",
    "make_rng",
    "save_ensemble",
    "save_predictions",
    "save_sample_set",
    "score",
]

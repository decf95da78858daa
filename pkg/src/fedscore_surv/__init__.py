"""Federated construction of integer survival risk scores.

Sites keep their records; only summary statistics (ranks, cutoffs,
coefficients, derivatives) are exchanged.
"""
from .cox import CoxFit, fit_cox, fit_stratified_cox
from .errors import FedScoreError
from .evaluation import evaluate_scores, integrated_auc, select_model
from .federation import GeneratorConfig, generate_sites, make_handles, run_experiment
from .odach import FederatedFit, run_odach
from .pipeline import PipelineConfig, build_model, run_pipeline
from .scoring import ScoringTable, derive_scores
from .survival import SurvivalDataset, kaplan_meier, logrank_test

__all__ = [
    "CoxFit", "FedScoreError", "FederatedFit", "GeneratorConfig", "PipelineConfig",
    "ScoringTable", "SurvivalDataset", "build_model", "derive_scores", "evaluate_scores",
    "fit_cox", "fit_stratified_cox", "generate_sites", "integrated_auc", "kaplan_meier",
    "logrank_test", "make_handles", "run_experiment", "run_odach", "run_pipeline",
    "select_model",
]

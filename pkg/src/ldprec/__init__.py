"""Local-DP rating perturbation with the bounded Laplace mechanism and MoG matrix factorization."""

from .audit import AuditReport, ldp_audit
from .baseline import MFModel, fit_mf_sgd, fit_svd
from .config import ExperimentConfig, load_config
from .data import SparseRatingMatrix, load_dataset, load_jester, load_libimseti, load_movielens
from .domain import JESTER, LIBIMSETI, MOVIELENS, PrivacyParams, RatingDomain
from .evaluation import ConfusionCounts, f_score, make_folds, rmse, top_k_confusion
from .mechanism import (BlpMechanism, calibrate_scale, delta_c, make_mechanism, noise_distribution,
                        normalization_constant, perturb_matrix)
from .mog import FitConfig, MoGMFModel, fit, predict
from .persistence import load_model, save_model
from .pipeline import CommLedger, compare_communication, run_experiment, run_private_pipeline

__version__ = "0.1.0"

__all__ = [
    "AuditReport", "BlpMechanism", "CommLedger", "ConfusionCounts", "ExperimentConfig", "FitConfig",
    "JESTER", "LIBIMSETI", "MFModel", "MOVIELENS", "MoGMFModel", "PrivacyParams", "RatingDomain",
    "SparseRatingMatrix", "calibrate_scale", "compare_communication", "delta_c", "f_score", "fit",
    "fit_mf_sgd", "fit_svd", "ldp_audit", "load_config", "load_dataset", "load_jester",
    "load_libimseti", "load_model", "load_movielens", "make_folds", "make_mechanism",
    "noise_distribution", "normalization_constant", "perturb_matrix", "predict", "rmse",
    "run_experiment", "run_private_pipeline", "save_model", "top_k_confusion",
]

"""Sparse additive hazards regression with folded-concave penalties."""

__version__ = "0.1.0"

from .survdata import SurvivalDataset, load_csv, train_test_split, write_csv
from .pseudoscore import PseudoscoreSystem, build_system, loss, score
from .penalties import (PenaltyKind, PenaltySpec, max_concavity, penalty_derivative,
                        penalty_value, univariate_minimize)
from .solver import (FitConfig, SolutionPath, coordinate_descent, fit_path, lambda_max,
                     restricted_convexity_check, solve_path, solve_path_sica_staged)
from .crossval import CvResult, kfold_cv, select_lambda
from .evaluation import LogRankResult, logrank_test, risk_split

__all__ = [
    "SurvivalDataset", "load_csv", "train_test_split", "write_csv",
    "PseudoscoreSystem", "build_system", "loss", "score",
    "PenaltyKind", "PenaltySpec", "max_concavity", "penalty_derivative", "penalty_value",
    "univariate_minimize",
    "FitConfig", "SolutionPath", "coordinate_descent", "fit_path", "lambda_max",
    "restricted_convexity_check", "solve_path", "solve_path_sica_staged",
    "CvResult", "kfold_cv", "select_lambda",
    "LogRankResult", "logrank_test", "risk_split",
]

"""Parallel ADMM solvers for penalized quantile regression and quantile-loss SVMs."""

from .core import (DataError, Dataset, ParameterError, PenaltyKind, PenaltySpec, SolverConfig,
                   Task, Variant, check_loss, objective, prox_check_loss, prox_weighted_l1)
from .estimators import QuantileADMMClassifier, QuantileADMMRegressor
from .nonconvex import LLAConfig, lla_solve
from .select import grid_search, hbic
from .solvers import DivergenceError, FitResult, solve

__all__ = [
    "DataError", "Dataset", "DivergenceError", "FitResult", "LLAConfig", "ParameterError",
    "PenaltyKind", "PenaltySpec", "QuantileADMMClassifier", "QuantileADMMRegressor",
    "SolverConfig", "Task", "Variant", "check_loss", "grid_search", "hbic", "lla_solve",
    "objective", "prox_check_loss", "prox_weighted_l1", "solve",
]

__version__ = "0.1.0"

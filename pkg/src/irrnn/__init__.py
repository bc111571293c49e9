"""Image-on-scalar regression with spatially varying coefficients fitted by coordinate networks."""

__version__ = "0.1.0"

from .errors import (FormatError, InvalidArgumentError, IRRNNError, RankDeficiencyError,
                     TrainingDivergedError, UndefinedMetricError)
from .estimator import FitConfig, FitResult, fit, load_fit, save_fit
from .grid import Dataset, GroundTruth, VoxelGrid, load_dataset, make_grid, save_dataset
from .metrics import MetricsReport, evaluate, evaluate_fit
from .models import IRRNNRegressor, MassUnivariateRegressor
from .nn import NetConfig, NeuralNet, TrainSpec
from .simgen import SimConfig, generate

__all__ = [
    "Dataset", "FitConfig", "FitResult", "FormatError", "GroundTruth", "IRRNNError",
    "IRRNNRegressor", "InvalidArgumentError", "MassUnivariateRegressor", "MetricsReport",
    "NetConfig",
    "NeuralNet", "RankDeficiencyError", "SimConfig", "TrainSpec", "TrainingDivergedError",
    "UndefinedMetricError", "VoxelGrid", "evaluate", "evaluate_fit", "fit", "generate", "load_dataset", "load_fit",
    "make_grid", "save_dataset", "save_fit",
]

"""Sparse change detection between pairwise Markov networks by density-ratio estimation."""

__version__ = "0.1.0"

from .kliep import KliepProblem, hessian, loss, loss_and_gradient
from .model import FeatureMap, custom, featurize, load_csv, quadratic, rbf, save_csv
from .optim import PathConfig, SolverConfig, SolverReport, solve, solve_path

__all__ = [
    "__version__",
    "KliepProblem",
    "loss",
    "loss_and_gradient",
    "hessian",
    "FeatureMap",
    "quadratic",
    "rbf",
    "custom",
    "featurize",
    "load_csv",
    "save_csv",
    "SolverConfig",
    "PathConfig",
    "SolverReport",
    "solve",
    "solve_path",
]

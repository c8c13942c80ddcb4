"""Dual-path neural operators with a self-contained autodiff engine.

Public surface: the four scikit-learn style regressors, the dataset
builder, and the binary tensor container.
"""
from .autodiff import Tape, Tensor, relative_l2
from .datasets import DatasetBundle, PdeProblemSpec, build_dataset, default_problem_spec
from .estimators import (
    DeepONetRegressor,
    DualPathDeepONetRegressor,
    DualPathFNORegressor,
    FNORegressor,
    load_fitted,
)
from .optim import AdamW
from .tensor_io import load_checkpoint, load_tensor, save_checkpoint, save_tensor

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "Tape",
    "relative_l2",
    "AdamW",
    "FNORegressor",
    "DualPathFNORegressor",
    "DeepONetRegressor",
    "DualPathDeepONetRegressor",
    "load_fitted",
    "DatasetBundle",
    "PdeProblemSpec",
    "build_dataset",
    "default_problem_spec",
    "save_tensor",
    "load_tensor",
    "save_checkpoint",
    "load_checkpoint",
    "__version__",
]

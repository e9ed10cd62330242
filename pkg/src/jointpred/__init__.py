"""Probabilistic multi-response regression: flexible margins plus a learned dependence model."""

from .data import Dataset, load_csv, pseudo_observations, split
from .pipeline import (
    FitConfig,
    JointModel,
    PredictiveSample,
    batch_predict,
    fit_joint,
    joint_probability,
    load_model,
    predict_distribution,
    save_model,
    with_dependence,
)

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "FitConfig",
    "JointModel",
    "PredictiveSample",
    "batch_predict",
    "fit_joint",
    "joint_probability",
    "load_csv",
    "load_model",
    "predict_distribution",
    "pseudo_observations",
    "save_model",
    "split",
    "with_dependence",
]

"""Variational quantum sensing workbench with online conformal risk control."""

from . import conformal, engine, estimator, probe, qsim
from .engine import RunConfig, run_experiment, run_trial
from .estimator import SequentialPhaseEstimator, TrainConfig

__version__ = "0.1.0"

__all__ = [
    "conformal",
    "engine",
    "estimator",
    "probe",
    "qsim",
    "RunConfig",
    "run_experiment",
    "run_trial",
    "SequentialPhaseEstimator",
    "TrainConfig",
    "__version__",
]

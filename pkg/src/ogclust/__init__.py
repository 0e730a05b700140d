"""Outcome-guided clustering: a penalised mixture of experts fitted by EM."""
from .core import (LossSpec, OmicsDataset, PenaltySpec, ThetaState, check_dataset, mixing_probs,
                   observed_loglik, penalized_objective, validate_dataset)
from .em import FitControls, FitResult, e_step, fit, predict
from .errors import (DegenerateFitError, EmptyClusterError, FitFailure, IllPosedError, NoRootError,
                     NonConvergenceError, NumericalError, OgClustError, ValidationError)
from .select import bic, elbow_diagnostics, fit_path, kfold_cv
from .simbench import SimConfig, ari, generate_dataset, run_benchmark

__version__ = "0.1.0"

__all__ = [
    "LossSpec", "OmicsDataset", "PenaltySpec", "ThetaState", "check_dataset", "mixing_probs",
    "observed_loglik", "penalized_objective", "validate_dataset", "FitControls", "FitResult",
    "e_step", "fit", "predict", "DegenerateFitError", "EmptyClusterError", "FitFailure",
    "IllPosedError", "NoRootError", "NonConvergenceError", "NumericalError", "OgClustError",
    "ValidationError", "bic", "elbow_diagnostics", "fit_path", "kfold_cv", "SimConfig", "ari",
    "generate_dataset", "run_benchmark",
]

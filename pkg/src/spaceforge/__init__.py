"""Learn compact hyperparameter search spaces from previous tuning runs."""
from .box import fit_box, fit_box_slack
from .calibration import calibrate
from .core import (BoxSpace, CalibrationConfig, CategoricalDim, EllipsoidSpace, EvaluationRecord,
                   Incumbent, NumericDim, ParameterSchema, SchemaError, SlackReport, SolverError,
                   TaskHistory, Trace, extract_incumbents)
from .ellipsoid import fit_mvee, fit_mvee_slack
from .learn import LearnedSpace, learn_space
from .optimizers import hyperband, random_search, successive_halving
from .sampling import RngStream, make_sampler

__version__ = "0.1.0"

__all__ = [
    "BoxSpace", "CalibrationConfig", "CategoricalDim", "EllipsoidSpace", "EvaluationRecord",
    "Incumbent", "LearnedSpace", "NumericDim", "ParameterSchema", "RngStream", "SchemaError",
    "SlackReport", "SolverError", "TaskHistory", "Trace", "calibrate", "extract_incumbents",
    "fit_box", "fit_box_slack", "fit_mvee", "fit_mvee_slack", "hyperband", "learn_space",
    "make_sampler", "random_search", "successive_halving",
]

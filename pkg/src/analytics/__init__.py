# Analytics engine for functional ensemble classification of mouse trajectories

from .config import RunConfig, default_config, load_config
from .cvharness import FoldPlan, evaluate_ensembles, evaluate_weak, make_folds, select_gate
from .engine import ClassificationEngine, run_pipeline
from .ensemble import EnsembleModel, fit_ensemble, forward_select, lce_fit
from .errors import ConfigError, DataError, FDClassError, InvalidInputError, InvariantViolation, UsageError
from .funcdata import Curve, LabeledSample, NormalizedCurve, extract_measures, time_normalize
from .semimetrics import DistanceMatrix, SemiMetricSpec, pairwise_matrix
from .weak_learners import Kernel, LearnerBase, WeakLearnerSpec

__all__ = [
    "RunConfig",
    "default_config",
    "load_config",
    "FoldPlan",
    "evaluate_ensembles",
    "evaluate_weak",
    "make_folds",
    "select_gate",
    "ClassificationEngine",
    "run_pipeline",
    "EnsembleModel",
    "fit_ensemble",
    "forward_select",
    "lce_fit",
    "ConfigError",
    "DataError",
    "FDClassError",
    "InvalidInputError",
    "InvariantViolation",
    "UsageError",
    "Curve",
    "LabeledSample",
    "NormalizedCurve",
    "extract_measures",
    "time_normalize",
    "DistanceMatrix",
    "SemiMetricSpec",
    "pairwise_matrix",
    "Kernel",
    "LearnerBase",
    "WeakLearnerSpec",
]

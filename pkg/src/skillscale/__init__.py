"""Latent-skill scaling laws for benchmark scores of model families."""

__version__ = "0.1.0"

from .dataset import (AsymptoteConfig, AsymptoteEntry, ModelRecord, ScoreTable, load_asymptotes,
                      load_scores, validate, write_scores)
from .design import DesignMatrix, build_design, feature_vector
from .fit import FitConfig, FitReport, fit, gradient_check, total_loss
from .identify import RotationResult, interpret_pipeline
from .model import SlothParams, predict_scores, skills

__all__ = [
    "__version__", "AsymptoteConfig", "AsymptoteEntry", "ModelRecord", "ScoreTable", "load_asymptotes",
    "load_scores", "validate", "write_scores", "DesignMatrix", "build_design", "feature_vector",
    "FitConfig", "FitReport", "fit", "gradient_check", "total_loss", "RotationResult",
    "interpret_pipeline", "SlothParams", "predict_scores", "skills",
]

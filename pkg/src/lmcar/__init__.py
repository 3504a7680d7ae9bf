"""Group-sparse large-margin metric learning for per-affordance feature analysis."""

__version__ = "0.1.0"

from .analysis import (associate, fit_gaussian, group_summary, kept_fraction,
                       kl_gaussian, magnitude_profile)
from .classifier import EvalReport, cross_validate, evaluate, knn_predict, pca_project
from .data import (Dataset, DatasetError, FeatureGroupSpec, SyntheticSpec,
                   apply_standardization, load_dataset, make_synthetic, split,
                   standardize)
from .optimizer import NumericalError, TrainConfig, TrainedModel, train
from .projection import colorize, export_cloud, point_importance

"""Dataset distillation with representative mini-batch selection and
clustering-based initialization."""

from .augment import DEFAULT_AUG, augment_pair
from .cluster import ClusterAssignment, cluster_class, init_synthetic, kmeans, representative_batch
from .data import LabeledDataset, class_batch, load_dataset, make_blobs
from .distill import ComparisonReport, StrategySpec, distill, strategy_compare
from .match import (
    MatchConfig,
    SyntheticSet,
    class_gradient,
    distribution_match_loss,
    gradient_match_loss,
    image_update_step,
    random_synthetic,
)
from .metrics import MetricsLog, evaluate, feature_migration, gradient_norm_stats, mmd
from .models import Model, ModelSpec, build_model, embed, forward_logits, sgd_step

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_AUG", "augment_pair",
    "ClusterAssignment", "cluster_class", "init_synthetic", "kmeans", "representative_batch",
    "LabeledDataset", "class_batch", "load_dataset", "make_blobs",
    "ComparisonReport", "StrategySpec", "distill", "strategy_compare",
    "MatchConfig", "SyntheticSet", "class_gradient", "distribution_match_loss",
    "gradient_match_loss", "image_update_step", "random_synthetic",
    "MetricsLog", "evaluate", "feature_migration", "gradient_norm_stats", "mmd",
    "Model", "ModelSpec", "build_model", "embed", "forward_logits", "sgd_step",
]

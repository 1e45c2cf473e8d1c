"""Distillation-based de-biasing of embedding networks and group-bias evaluation."""

from .datagen import Dataset, SynthSpec, generate_synthetic, read_features, write_features
from .distill import (
    BinaryAttribute,
    Method,
    PipelineResult,
    assign_high_low,
    binarize_attribute,
    default_spec,
    distill_loss,
    run_pipeline,
    train_baseline,
    train_student,
    train_teacher,
)
from .errors import DndError
from .evaluation import evaluate_network
from .metrics import (
    BiasReport,
    RocCurve,
    attribute_bias,
    bpc,
    build_roc,
    equalized_odds_thresholds,
    group_mean_std,
    group_std,
    tpr_at_fpr,
)
from .model import EmbeddingNet, TrainSpec, backward, class_loss, forward, sgd_step
from .saliency import group_attention_similarity, input_saliency

__version__ = "0.1.0"

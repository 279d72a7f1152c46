"""Desk-scale siamese change detection with relation-aware attention,
cross-scale channel gating, and cross-scale fusion, built on a minimal
numpy autodiff engine."""

from .autodiff import (
    ContractError,
    Module,
    NumericError,
    Parameter,
    ShapeError,
    Tensor,
    bilinear_resize,
    conv2d,
    global_avg_pool,
    matmul,
    softmax_rows,
)
from .backbone import Backbone, FeaturePyramid
from .checkpoint import load_arrays, load_model, save_arrays, save_model
from .config import ConfigError, ModelConfig
from .data import (
    ChangePair,
    DatasetError,
    DatasetSplit,
    generate_dataset,
    generate_synthetic_pair,
    tile_dataset,
)
from .fusion import ClassifierHead, CtbProjections, FusedMap, ProbabilityMap, ctb
from .metrics import ConfusionStats, Scores, confusion, render_confusion_map, scores
from .model import ChangeDetector, build_model
from .relation import RelationAware, attention, fuse_tokens
from .scale import ChannelGate, DifferenceMap, ScaleAware, difference
from .training import SGD, TrainingAborted, augment_pair, bce_loss, evaluate, train

__version__ = "0.1.0"

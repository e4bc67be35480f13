from .checkpoint import load_checkpoint, save_checkpoint
from .estimator import EmotionNetClassifier
from .network import (
    BN_EPS,
    BN_MOMENTUM,
    EVAL_MODE,
    PROB_FLOOR,
    TRAIN_MODE,
    backward,
    forward,
    loss,
    predict_classes,
    predict_proba,
)
from .optimizer import AdamState, adam_step, init_adam
from .params import Architecture, NetworkParams, check_same_shapes, init_params, zeros_like_tensors
from .training import (
    EpochLog,
    TrainConfig,
    TrainLog,
    batch_from_samples,
    predict_samples,
    train,
    train_arrays,
)

__all__ = [
    "Architecture",
    "NetworkParams",
    "AdamState",
    "TrainConfig",
    "TrainLog",
    "EpochLog",
    "EmotionNetClassifier",
    "BN_EPS",
    "BN_MOMENTUM",
    "PROB_FLOOR",
    "TRAIN_MODE",
    "EVAL_MODE",
    "init_params",
    "zeros_like_tensors",
    "check_same_shapes",
    "forward",
    "backward",
    "loss",
    "predict_proba",
    "predict_classes",
    "adam_step",
    "init_adam",
    "train",
    "train_arrays",
    "batch_from_samples",
    "predict_samples",
    "save_checkpoint",
    "load_checkpoint",
]

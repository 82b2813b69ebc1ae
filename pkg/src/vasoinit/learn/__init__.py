from .baseline import LogisticBaseline, fit_logistic, train_baseline
from .boosting import GbtConfig, TrainingError, TrainingLog, grad_hess, leaf_weight, logistic_loss, train_gbt
from .calibration import IsotonicMap, calibrate, fit_isotonic, pava
from .model import (
    ModelError,
    SchemaMismatchError,
    Tree,
    TreeEnsemble,
    load_artifact,
    logit,
    predict,
    save_artifact,
    sigmoid,
)

__all__ = [
    "GbtConfig",
    "IsotonicMap",
    "LogisticBaseline",
    "ModelError",
    "SchemaMismatchError",
    "TrainingError",
    "TrainingLog",
    "Tree",
    "TreeEnsemble",
    "calibrate",
    "fit_isotonic",
    "fit_logistic",
    "grad_hess",
    "leaf_weight",
    "load_artifact",
    "logistic_loss",
    "logit",
    "pava",
    "predict",
    "save_artifact",
    "sigmoid",
    "train_baseline",
    "train_gbt",
]

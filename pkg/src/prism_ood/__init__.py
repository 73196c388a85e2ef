"""Pseudo-label induced subspace learning for out-of-distribution detection."""
from ._backend import BACKEND
from .data import Dataset, SynthConfig, gen_fixture, gen_synthetic
from .detection import Detector, KnnIndex, build_index, calibrate_threshold, detect, knn_score, knn_scores
from .metrics import EvalReport, auroc, fpr_at_tpr, histogram, id_accuracy
from .model import PrismModel, encode, forward, init_model, predict, recombine
from .subspace import SubspaceBasis, build_basis, null_projection, reg_loss
from .training import TrainConfig, TrainLog, backward, ce_loss, fit, grad_check, total_loss

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Dataset", "SynthConfig", "gen_fixture", "gen_synthetic",
    "Detector", "KnnIndex", "build_index", "calibrate_threshold", "detect", "knn_score", "knn_scores",
    "EvalReport", "auroc", "fpr_at_tpr", "histogram", "id_accuracy",
    "PrismModel", "encode", "forward", "init_model", "predict", "recombine",
    "SubspaceBasis", "build_basis", "null_projection", "reg_loss",
    "TrainConfig", "TrainLog", "backward", "ce_loss", "fit", "grad_check", "total_loss",
]

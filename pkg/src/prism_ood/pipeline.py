"""End-to-end helpers shared by the CLI, the benchmark and the acceptance tests."""
from dataclasses import dataclass

import numpy as np

from .data import gen_synthetic
from .detection import DEFAULT_K, build_index, knn_scores
from .metrics import auroc, fpr_at_tpr, id_accuracy
from .model import encode, forward_batch, predict
from .subspace import basis_from_blocks, invert_blocks, reg_terms
from .training import fit


def per_sample_reg(model, X, inversion="exact", order=16):
    """Regularizer term of every sample under the model's current basis."""
    V, _ = invert_blocks(model.confusion_matrices(), inversion, order)
    return reg_terms(basis_from_blocks(V), forward_batch(model, X).p)


@dataclass
class BenchmarkResult:
    model: object
    log: object
    index: object
    id_accuracy: float
    auroc: float
    fpr: float
    id_scores: np.ndarray
    ood_scores: np.ndarray
    reg_id: np.ndarray
    reg_ood: np.ndarray


def run_benchmark(synth, train_cfg, k=DEFAULT_K, tpr=0.95, datasets=None):
    """Generate data, train, index the training features and score both test splits."""
    train, test_id, test_ood = datasets or gen_synthetic(synth)
    model, log = fit(train, train_cfg)
    index = build_index(encode(model, train.X))
    s_id = knn_scores(index, encode(model, test_id.X), k)
    s_ood = knn_scores(index, encode(model, test_ood.X), k)
    return BenchmarkResult(
        model=model,
        log=log,
        index=index,
        id_accuracy=id_accuracy(predict(model, test_id.X), test_id.y),
        auroc=auroc(s_id, s_ood),
        fpr=fpr_at_tpr(s_id, s_ood, tpr),
        id_scores=s_id,
        ood_scores=s_ood,
        reg_id=per_sample_reg(model, test_id.X),
        reg_ood=per_sample_reg(model, test_ood.X),
    )

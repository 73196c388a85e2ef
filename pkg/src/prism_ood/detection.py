"""kNN scoring on l2-normalized penultimate features.

The score of a test feature ``h`` is ``-||u - u_(k)||`` where ``u = h/||h||``
and ``u_(k)`` is its k-th nearest normalized training embedding. Larger
scores mean "more in-distribution"; a sample is declared ID when its score
is at least the threshold.
"""
import math
from dataclasses import dataclass

import numpy as np

from ._backend import kernels
from .errors import DegenerateFeatureError, DimensionError, NonFiniteError
from .numerics import unit_rows

NORM_EPS = 1e-12
DEFAULT_K = 10
ID, OOD = "ID", "OOD"


def l2_normalize(features):
    """Row-normalize ``features``; rejects rows with norm below 1e-12.

    Rows are normalized with correct rounding (see
    :func:`prism_ood.numerics.unit_rows`), so ``c * h`` and ``h`` give the
    same unit vector whenever ``c * h`` is exactly representable.
    """
    F = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if F.ndim != 2:
        raise DimensionError(f"expected a 2-D feature array, got shape {F.shape}")
    if not np.all(np.isfinite(F)):
        raise NonFiniteError("features contain non-finite entries")
    U, norms = unit_rows(F)
    bad = np.flatnonzero(~(norms >= NORM_EPS))
    if bad.size:
        raise DegenerateFeatureError(f"zero-norm feature at row {int(bad[0])}")
    return U


@dataclass(frozen=True)
class KnnIndex:
    embeddings: np.ndarray

    @property
    def N(self):
        return self.embeddings.shape[0]

    @property
    def L(self):
        return self.embeddings.shape[1]


def build_index(features):
    F = np.asarray(features, dtype=np.float64)
    if F.ndim != 2 or F.shape[0] == 0:
        raise DimensionError("build_index needs a non-empty (N, L) feature array")
    U = np.ascontiguousarray(l2_normalize(F))
    U.setflags(write=False)
    return KnnIndex(U)


def knn_scores(index, H, k=DEFAULT_K):
    """Scores for a batch of test features ``H`` of shape ``(n, L)``."""
    H = np.atleast_2d(np.asarray(H, dtype=np.float64))
    if H.shape[1] != index.L:
        raise DimensionError(f"test features have length {H.shape[1]}, index has {index.L}")
    if not 1 <= k <= index.N:
        raise ValueError(f"k={k} outside [1, {index.N}]")
    U = l2_normalize(H)
    sq, _ = kernels.kth_neighbor(index.embeddings, U, int(k))
    return -np.sqrt(sq)


def knn_neighbors(index, H, k=DEFAULT_K):
    """Position in the index of each test feature's k-th neighbor (ties to lower index)."""
    U = l2_normalize(H)
    return kernels.kth_neighbor(index.embeddings, U, int(k))[1]


def knn_score(index, h_test, k=DEFAULT_K):
    h = np.asarray(h_test, dtype=np.float64)
    if h.ndim != 1:
        raise DimensionError("knn_score takes a single feature vector")
    return float(knn_scores(index, h[None, :], k)[0])


def calibrate_threshold(id_scores, tpr=0.95):
    """The ``ceil(tpr * n)``-th largest ID score."""
    s = np.asarray(id_scores, dtype=np.float64).ravel()
    if s.size == 0:
        raise ValueError("no ID scores to calibrate on")
    if not 0.0 < tpr <= 1.0:
        raise ValueError("tpr must lie in (0, 1]")
    n_keep = max(1, math.ceil(tpr * s.size - 1e-12))
    return float(np.sort(s)[::-1][n_keep - 1])


def detect(s, tau):
    return ID if s >= tau else OOD


@dataclass(frozen=True)
class Detector:
    index: KnnIndex
    k: int
    tau: float

    @classmethod
    def calibrate(cls, index, id_features, k=DEFAULT_K, tpr=0.95):
        return cls(index, k, calibrate_threshold(knn_scores(index, id_features, k), tpr))

    def score(self, H):
        return knn_scores(self.index, H, self.k)

    def __call__(self, h):
        return detect(knn_score(self.index, h, self.k), self.tau)

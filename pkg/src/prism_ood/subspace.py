"""Pseudo-label subspace basis and the null-space regularizer.

The basis stacks one ``K x K`` block per pseudo label,
``W = [B_1^{-1}; ...; B_M^{-1}]`` (shape ``MK x K``). If the learned
correction matrices invert the confusion matrices, ``B_m = A_m^{-1}``,
the blocks are exactly the ``A_m`` and clean pseudo-label vectors
``p = [A_1 f; ...; A_M f]`` lie in ``range(W)``.
"""
import logging
from dataclasses import dataclass

import numpy as np

from . import numerics
from .errors import (
    DegenerateBasisError,
    DegenerateInputError,
    DimensionError,
    SingularMatrixError,
)

log = logging.getLogger(__name__)

NORM_EPS = 1e-12
GRAM_RIDGE = 1e-10


@dataclass(frozen=True)
class SubspaceBasis:
    W: np.ndarray
    projector_residual: np.ndarray
    gram_inv: np.ndarray
    M: int
    K: int

    @property
    def blocks(self):
        return self.W.reshape(self.M, self.K, self.K)


def basis_from_blocks(blocks):
    """Build a :class:`SubspaceBasis` from the ``M`` stacked ``K x K`` blocks of ``W``."""
    blocks = np.asarray(blocks, dtype=np.float64)
    if blocks.ndim != 3 or blocks.shape[1] != blocks.shape[2]:
        raise DimensionError(f"expected (M, K, K) blocks, got {blocks.shape}")
    M, K, _ = blocks.shape
    if M < 1:
        raise DimensionError("need at least one block")
    W = blocks.reshape(M * K, K)
    gram = W.T @ W
    if np.any(np.sqrt(np.diagonal(gram)) < NORM_EPS):
        raise DegenerateBasisError("W has a zero column; it cannot have rank K")
    try:
        gram_inv = numerics.exact_inverse(gram)
    except SingularMatrixError:
        log.warning("Gram matrix W^T W near singular; adding ridge %g", GRAM_RIDGE)
        try:
            gram_inv = numerics.exact_inverse(gram + GRAM_RIDGE * np.eye(K))
        except SingularMatrixError as exc:
            raise DegenerateBasisError("W^T W is singular; W does not have rank K") from exc
    if M == 1:
        # square invertible W: the null space is {0}
        proj = np.zeros((K, K))
    else:
        proj = np.eye(M * K) - W @ gram_inv @ W.T
        # symmetrize away the rounding asymmetry of the triple product
        proj = 0.5 * (proj + proj.T)
    W.setflags(write=False)
    proj.setflags(write=False)
    gram_inv.setflags(write=False)
    return SubspaceBasis(W=W, projector_residual=proj, gram_inv=gram_inv, M=M, K=K)


def invert_blocks(B_list, inversion="neumann", order=numerics.DEFAULT_NEUMANN_ORDER):
    """Invert each correction matrix; returns ``(inverses, methods_used)``."""
    inverses, used = [], []
    for B in B_list:
        V, how = numerics.invert(B, inversion, order)
        inverses.append(V)
        used.append(how)
    return np.stack(inverses), used


def build_basis(B_list, inversion="exact", order=numerics.DEFAULT_NEUMANN_ORDER, raw=False):
    """Subspace basis induced by the correction matrices ``B_1..B_M``.

    Parameters
    ----------
    B_list : sequence of (K, K) arrays
    inversion : {"exact", "neumann"}
        Neumann falls back to the exact inverse per matrix when its
        convergence guard fails.
    raw : bool
        Skip the column-stochastic check. Used for oracle fixtures where
        ``B_m = A_m^{-1}`` can have negative entries.
    """
    B = np.asarray(B_list, dtype=np.float64)
    if B.ndim != 3 or B.shape[1] != B.shape[2] or B.shape[0] < 1:
        raise DimensionError(f"expected M >= 1 square matrices, got shape {B.shape}")
    if not raw:
        if np.any(B < 0) or not np.allclose(B.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("correction matrices must be column-stochastic")
    V, _ = invert_blocks(B, inversion, order)
    return basis_from_blocks(V)


def null_projection(basis, p):
    """Residual of ``p`` after orthogonal projection onto ``range(W)``.

    ``p`` may be a single vector of length ``MK`` or a batch ``(N, MK)``.
    """
    p = np.asarray(p, dtype=np.float64)
    n = basis.M * basis.K
    if p.ndim not in (1, 2) or p.shape[-1] != n:
        raise DimensionError(f"expected vectors of length {n}, got shape {p.shape}")
    return p @ basis.projector_residual


def reg_terms(basis, p_batch):
    """Per-sample ratios ``||Proj_null(p_n)|| / ||p_n||``, each in [0, 1]."""
    P = np.atleast_2d(np.asarray(p_batch, dtype=np.float64))
    if P.shape[0] == 0:
        raise DegenerateInputError("empty batch")
    R = null_projection(basis, P)
    pn = np.linalg.norm(P, axis=1)
    if np.any(pn < NORM_EPS):
        raise DegenerateInputError("zero-norm pseudo-label vector in batch")
    return np.linalg.norm(R, axis=1) / pn


def reg_loss(basis, p_batch, reduction="mean"):
    """Subspace-distance regularizer over a batch (``sum`` or ``mean``)."""
    terms = reg_terms(basis, p_batch)
    if reduction == "sum":
        return float(terms.sum())
    if reduction == "mean":
        return float(terms.mean())
    raise ValueError(f"unknown reduction {reduction!r}")


def reg_loss_backward(basis, p_batch, upstream=1.0, reduction="mean"):
    """Gradients of the regularizer w.r.t. the batch and the basis ``W``.

    For one sample, with least-squares coefficients
    ``c = (W^T W)^{-1} W^T p`` and residual ``r = p - W c``:

    * ``d||r||/dp = r / ||r||`` (the residual projector is symmetric and
      idempotent),
    * ``d||r||/dW = -r c^T / ||r||`` (envelope theorem on
      ``min_c ||p - W c||``).

    Samples with ``||r|| = 0`` contribute the zero subgradient for the
    residual part.

    Returns
    -------
    grad_p : (N, MK)
    grad_W : (MK, K)
    """
    P = np.atleast_2d(np.asarray(p_batch, dtype=np.float64))
    N = P.shape[0]
    R = null_projection(basis, P)
    rn = np.linalg.norm(R, axis=1)
    pn = np.linalg.norm(P, axis=1)
    if np.any(pn < NORM_EPS):
        raise DegenerateInputError("zero-norm pseudo-label vector in batch")
    scale = upstream / N if reduction == "mean" else upstream
    safe_rn = np.where(rn > 0, rn, 1.0)
    inv_r = np.where(rn > 0, 1.0 / safe_rn, 0.0)
    w = scale * inv_r / pn
    grad_p = w[:, None] * R - (scale * rn / pn**3)[:, None] * P
    C = P @ basis.W @ basis.gram_inv
    grad_W = -(R * w[:, None]).T @ C
    return grad_p, grad_W

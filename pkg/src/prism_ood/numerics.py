"""Dense primitives: softmax parameterizations and small matrix inverses.

All arrays are float64. Functions accept numpy arrays (or anything
``np.asarray`` understands) and never mutate their inputs.
"""
import numpy as np

from ._backend import kernels
from .errors import DimensionError, NeumannGuardError, NonFiniteError

DEFAULT_NEUMANN_ORDER = 16


def _as_finite(v, name="input"):
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise NonFiniteError(f"{name} contains non-finite entries")
    return v


def _softmax_last(v):
    z = v - v.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(v):
    """Numerically stable softmax of a 1-D vector."""
    v = _as_finite(v)
    if v.ndim != 1 or v.size == 0:
        raise DimensionError("softmax expects a non-empty 1-D vector")
    return _softmax_last(v)


def softmax_backward(s, grad):
    """Vector-Jacobian product of softmax along the last axis.

    ``s`` is the softmax output, ``grad`` the upstream gradient.
    """
    return s * (grad - np.sum(s * grad, axis=-1, keepdims=True))


def blockwise_softmax(v, M, K):
    """Softmax each consecutive length-``K`` block of the last axis.

    Works on a single vector of length ``M*K`` or a batch ``(N, M*K)``.
    """
    v = _as_finite(v)
    if v.ndim == 0 or v.shape[-1] != M * K:
        raise DimensionError(f"expected last axis of length M*K={M * K}, got {v.shape}")
    blocks = v.reshape(v.shape[:-1] + (M, K))
    return _softmax_last(blocks).reshape(v.shape)


def blockwise_softmax_backward(p, grad, M, K):
    shape = p.shape
    p = p.reshape(shape[:-1] + (M, K))
    grad = grad.reshape(shape[:-1] + (M, K))
    return softmax_backward(p, grad).reshape(shape)


def column_stochastic_from_logits(theta):
    """Map an unconstrained ``K x K`` logit matrix to a column-stochastic matrix.

    Each column is the softmax of the corresponding logit column, so the
    result is strictly positive with unit column sums. A leading stack
    axis ``(M, K, K)`` is also accepted.
    """
    theta = _as_finite(theta, "logits")
    if theta.ndim < 2 or theta.shape[-1] != theta.shape[-2]:
        raise DimensionError(f"expected square logit matrix, got shape {theta.shape}")
    z = theta - theta.max(axis=-2, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-2, keepdims=True)


def column_stochastic_backward(B, grad):
    """Gradient w.r.t. the logits given the gradient w.r.t. ``B``."""
    return B * (grad - np.sum(B * grad, axis=-2, keepdims=True))


def _check_square(B):
    B = _as_finite(B, "matrix")
    if B.ndim != 2 or B.shape[0] != B.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {B.shape}")
    return B


def neumann_guard(B):
    """Induced 1-norm (max absolute column sum) of ``I - B``."""
    C = np.eye(B.shape[0]) - B
    return float(np.abs(C).sum(axis=0).max())


def neumann_inverse(B, order=DEFAULT_NEUMANN_ORDER):
    """Truncated Neumann series ``sum_{t=0}^{order} (I - B)^t``.

    Raises
    ------
    NeumannGuardError
        If ``||I - B||_1 >= 1``; convergence is then not guaranteed and
        the caller should use :func:`exact_inverse`.
    """
    B = _check_square(B)
    if order < 0:
        raise ValueError("order must be non-negative")
    norm = neumann_guard(B)
    if norm >= 1.0:
        raise NeumannGuardError(f"||I - B||_1 = {norm:.6g} >= 1")
    K = B.shape[0]
    C = np.eye(K) - B
    term = np.eye(K)
    out = np.eye(K)
    for _ in range(order):
        term = term @ C
        out = out + term
    return out


def neumann_inverse_backward(B, order, grad):
    """Gradient w.r.t. ``B`` of ``<grad, neumann_inverse(B, order)>``.

    With ``C = I - B`` and powers ``P_a = C^a``,
    ``d/dC sum_t C^t = sum_{a+b <= order-1} P_a^T grad P_b^T``; the inner sum
    over ``b`` is a prefix sum of powers, so this costs O(order) products.
    """
    K = B.shape[0]
    C = np.eye(K) - B
    powers = [np.eye(K)]
    for _ in range(max(order - 1, 0)):
        powers.append(powers[-1] @ C)
    prefix = []
    acc = np.zeros((K, K))
    for P in powers:
        acc = acc + P
        prefix.append(acc)
    gC = np.zeros((K, K))
    for a in range(order):
        gC += powers[a].T @ grad @ prefix[order - 1 - a].T
    return -gC


def exact_inverse(B):
    """Inverse by Gauss-Jordan elimination with partial pivoting.

    Raises :class:`~prism_ood.errors.SingularMatrixError` when a pivot
    falls below ``1e-12`` in magnitude.
    """
    return kernels.gauss_jordan_inverse(_check_square(B))


def exact_inverse_backward(Binv, grad):
    # d(B^-1) = -B^-1 dB B^-1
    return -Binv.T @ grad @ Binv.T


def invert(B, method="neumann", order=DEFAULT_NEUMANN_ORDER):
    """Invert ``B`` with the requested method, falling back to the exact path.

    Returns ``(inverse, used)`` where ``used`` is ``"neumann"`` or ``"exact"``.
    """
    if method == "neumann":
        try:
            return neumann_inverse(B, order), "neumann"
        except NeumannGuardError:
            pass
    elif method != "exact":
        raise ValueError(f"unknown inversion method {method!r}")
    return exact_inverse(B), "exact"


def invert_backward(B, Binv, used, grad, order=DEFAULT_NEUMANN_ORDER):
    if used == "neumann":
        return neumann_inverse_backward(B, order, grad)
    return exact_inverse_backward(Binv, grad)


# ---------------------------------------------------------------- row normalization
#
# Error-free transformations (Dekker/Knuth) give the direction h / ||h|| to
# roughly twice working precision before a single final rounding. The result
# is then the correctly rounded unit vector except in astronomically rare
# near-midpoint cases, so exactly proportional inputs (h and c * h with the
# product representable) normalize to the same bits.

_SPLITTER = 134217729.0  # 2**27 + 1


def _two_sum(a, b):
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


def _fast_two_sum(a, b):
    s = a + b
    return s, b - (s - a)


def _split(a):
    t = _SPLITTER * a
    hi = t - (t - a)
    return hi, a - hi


def _two_prod(a, b):
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    return p, ((ah * bh - p) + ah * bl + al * bh) + al * bl


def unit_rows(x):
    """Correctly rounded ``x / ||x||`` per row, plus the row norms.

    Each row is first brought to ``max |x_ij| in [0.5, 1)`` by an exact
    power-of-two scaling (no overflow, no dependence on the row's scale),
    the squared norm is accumulated column by column in double-double,
    and each quotient is formed in double-double and rounded once.

    Returns
    -------
    u : (N, L) array
    norms : (N,) array, ``||x_i||`` in working precision
    """
    x = np.asarray(x, dtype=np.float64)
    peak = np.max(np.abs(x), axis=1) if x.shape[1] else np.zeros(x.shape[0])
    _, e = np.frexp(peak)
    xs = np.ldexp(x, -e[:, None])
    s_hi = np.zeros(x.shape[0])
    s_lo = np.zeros(x.shape[0])
    for j in range(x.shape[1]):
        p, pe = _two_prod(xs[:, j], xs[:, j])
        s_hi, t = _two_sum(s_hi, p)
        s_lo = s_lo + (t + pe)
    s_hi, s_lo = _fast_two_sum(s_hi, s_lo)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.sqrt(s_hi)
        rr, rre = _two_prod(r, r)
        n_hi, n_lo = _fast_two_sum(r, (((s_hi - rr) - rre) + s_lo) / (2.0 * r))
        xc = xs
        nh, nl = n_hi[:, None], n_lo[:, None]
        q1 = xc / nh
        p, pe = _two_prod(q1, nh)
        q2 = (((xc - p) - pe) - q1 * nl) / nh
        u = q1 + q2
    return u, np.ldexp(n_hi, e)

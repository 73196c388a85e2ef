"""Pure numpy implementations of the hot kernels.

Every routine here performs the same floating point operations, in the
same order, as its counterpart in ``_kernels.pyx``. The two backends are
therefore interchangeable bit for bit, which the test-suite checks.
"""
import numpy as np

from .errors import SingularMatrixError

PIVOT_TOL = 1e-12


def gauss_jordan_inverse(a):
    """Invert a square matrix by Gauss-Jordan elimination with partial pivoting."""
    a = np.array(a, dtype=np.float64, order="C", copy=True)
    n = a.shape[0]
    inv = np.eye(n)
    for col in range(n):
        piv = col + int(np.argmax(np.abs(a[col:, col])))
        if abs(a[piv, col]) < PIVOT_TOL:
            raise SingularMatrixError(f"pivot {a[piv, col]:.3e} below {PIVOT_TOL:g} in column {col}")
        if piv != col:
            a[[col, piv]] = a[[piv, col]]
            inv[[col, piv]] = inv[[piv, col]]
        p = a[col, col]
        a[col] /= p
        inv[col] /= p
        for r in range(n):
            if r == col:
                continue
            f = a[r, col]
            a[r] -= f * a[col]
            inv[r] -= f * inv[col]
    return inv


def kth_neighbor(index, queries, k):
    """Squared distance to, and position of, the k-th nearest index row.

    Ties are resolved in favour of the lower index position.

    Returns
    -------
    sqdist : (n,) float64
    position : (n,) int64
    """
    index = np.ascontiguousarray(index, dtype=np.float64)
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    n_idx, dim = index.shape
    if not 1 <= k <= n_idx:
        raise ValueError(f"k={k} outside [1, {n_idx}]")
    sq = np.empty(queries.shape[0])
    pos = np.empty(queries.shape[0], dtype=np.int64)
    # chunked to bound the (chunk, N) distance buffer
    chunk = max(1, 2_000_000 // max(n_idx, 1))
    for start in range(0, queries.shape[0], chunk):
        q = queries[start:start + chunk]
        d = np.zeros((q.shape[0], n_idx))
        for j in range(dim):
            t = index[None, :, j] - q[:, j, None]
            d += t * t
        order = np.argsort(d, axis=1, kind="stable")[:, k - 1]
        pos[start:start + chunk] = order
        sq[start:start + chunk] = d[np.arange(q.shape[0]), order]
    return sq, pos

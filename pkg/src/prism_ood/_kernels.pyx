# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; see ``_fallback.py`` for the reference semantics."""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

from .errors import SingularMatrixError

cnp.import_array()

cdef double PIVOT_TOL = 1e-12


def gauss_jordan_inverse(a):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] A = np.array(a, dtype=np.float64, order="C", copy=True)
    cdef Py_ssize_t n = A.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] inv = np.eye(n)
    cdef double[:, ::1] av = A
    cdef double[:, ::1] iv = inv
    cdef Py_ssize_t col, piv, r, j
    cdef double best, p, f, tmp
    for col in range(n):
        piv = col
        best = fabs(av[col, col])
        for r in range(col + 1, n):
            if fabs(av[r, col]) > best:
                best = fabs(av[r, col])
                piv = r
        if best < PIVOT_TOL:
            raise SingularMatrixError(f"pivot {av[piv, col]:.3e} below {PIVOT_TOL:g} in column {col}")
        if piv != col:
            for j in range(n):
                tmp = av[col, j]; av[col, j] = av[piv, j]; av[piv, j] = tmp
                tmp = iv[col, j]; iv[col, j] = iv[piv, j]; iv[piv, j] = tmp
        p = av[col, col]
        for j in range(n):
            av[col, j] = av[col, j] / p
            iv[col, j] = iv[col, j] / p
        for r in range(n):
            if r == col:
                continue
            f = av[r, col]
            for j in range(n):
                av[r, j] = av[r, j] - f * av[col, j]
                iv[r, j] = iv[r, j] - f * iv[col, j]
    return inv


cdef inline bint _before(double da, Py_ssize_t ia, double db, Py_ssize_t ib) nogil:
    return da < db or (da == db and ia < ib)


def kth_neighbor(index, queries, Py_ssize_t k):
    cdef const double[:, ::1] X = np.ascontiguousarray(index, dtype=np.float64)
    cdef const double[:, ::1] Q = np.ascontiguousarray(queries, dtype=np.float64)
    cdef Py_ssize_t n_idx = X.shape[0], dim = X.shape[1], nq = Q.shape[0]
    if not 1 <= k <= n_idx:
        raise ValueError(f"k={k} outside [1, {n_idx}]")
    sq = np.empty(nq)
    pos = np.empty(nq, dtype=np.int64)
    cdef double[::1] sqv = sq
    cdef cnp.int64_t[::1] posv = pos
    # k smallest (distance, position) pairs kept sorted ascending
    cdef double[::1] best_d = np.empty(k)
    cdef Py_ssize_t[::1] best_i = np.empty(k, dtype=np.intp)
    cdef Py_ssize_t q, i, j, filled, slot
    cdef double d, t
    with nogil:
        for q in range(nq):
            filled = 0
            for i in range(n_idx):
                d = 0.0
                for j in range(dim):
                    t = X[i, j] - Q[q, j]
                    d = d + t * t
                if filled == k and not _before(d, i, best_d[k - 1], best_i[k - 1]):
                    continue
                slot = filled if filled < k else k - 1
                while slot > 0 and _before(d, i, best_d[slot - 1], best_i[slot - 1]):
                    best_d[slot] = best_d[slot - 1]
                    best_i[slot] = best_i[slot - 1]
                    slot -= 1
                best_d[slot] = d
                best_i[slot] = i
                if filled < k:
                    filled += 1
            sqv[q] = best_d[k - 1]
            posv[q] = best_i[k - 1]
    return sq, pos

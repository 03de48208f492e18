# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernel core: fused row-wise operations for the tensor library.

Implements the fused row-wise kernels where one C pass beats NumPy's
multi-pass vectorization; everything else (BLAS matmul, SIMD tanh/exp/log)
stays on the NumPy side. Signatures mirror ``numpy_backend``.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, sqrt

cnp.import_array()

LOG_FLOOR = 1e-12
cdef double C_LOG_FLOOR = 1e-12



def softmax_rows(double[:, ::1] x not None):
    cdef Py_ssize_t rows = x.shape[0], cols = x.shape[1]
    out_arr = np.empty((rows, cols), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t r, c
    cdef double mx, s
    with nogil:
        for r in range(rows):
            mx = x[r, 0]
            for c in range(1, cols):
                if x[r, c] > mx:
                    mx = x[r, c]
            s = 0.0
            for c in range(cols):
                out[r, c] = exp(x[r, c] - mx)
                s += out[r, c]
            for c in range(cols):
                out[r, c] /= s
    return out_arr


def softmax_rows_backward(double[:, ::1] y not None, double[:, ::1] gy not None):
    cdef Py_ssize_t rows = y.shape[0], cols = y.shape[1]
    out_arr = np.empty((rows, cols), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t r, c
    cdef double dot
    with nogil:
        for r in range(rows):
            dot = 0.0
            for c in range(cols):
                dot += gy[r, c] * y[r, c]
            for c in range(cols):
                out[r, c] = y[r, c] * (gy[r, c] - dot)
    return out_arr


def l2norm_rows(double[:, ::1] x not None):
    cdef Py_ssize_t rows = x.shape[0], cols = x.shape[1]
    out_arr = np.empty((rows, cols), dtype=np.float64)
    norms_arr = np.empty(rows, dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] norms = norms_arr
    cdef Py_ssize_t r, c
    cdef double s
    with nogil:
        for r in range(rows):
            s = 0.0
            for c in range(cols):
                s += x[r, c] * x[r, c]
            s = sqrt(s)
            norms[r] = s
            for c in range(cols):
                out[r, c] = x[r, c] / s
    return out_arr, norms_arr


def l2norm_rows_backward(double[:, ::1] x not None, double[::1] norms not None,
                         double[:, ::1] gy not None):
    cdef Py_ssize_t rows = x.shape[0], cols = x.shape[1]
    out_arr = np.empty((rows, cols), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t r, c
    cdef double n, n3, proj
    with nogil:
        for r in range(rows):
            n = norms[r]
            n3 = n * n * n
            proj = 0.0
            for c in range(cols):
                proj += gy[r, c] * x[r, c]
            for c in range(cols):
                out[r, c] = gy[r, c] / n - x[r, c] * proj / n3
    return out_arr


def entropy_rows(double[:, ::1] p not None):
    cdef Py_ssize_t rows = p.shape[0], cols = p.shape[1]
    out_arr = np.empty(rows, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t r, c
    cdef double h, v
    with nogil:
        for r in range(rows):
            h = 0.0
            for c in range(cols):
                v = p[r, c]
                if v > 0.0:
                    if v < C_LOG_FLOOR:
                        h -= v * log(C_LOG_FLOOR)
                    else:
                        h -= v * log(v)
            out[r] = h
    return out_arr


def entropy_rows_backward(double[:, ::1] p not None, double[::1] gh not None):
    cdef Py_ssize_t rows = p.shape[0], cols = p.shape[1]
    out_arr = np.empty((rows, cols), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t r, c
    cdef double v
    with nogil:
        for r in range(rows):
            for c in range(cols):
                v = p[r, c]
                if v < C_LOG_FLOOR:
                    v = C_LOG_FLOOR
                out[r, c] = -(log(v) + 1.0) * gh[r]
    return out_arr







def sum_mid(double[:, :, ::1] x not None):
    cdef Py_ssize_t rows = x.shape[0], mid = x.shape[1], cols = x.shape[2]
    out_arr = np.zeros((rows, cols), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t r, m, c
    with nogil:
        for r in range(rows):
            for m in range(mid):
                for c in range(cols):
                    out[r, c] += x[r, m, c]
    return out_arr


def mean_mid(double[:, :, ::1] x not None):
    out = sum_mid(x)
    out /= x.shape[1]
    return out


def take_per_row(double[:, ::1] p not None, idx):
    idx_arr = np.ascontiguousarray(idx, dtype=np.int64)
    cdef cnp.int64_t[::1] ix = idx_arr
    cdef Py_ssize_t rows = p.shape[0]
    out_arr = np.empty(rows, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t r
    with nogil:
        for r in range(rows):
            out[r] = p[r, ix[r]]
    return out_arr


def take_per_row_backward(Py_ssize_t rows, Py_ssize_t cols, idx,
                          double[::1] gy not None):
    idx_arr = np.ascontiguousarray(idx, dtype=np.int64)
    cdef cnp.int64_t[::1] ix = idx_arr
    out_arr = np.zeros((rows, cols), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t r
    with nogil:
        for r in range(rows):
            out[r, ix[r]] = gy[r]
    return out_arr

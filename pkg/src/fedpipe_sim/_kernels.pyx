# cython: language_level=3
"""Compiled twins of the kernels in ``_kernels_py``.

Arithmetic is written in the same order as the fallback so that results
agree bit for bit (the build disables floating-point contraction).
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs

cnp.import_array()

cdef double JACOBI_TOL = 1e-15
cdef int JACOBI_MAX_SWEEPS = 100


def jacobi_singular_values(core):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] g = np.array(core, dtype=np.float64)
    if g.shape[1] > g.shape[0]:
        g = np.ascontiguousarray(g.T)
    # column-major working copy: one contiguous row per matrix column
    cdef double[:, ::1] cm = np.ascontiguousarray(g.T)
    cdef Py_ssize_t cols = cm.shape[0]
    cdef Py_ssize_t rows = cm.shape[1]
    cdef Py_ssize_t i, j, k
    cdef int sweep
    cdef bint rotated
    cdef double alpha, beta, gamma, zeta, t, c, s, a, b, acc

    for sweep in range(JACOBI_MAX_SWEEPS):
        rotated = False
        for i in range(cols - 1):
            for j in range(i + 1, cols):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for k in range(rows):
                    a = cm[i, k]
                    b = cm[j, k]
                    alpha += a * a
                    beta += b * b
                    gamma += a * b
                if gamma == 0.0 or fabs(gamma) <= JACOBI_TOL * sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                if fabs(zeta) > 1e150:
                    t = 1.0 / (2.0 * zeta)
                elif zeta >= 0.0:
                    t = 1.0 / (zeta + sqrt(1.0 + zeta * zeta))
                else:
                    t = -1.0 / (-zeta + sqrt(1.0 + zeta * zeta))
                c = 1.0 / sqrt(1.0 + t * t)
                s = c * t
                for k in range(rows):
                    a = cm[i, k]
                    b = cm[j, k]
                    cm[i, k] = c * a - s * b
                    cm[j, k] = s * a + c * b
        if not rotated:
            break

    out = np.empty(cols, dtype=np.float64)
    cdef double[::1] ov = out
    for j in range(cols):
        acc = 0.0
        for k in range(rows):
            acc += cm[j, k] * cm[j, k]
        ov[j] = sqrt(acc)
    return out


def quantize_blocks(flat, codes, Py_ssize_t block_size):
    cdef const double[::1] x = np.ascontiguousarray(flat, dtype=np.float64).ravel()
    cdef const double[::1] cv = np.ascontiguousarray(codes, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t n_codes = cv.shape[0]
    cdef Py_ssize_t n_blocks = (n + block_size - 1) // block_size
    idx = np.empty(n, dtype=np.int64)
    scales = np.empty(n_blocks, dtype=np.float64)
    cdef cnp.int64_t[::1] iv = idx
    cdef double[::1] sv = scales
    cdef Py_ssize_t blk, start, stop, e, lo, hi, mid
    cdef double m, denom, v, d_lo, d_hi

    for blk in range(n_blocks):
        start = blk * block_size
        stop = start + block_size
        if stop > n:
            stop = n
        m = 0.0
        for e in range(start, stop):
            if fabs(x[e]) > m:
                m = fabs(x[e])
        sv[blk] = m
        denom = m if m > 0.0 else 1.0
        for e in range(start, stop):
            v = x[e] / denom
            # first code >= v, as numpy.searchsorted(side="left")
            lo = 0
            hi = n_codes
            while lo < hi:
                mid = (lo + hi) // 2
                if cv[mid] < v:
                    lo = mid + 1
                else:
                    hi = mid
            if hi < 1:
                hi = 1
            elif hi > n_codes - 1:
                hi = n_codes - 1
            lo = hi - 1
            d_lo = v - cv[lo]
            d_hi = cv[hi] - v
            iv[e] = hi if d_hi < d_lo else lo
    return idx, scales

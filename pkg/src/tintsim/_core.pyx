# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled float32 kernels.

matmul accumulates left-to-right in float32 with fp contraction disabled,
bit-identical to the pure-numpy fallback. The transcendental kernels use
libm (expf/erff), which may differ from numpy/scipy by ULPs; cross-backend
comparisons for those are tolerance-based.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport erff, expf, sqrtf

cnp.import_array()

SQRT1_2 = 0.7071067811865476   # 1/sqrt(2), float64; cast per use


def matmul_f32(cnp.ndarray[cnp.float32_t, ndim=2] a,
               cnp.ndarray[cnp.float32_t, ndim=2] b):
    cdef Py_ssize_t m = a.shape[0], kk = a.shape[1], n = b.shape[1]
    cdef cnp.ndarray[cnp.float32_t, ndim=2] out = np.zeros((m, n), dtype=np.float32)
    cdef Py_ssize_t i, j, k
    cdef float acc
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for k in range(kk):
                acc = acc + a[i, k] * b[k, j]
            out[i, j] = acc
    return out


def softmax_rows_f32(cnp.ndarray[cnp.float32_t, ndim=2] a):
    cdef Py_ssize_t m = a.shape[0], n = a.shape[1]
    cdef cnp.ndarray[cnp.float32_t, ndim=2] out = np.empty((m, n), dtype=np.float32)
    cdef Py_ssize_t i, j
    cdef float mx, s, e
    for i in range(m):
        mx = a[i, 0]
        for j in range(1, n):
            if a[i, j] > mx:
                mx = a[i, j]
        s = 0.0
        for j in range(n):
            e = expf(a[i, j] - mx)
            out[i, j] = e
            s = s + e
        for j in range(n):
            out[i, j] = out[i, j] / s
    return out


def gelu_f32(cnp.ndarray[cnp.float32_t, ndim=1] x):
    cdef Py_ssize_t n = x.shape[0]
    cdef cnp.ndarray[cnp.float32_t, ndim=1] out = np.empty(n, dtype=np.float32)
    cdef Py_ssize_t i
    cdef float c = 0.70710678118654752440
    for i in range(n):
        out[i] = x[i] * 0.5 * (1.0 + erff(x[i] * c))
    return out


def gelu_grad_f32(cnp.ndarray[cnp.float32_t, ndim=1] x):
    # d/dx x*Phi(x) = Phi(x) + x*phi(x)
    cdef Py_ssize_t n = x.shape[0]
    cdef cnp.ndarray[cnp.float32_t, ndim=1] out = np.empty(n, dtype=np.float32)
    cdef Py_ssize_t i
    cdef float c = 0.70710678118654752440
    cdef float inv_sqrt2pi = 0.3989422804014327
    cdef float phi, cdf
    for i in range(n):
        cdf = 0.5 * (1.0 + erff(x[i] * c))
        phi = inv_sqrt2pi * expf(-0.5 * x[i] * x[i])
        out[i] = cdf + x[i] * phi
    return out


def relu_f32(cnp.ndarray[cnp.float32_t, ndim=1] x):
    cdef Py_ssize_t n = x.shape[0]
    cdef cnp.ndarray[cnp.float32_t, ndim=1] out = np.empty(n, dtype=np.float32)
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = x[i] if x[i] > 0.0 else 0.0
    return out


def relu_grad_f32(cnp.ndarray[cnp.float32_t, ndim=1] x):
    # derivative at 0 defined as 1
    cdef Py_ssize_t n = x.shape[0]
    cdef cnp.ndarray[cnp.float32_t, ndim=1] out = np.empty(n, dtype=np.float32)
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = 1.0 if x[i] >= 0.0 else 0.0
    return out

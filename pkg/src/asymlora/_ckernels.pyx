# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; hot-loop twin of ``_pykernels``.

Signatures, semantics, and floating-point evaluation order match the pure
Python fallback exactly (the build passes -ffp-contract=off so no FMA
contraction can change results). test_backends checks bit-identity.
"""

from cpython cimport array as carray
from libc.math cimport sqrt

import array

NAME = "compiled"

cdef carray.array _D = array.array("d", [])


def mm(double[::1] a, double[::1] b, Py_ssize_t m, Py_ssize_t k, Py_ssize_t n):
    cdef carray.array outa = carray.clone(_D, m * n, True)
    cdef double[::1] out = outa
    cdef Py_ssize_t i, t, j, ai, bt, oi
    cdef double aik
    with nogil:
        for i in range(m):
            ai = i * k
            oi = i * n
            for t in range(k):
                aik = a[ai + t]
                bt = t * n
                for j in range(n):
                    out[oi + j] += aik * b[bt + j]
    return outa


def transpose(double[::1] a, Py_ssize_t rows, Py_ssize_t cols):
    cdef carray.array outa = carray.clone(_D, rows * cols, False)
    cdef double[::1] out = outa
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(rows):
            for j in range(cols):
                out[j * rows + i] = a[i * cols + j]
    return outa


def add(double[::1] a, double[::1] b):
    cdef Py_ssize_t n = a.shape[0], i
    cdef carray.array outa = carray.clone(_D, n, False)
    cdef double[::1] out = outa
    with nogil:
        for i in range(n):
            out[i] = a[i] + b[i]
    return outa


def sub(double[::1] a, double[::1] b):
    cdef Py_ssize_t n = a.shape[0], i
    cdef carray.array outa = carray.clone(_D, n, False)
    cdef double[::1] out = outa
    with nogil:
        for i in range(n):
            out[i] = a[i] - b[i]
    return outa


def scale(double[::1] a, double s):
    cdef Py_ssize_t n = a.shape[0], i
    cdef carray.array outa = carray.clone(_D, n, False)
    cdef double[::1] out = outa
    with nogil:
        for i in range(n):
            out[i] = a[i] * s
    return outa


def axpy(double[::1] a, double s, double[::1] b):
    cdef Py_ssize_t n = a.shape[0], i
    cdef carray.array outa = carray.clone(_D, n, False)
    cdef double[::1] out = outa
    with nogil:
        for i in range(n):
            out[i] = a[i] + s * b[i]
    return outa


def add_bias(double[::1] a, double[::1] bias, Py_ssize_t rows, Py_ssize_t cols):
    cdef carray.array outa = carray.clone(_D, rows * cols, False)
    cdef double[::1] out = outa
    cdef Py_ssize_t i, j, base
    cdef double bi
    with nogil:
        for i in range(rows):
            bi = bias[i]
            base = i * cols
            for j in range(cols):
                out[base + j] = a[base + j] + bi
    return outa


def row_mean(double[::1] a, Py_ssize_t rows, Py_ssize_t cols):
    cdef carray.array outa = carray.clone(_D, rows, False)
    cdef double[::1] out = outa
    cdef Py_ssize_t i, j, base
    cdef double acc
    with nogil:
        for i in range(rows):
            acc = 0.0
            base = i * cols
            for j in range(cols):
                acc += a[base + j]
            out[i] = acc / cols
    return outa


def relu(double[::1] a):
    cdef Py_ssize_t n = a.shape[0], i
    cdef carray.array outa = carray.clone(_D, n, False)
    cdef double[::1] out = outa
    with nogil:
        for i in range(n):
            out[i] = a[i] if a[i] > 0.0 else 0.0
    return outa


def relu_bwd(double[::1] z, double[::1] g):
    cdef Py_ssize_t n = z.shape[0], i
    cdef carray.array outa = carray.clone(_D, n, False)
    cdef double[::1] out = outa
    with nogil:
        for i in range(n):
            out[i] = g[i] if z[i] > 0.0 else 0.0
    return outa


def sumsq(double[::1] a):
    cdef Py_ssize_t n = a.shape[0], i
    cdef double acc = 0.0
    with nogil:
        for i in range(n):
            acc += a[i] * a[i]
    return acc


def dot(double[::1] a, double[::1] b):
    cdef Py_ssize_t n = a.shape[0], i
    cdef double acc = 0.0
    with nogil:
        for i in range(n):
            acc += a[i] * b[i]
    return acc


def adam_step(double[::1] p, double[::1] g, double[::1] m, double[::1] v,
              double lr, double beta1, double beta2, double eps,
              double bc1, double bc2):
    cdef Py_ssize_t n = p.shape[0], i
    cdef carray.array outa = carray.clone(_D, n, False)
    cdef double[::1] out = outa
    cdef double omb1 = 1.0 - beta1
    cdef double omb2 = 1.0 - beta2
    cdef double gi, mi, vi
    with nogil:
        for i in range(n):
            gi = g[i]
            mi = beta1 * m[i] + omb1 * gi
            vi = beta2 * v[i] + omb2 * (gi * gi)
            m[i] = mi
            v[i] = vi
            out[i] = p[i] - lr * (mi / bc1) / (sqrt(vi / bc2) + eps)
    return outa


def sgd_step(double[::1] p, double[::1] g, double lr):
    cdef Py_ssize_t n = p.shape[0], i
    cdef carray.array outa = carray.clone(_D, n, False)
    cdef double[::1] out = outa
    with nogil:
        for i in range(n):
            out[i] = p[i] - lr * g[i]
    return outa

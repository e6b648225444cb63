# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. See ``_fallback.py`` for the reference semantics."""

import numpy as np
cimport numpy as cnp
from libc.math cimport log, sqrt, cos, sin, exp
from libc.stdint cimport uint64_t

cnp.import_array()

cdef uint64_t GAMMA = 0x9E3779B97F4A7C15ULL
cdef double TWO_PI = 6.283185307179586
cdef double INV_2_53 = 1.0 / 9007199254740992.0


cdef inline uint64_t _mix(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


def splitmix_block(uint64_t key, uint64_t start, Py_ssize_t n):
    cdef cnp.ndarray[cnp.uint64_t, ndim=1] out = np.empty(n, dtype=np.uint64)
    cdef uint64_t[::1] o = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            o[i] = _mix(key + (start + <uint64_t>i + 1) * GAMMA)
    return out


def uniform_block(uint64_t key, uint64_t start, Py_ssize_t n):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            o[i] = <double>(_mix(key + (start + <uint64_t>i + 1) * GAMMA) >> 11) * INV_2_53
    return out


def normal_block(uint64_t key, uint64_t start, Py_ssize_t n):
    cdef Py_ssize_t pairs = (n + 1) // 2
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(2 * pairs, dtype=np.float64)
    cdef double[::1] o = out
    cdef Py_ssize_t j
    cdef uint64_t c
    cdef double u1, u2, r, t
    with nogil:
        for j in range(pairs):
            c = start + 2 * <uint64_t>j
            u1 = <double>(_mix(key + (c + 1) * GAMMA) >> 11) * INV_2_53
            u2 = <double>(_mix(key + (c + 2) * GAMMA) >> 11) * INV_2_53
            r = sqrt(-2.0 * log(1.0 - u1))
            t = TWO_PI * u2
            o[2 * j] = r * cos(t)
            o[2 * j + 1] = r * sin(t)
    return out[:n]


def pairwise_sum(values):
    cdef double[::1] a = np.array(values, dtype=np.float64).ravel()
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t i, half
    if n == 0:
        return 0.0
    with nogil:
        # in-place level-wise reduction, same tree as the numpy fallback
        while n > 1:
            half = n // 2
            for i in range(half):
                a[i] = a[2 * i] + a[2 * i + 1]
            if n % 2:
                a[half] = a[n - 1]
                n = half + 1
            else:
                n = half
    return a[0]


def softmax_xent(logits, labels):
    cdef double[:, ::1] z = np.ascontiguousarray(logits, dtype=np.float64)
    cdef long[::1] y = np.ascontiguousarray(labels, dtype=np.int_)
    cdef Py_ssize_t n = z.shape[0], c = z.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] losses = np.empty(n, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] probs = np.empty((n, c), dtype=np.float64)
    cdef double[::1] lo = losses
    cdef double[:, ::1] p = probs
    cdef Py_ssize_t i, k
    cdef double m, s
    with nogil:
        for i in range(n):
            m = z[i, 0]
            for k in range(1, c):
                if z[i, k] > m:
                    m = z[i, k]
            s = 0.0
            for k in range(c):
                p[i, k] = exp(z[i, k] - m)
                s = s + p[i, k]
            for k in range(c):
                p[i, k] = p[i, k] / s
            lo[i] = log(s) + m - z[i, y[i]]
    return losses, probs

# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled direct 2D convolution kernels (hot inner loops)."""

import numpy as np

cimport cython

BACKEND = "compiled"


def conv_valid_direct(a, b):
    """Valid linear convolution of a with b; requires a >= b in both dims."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    cdef double[:, ::1] av = a
    cdef double[:, ::1] bv = b
    cdef Py_ssize_t p1 = bv.shape[0], p2 = bv.shape[1]
    cdef Py_ssize_t o1 = av.shape[0] - p1 + 1
    cdef Py_ssize_t o2 = av.shape[1] - p2 + 1
    out = np.zeros((o1, o2))
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i, j, u, v
    cdef double acc
    with nogil:
        for i in range(o1):
            for j in range(o2):
                acc = 0.0
                for u in range(p1):
                    for v in range(p2):
                        acc += bv[u, v] * av[i + p1 - 1 - u, j + p2 - 1 - v]
                ov[i, j] = acc
    return out

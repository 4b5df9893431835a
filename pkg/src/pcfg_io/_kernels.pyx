# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled span kernels; same contract as the numpy fallback.

Each routine fills every span of one offset ``ell`` of an ``(L, L, N)``
chart in place.  The inner loops first fold the splits (or siblings) into
an ``N x N`` pair table, then contract the table against the rule tensor.
"""

from libc.stdlib cimport malloc, free
from libc.string cimport memset


def inside_span(double[:, :, ::1] alpha, const double[:, :, ::1] rules, Py_ssize_t ell,
                const double[::1] split_w, const double[::1] keep):
    cdef Py_ssize_t L = alpha.shape[0]
    cdef Py_ssize_t N = alpha.shape[2]
    cdef Py_ssize_t n_in = rules.shape[0]
    cdef Py_ssize_t i, j, t, a, b, c
    cdef double lb, w, acc
    cdef double *pair = <double *> malloc(N * N * sizeof(double))
    if pair == NULL:
        raise MemoryError()
    with nogil:
        for i in range(L - ell):
            j = i + ell
            memset(pair, 0, N * N * sizeof(double))
            for t in range(ell):
                w = split_w[t]
                if w == 0.0:
                    continue
                for b in range(N):
                    lb = alpha[i, i + t, b]
                    if lb == 0.0:
                        continue
                    lb = lb * w
                    for c in range(N):
                        pair[b * N + c] += lb * alpha[i + t + 1, j, c]
            for a in range(n_in):
                acc = 0.0
                for b in range(N):
                    for c in range(N):
                        acc += rules[a, b, c] * pair[b * N + c]
                alpha[i, j, a] = acc * keep[a]
    free(pair)


def outside_span(double[:, :, ::1] beta, const double[:, :, ::1] alpha,
                 const double[:, :, ::1] as_right, const double[:, :, ::1] as_left,
                 Py_ssize_t ell, const double[::1] sib_w, const double[::1] keep):
    cdef Py_ssize_t L = alpha.shape[0]
    cdef Py_ssize_t N = alpha.shape[2]
    cdef Py_ssize_t n_in = as_right.shape[1]
    cdef Py_ssize_t i, j, c, a, b, s
    cdef double pb, w, acc
    cdef double *left = <double *> malloc(n_in * N * sizeof(double))
    cdef double *right = <double *> malloc(n_in * N * sizeof(double))
    if left == NULL or right == NULL:
        free(left)
        free(right)
        raise MemoryError()
    with nogil:
        for i in range(L - ell):
            j = i + ell
            memset(left, 0, n_in * N * sizeof(double))
            memset(right, 0, n_in * N * sizeof(double))
            for c in range(1, L - ell):
                w = sib_w[c - 1]
                if w == 0.0:
                    continue
                if i >= c:
                    for b in range(n_in):
                        pb = beta[i - c, j, b]
                        if pb == 0.0:
                            continue
                        pb = pb * w
                        for s in range(N):
                            left[b * N + s] += pb * alpha[i - c, i - 1, s]
                if j + c < L:
                    for b in range(n_in):
                        pb = beta[i, j + c, b]
                        if pb == 0.0:
                            continue
                        pb = pb * w
                        for s in range(N):
                            right[b * N + s] += pb * alpha[j + 1, j + c, s]
            for a in range(N):
                acc = 0.0
                for b in range(n_in):
                    for s in range(N):
                        acc += as_right[a, b, s] * left[b * N + s]
                        acc += as_left[a, b, s] * right[b * N + s]
                beta[i, j, a] = acc * keep[a]
    free(left)
    free(right)

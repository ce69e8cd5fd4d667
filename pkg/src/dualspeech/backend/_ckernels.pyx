# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: layer norm, masked softmax, conv1d, scatter-add.

Same function signatures and semantics as ``numpy_kernels``; single
threaded so results are deterministic.  Matrix products stay on numpy's
BLAS path, these kernels cover the fused elementwise/reduction loops
that dominate graph overhead at small model sizes.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, sqrt, INFINITY

cnp.import_array()

NAME = "compiled"


def layer_norm_fwd(cnp.ndarray[double, ndim=2] x,
                   cnp.ndarray[double, ndim=1] gamma,
                   cnp.ndarray[double, ndim=1] beta,
                   double eps):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    cdef cnp.ndarray[double, ndim=2] y = np.empty((n, d))
    cdef cnp.ndarray[double, ndim=1] mean = np.empty(n)
    cdef cnp.ndarray[double, ndim=1] rstd = np.empty(n)
    cdef Py_ssize_t i, j
    cdef double s, v, m, r, dev
    for i in range(n):
        s = 0.0
        for j in range(d):
            s += x[i, j]
        m = s / d
        v = 0.0
        for j in range(d):
            dev = x[i, j] - m
            v += dev * dev
        r = 1.0 / sqrt(v / d + eps)
        mean[i] = m
        rstd[i] = r
        for j in range(d):
            y[i, j] = (x[i, j] - m) * r * gamma[j] + beta[j]
    return y, mean, rstd


def layer_norm_bwd(cnp.ndarray[double, ndim=2] dy,
                   cnp.ndarray[double, ndim=2] x,
                   cnp.ndarray[double, ndim=1] gamma,
                   cnp.ndarray[double, ndim=1] mean,
                   cnp.ndarray[double, ndim=1] rstd):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    cdef cnp.ndarray[double, ndim=2] dx = np.empty((n, d))
    cdef cnp.ndarray[double, ndim=1] dgamma = np.zeros(d)
    cdef cnp.ndarray[double, ndim=1] dbeta = np.zeros(d)
    cdef Py_ssize_t i, j
    cdef double m, r, xhat, dyg, s1, s2
    for i in range(n):
        m = mean[i]
        r = rstd[i]
        s1 = 0.0
        s2 = 0.0
        for j in range(d):
            xhat = (x[i, j] - m) * r
            dyg = dy[i, j] * gamma[j]
            dgamma[j] += dy[i, j] * xhat
            dbeta[j] += dy[i, j]
            s1 += dyg
            s2 += dyg * xhat
        s1 /= d
        s2 /= d
        for j in range(d):
            xhat = (x[i, j] - m) * r
            dx[i, j] = r * (dy[i, j] * gamma[j] - s1 - xhat * s2)
    return dx, dgamma, dbeta


def masked_softmax_fwd(cnp.ndarray[double, ndim=2] scores, mask):
    cdef Py_ssize_t n = scores.shape[0], k = scores.shape[1]
    cdef cnp.ndarray[double, ndim=2] p = np.empty((n, k))
    cdef cnp.ndarray[cnp.uint8_t, ndim=2] msk
    cdef bint has_mask = mask is not None
    if has_mask:
        msk = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef Py_ssize_t i, j
    cdef double m, s, e
    for i in range(n):
        m = -INFINITY
        for j in range(k):
            if (not has_mask or msk[i, j]) and scores[i, j] > m:
                m = scores[i, j]
        s = 0.0
        for j in range(k):
            if not has_mask or msk[i, j]:
                e = exp(scores[i, j] - m)
                p[i, j] = e
                s += e
            else:
                p[i, j] = 0.0
        for j in range(k):
            p[i, j] /= s
    return p


def masked_softmax_bwd(cnp.ndarray[double, ndim=2] dp,
                       cnp.ndarray[double, ndim=2] p):
    cdef Py_ssize_t n = p.shape[0], k = p.shape[1]
    cdef cnp.ndarray[double, ndim=2] ds = np.empty((n, k))
    cdef Py_ssize_t i, j
    cdef double inner
    for i in range(n):
        inner = 0.0
        for j in range(k):
            inner += dp[i, j] * p[i, j]
        for j in range(k):
            ds[i, j] = p[i, j] * (dp[i, j] - inner)
    return ds


def conv1d_fwd(cnp.ndarray[double, ndim=3] x,
               cnp.ndarray[double, ndim=3] w,
               cnp.ndarray[double, ndim=1] b):
    cdef Py_ssize_t bsz = x.shape[0], t = x.shape[1], ci = x.shape[2]
    cdef Py_ssize_t k = w.shape[0], co = w.shape[2]
    cdef Py_ssize_t pad = (k - 1) // 2
    cdef cnp.ndarray[double, ndim=3] y = np.empty((bsz, t, co))
    cdef Py_ssize_t n, i, tap, c, o
    cdef Py_ssize_t src
    cdef double acc
    for n in range(bsz):
        for i in range(t):
            for o in range(co):
                y[n, i, o] = b[o]
            for tap in range(k):
                src = i + tap - pad
                if src < 0 or src >= t:
                    continue
                for c in range(ci):
                    acc = x[n, src, c]
                    if acc == 0.0:
                        continue
                    for o in range(co):
                        y[n, i, o] += acc * w[tap, c, o]
    return y


def conv1d_bwd(cnp.ndarray[double, ndim=3] dy,
               cnp.ndarray[double, ndim=3] x,
               cnp.ndarray[double, ndim=3] w):
    cdef Py_ssize_t bsz = x.shape[0], t = x.shape[1], ci = x.shape[2]
    cdef Py_ssize_t k = w.shape[0], co = w.shape[2]
    cdef Py_ssize_t pad = (k - 1) // 2
    cdef cnp.ndarray[double, ndim=3] dx = np.zeros((bsz, t, ci))
    cdef cnp.ndarray[double, ndim=3] dw = np.zeros((k, ci, co))
    cdef cnp.ndarray[double, ndim=1] db = np.zeros(co)
    cdef Py_ssize_t n, i, tap, c, o, src
    cdef double g, xv
    for n in range(bsz):
        for i in range(t):
            for o in range(co):
                db[o] += dy[n, i, o]
            for tap in range(k):
                src = i + tap - pad
                if src < 0 or src >= t:
                    continue
                for c in range(ci):
                    xv = x[n, src, c]
                    g = 0.0
                    for o in range(co):
                        g += dy[n, i, o] * w[tap, c, o]
                        dw[tap, c, o] += dy[n, i, o] * xv
                    dx[n, src, c] += g
    return dx, dw, db


def scatter_add_rows(cnp.ndarray[double, ndim=2] out,
                     cnp.ndarray[cnp.int64_t, ndim=1] ids,
                     cnp.ndarray[double, ndim=2] dy):
    cdef Py_ssize_t n = ids.shape[0], d = out.shape[1]
    cdef Py_ssize_t i, j, row
    for i in range(n):
        row = ids[i]
        for j in range(d):
            out[row, j] += dy[i, j]
    return out

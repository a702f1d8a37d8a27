# Compiled kernel core: plain typed loops over float64 buffers.
# Mirrors protodiff.backend.reference; the dispatcher in __init__ overlays
# these over the reference module, so only the hot kernels live here.

import numpy as np

from libc.math cimport exp as c_exp, log as c_log, log1p as c_log1p
from libc.math cimport sqrt as c_sqrt, tanh as c_tanh, fabs
from libc.stdint cimport int64_t

NAME = "compiled"


def matmul(double[:, ::1] a, double[:, ::1] b):
    cdef Py_ssize_t m = a.shape[0], k = a.shape[1], n = b.shape[1]
    out = np.zeros((m, n))
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j, p
    cdef double aip
    with nogil:
        for i in range(m):
            for p in range(k):
                aip = a[i, p]
                for j in range(n):
                    o[i, j] += aip * b[p, j]
    return out


def matmul_nt(double[:, ::1] a, double[:, ::1] b):
    # a @ b.T, b given as [n, k]
    cdef Py_ssize_t m = a.shape[0], k = a.shape[1], n = b.shape[0]
    out = np.empty((m, n))
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j, p
    cdef double acc
    with nogil:
        for i in range(m):
            for j in range(n):
                acc = 0.0
                for p in range(k):
                    acc += a[i, p] * b[j, p]
                o[i, j] = acc
    return out


def matmul_tn(double[:, ::1] a, double[:, ::1] b):
    # a.T @ b, a given as [k, m]
    cdef Py_ssize_t k = a.shape[0], m = a.shape[1], n = b.shape[1]
    out = np.zeros((m, n))
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j, p
    cdef double api
    with nogil:
        for p in range(k):
            for i in range(m):
                api = a[p, i]
                for j in range(n):
                    o[i, j] += api * b[p, j]
    return out


def matmul_rowstable(double[:, ::1] a, double[:, ::1] b):
    # the loop matmul accumulates each row independently already
    return matmul(a, b)


def ewise_add(double[::1] a, double[::1] b):
    cdef Py_ssize_t n = a.shape[0], i
    out = np.empty(n)
    cdef double[::1] o = out
    for i in range(n):
        o[i] = a[i] + b[i]
    return out


def ewise_sub(double[::1] a, double[::1] b):
    cdef Py_ssize_t n = a.shape[0], i
    out = np.empty(n)
    cdef double[::1] o = out
    for i in range(n):
        o[i] = a[i] - b[i]
    return out


def ewise_mul(double[::1] a, double[::1] b):
    cdef Py_ssize_t n = a.shape[0], i
    out = np.empty(n)
    cdef double[::1] o = out
    for i in range(n):
        o[i] = a[i] * b[i]
    return out


def scalar_add(double[::1] a, double s):
    cdef Py_ssize_t n = a.shape[0], i
    out = np.empty(n)
    cdef double[::1] o = out
    for i in range(n):
        o[i] = a[i] + s
    return out


def scalar_mul(double[::1] a, double s):
    cdef Py_ssize_t n = a.shape[0], i
    out = np.empty(n)
    cdef double[::1] o = out
    for i in range(n):
        o[i] = a[i] * s
    return out


def rowvec_add(double[:, ::1] a, double[::1] v):
    cdef Py_ssize_t m = a.shape[0], n = a.shape[1], i, j
    out = np.empty((m, n))
    cdef double[:, ::1] o = out
    for i in range(m):
        for j in range(n):
            o[i, j] = a[i, j] + v[j]
    return out


def rowvec_mul(double[:, ::1] a, double[::1] v):
    cdef Py_ssize_t m = a.shape[0], n = a.shape[1], i, j
    out = np.empty((m, n))
    cdef double[:, ::1] o = out
    for i in range(m):
        for j in range(n):
            o[i, j] = a[i, j] * v[j]
    return out


def relu(double[::1] x):
    cdef Py_ssize_t n = x.shape[0], i
    out = np.empty(n)
    cdef double[::1] o = out
    for i in range(n):
        o[i] = x[i] if x[i] > 0.0 else 0.0
    return out


def relu_grad(double[::1] x, double[::1] g):
    cdef Py_ssize_t n = x.shape[0], i
    out = np.empty(n)
    cdef double[::1] o = out
    for i in range(n):
        o[i] = g[i] if x[i] > 0.0 else 0.0
    return out


def tanh(double[::1] x):
    cdef Py_ssize_t n = x.shape[0], i
    out = np.empty(n)
    cdef double[::1] o = out
    for i in range(n):
        o[i] = c_tanh(x[i])
    return out


def tanh_grad(double[::1] y, double[::1] g):
    cdef Py_ssize_t n = y.shape[0], i
    out = np.empty(n)
    cdef double[::1] o = out
    for i in range(n):
        o[i] = g[i] * (1.0 - y[i] * y[i])
    return out


cdef inline double _sigmoid(double v) nogil:
    cdef double e
    if v >= 0.0:
        return 1.0 / (1.0 + c_exp(-v))
    e = c_exp(v)
    return e / (1.0 + e)


def sigmoid(double[::1] x):
    cdef Py_ssize_t n = x.shape[0], i
    out = np.empty(n)
    cdef double[::1] o = out
    for i in range(n):
        o[i] = _sigmoid(x[i])
    return out


def sigmoid_grad(double[::1] y, double[::1] g):
    cdef Py_ssize_t n = y.shape[0], i
    out = np.empty(n)
    cdef double[::1] o = out
    for i in range(n):
        o[i] = g[i] * y[i] * (1.0 - y[i])
    return out


def softplus(double[::1] x):
    cdef Py_ssize_t n = x.shape[0], i
    out = np.empty(n)
    cdef double[::1] o = out
    cdef double v
    for i in range(n):
        v = x[i]
        o[i] = (v if v > 0.0 else 0.0) + c_log1p(c_exp(-fabs(v)))
    return out


def softplus_grad(double[::1] x, double[::1] g):
    cdef Py_ssize_t n = x.shape[0], i
    out = np.empty(n)
    cdef double[::1] o = out
    for i in range(n):
        o[i] = g[i] * _sigmoid(x[i])
    return out


def log(double[::1] x):
    cdef Py_ssize_t n = x.shape[0], i
    out = np.empty(n)
    cdef double[::1] o = out
    for i in range(n):
        o[i] = c_log(x[i])
    return out


def log_grad(double[::1] x, double[::1] g):
    cdef Py_ssize_t n = x.shape[0], i
    out = np.empty(n)
    cdef double[::1] o = out
    for i in range(n):
        o[i] = g[i] / x[i]
    return out


def softmax_rows(double[:, ::1] x):
    cdef Py_ssize_t m = x.shape[0], n = x.shape[1], i, j
    out = np.empty((m, n))
    cdef double[:, ::1] o = out
    cdef double mx, s
    for i in range(m):
        mx = x[i, 0]
        for j in range(1, n):
            if x[i, j] > mx:
                mx = x[i, j]
        s = 0.0
        for j in range(n):
            o[i, j] = c_exp(x[i, j] - mx)
            s += o[i, j]
        for j in range(n):
            o[i, j] /= s
    return out


def softmax_grad_rows(double[:, ::1] y, double[:, ::1] g):
    cdef Py_ssize_t m = y.shape[0], n = y.shape[1], i, j
    out = np.empty((m, n))
    cdef double[:, ::1] o = out
    cdef double s
    for i in range(m):
        s = 0.0
        for j in range(n):
            s += g[i, j] * y[i, j]
        for j in range(n):
            o[i, j] = y[i, j] * (g[i, j] - s)
    return out


def log_softmax_rows(double[:, ::1] x):
    cdef Py_ssize_t m = x.shape[0], n = x.shape[1], i, j
    out = np.empty((m, n))
    cdef double[:, ::1] o = out
    cdef double mx, s
    for i in range(m):
        mx = x[i, 0]
        for j in range(1, n):
            if x[i, j] > mx:
                mx = x[i, j]
        s = 0.0
        for j in range(n):
            s += c_exp(x[i, j] - mx)
        s = c_log(s)
        for j in range(n):
            o[i, j] = x[i, j] - mx - s
    return out


def log_softmax_grad_rows(double[:, ::1] y, double[:, ::1] g):
    cdef Py_ssize_t m = y.shape[0], n = y.shape[1], i, j
    out = np.empty((m, n))
    cdef double[:, ::1] o = out
    cdef double s
    for i in range(m):
        s = 0.0
        for j in range(n):
            s += g[i, j]
        for j in range(n):
            o[i, j] = g[i, j] - c_exp(y[i, j]) * s
    return out


def layernorm_rows(double[:, ::1] x, double eps):
    cdef Py_ssize_t m = x.shape[0], n = x.shape[1], i, j
    out = np.empty((m, n))
    rstd_out = np.empty(m)
    cdef double[:, ::1] o = out
    cdef double[::1] r = rstd_out
    cdef double mean, var, d
    for i in range(m):
        mean = 0.0
        for j in range(n):
            mean += x[i, j]
        mean /= n
        var = 0.0
        for j in range(n):
            d = x[i, j] - mean
            var += d * d
        var /= n
        r[i] = 1.0 / c_sqrt(var + eps)
        for j in range(n):
            o[i, j] = (x[i, j] - mean) * r[i]
    return out, rstd_out


def layernorm_grad_rows(double[:, ::1] xhat, double[::1] rstd, double[:, ::1] g):
    cdef Py_ssize_t m = xhat.shape[0], n = xhat.shape[1], i, j
    out = np.empty((m, n))
    cdef double[:, ::1] o = out
    cdef double gm, gx
    for i in range(m):
        gm = 0.0
        gx = 0.0
        for j in range(n):
            gm += g[i, j]
            gx += g[i, j] * xhat[i, j]
        gm /= n
        gx /= n
        for j in range(n):
            o[i, j] = (g[i, j] - gm - xhat[i, j] * gx) * rstd[i]
    return out


def sum_all(double[::1] x):
    cdef Py_ssize_t n = x.shape[0], i
    cdef double s = 0.0
    for i in range(n):
        s += x[i]
    return s


def sum_leading(double[:, ::1] a):
    cdef Py_ssize_t m = a.shape[0], n = a.shape[1], i, j
    out = np.zeros(n)
    cdef double[::1] o = out
    for i in range(m):
        for j in range(n):
            o[j] += a[i, j]
    return out


def sqdist_assign(double[:, ::1] points, double[:, ::1] centroids):
    cdef Py_ssize_t n = points.shape[0], d = points.shape[1]
    cdef Py_ssize_t k = centroids.shape[0]
    labels_out = np.empty(n, dtype=np.int64)
    dists_out = np.empty(n)
    cdef int64_t[::1] lab = labels_out
    cdef double[::1] dist = dists_out
    cdef Py_ssize_t i, c, j
    cdef double best, acc, diff
    cdef Py_ssize_t best_c
    with nogil:
        for i in range(n):
            best = -1.0
            best_c = 0
            for c in range(k):
                acc = 0.0
                for j in range(d):
                    diff = points[i, j] - centroids[c, j]
                    acc += diff * diff
                if best < 0.0 or acc < best:
                    best = acc
                    best_c = c
            lab[i] = best_c
            dist[i] = best
    return labels_out, dists_out


def centroid_update(double[:, ::1] points, int64_t[::1] labels, Py_ssize_t k):
    cdef Py_ssize_t n = points.shape[0], d = points.shape[1], i, j
    sums_out = np.zeros((k, d))
    counts_out = np.zeros(k, dtype=np.int64)
    cdef double[:, ::1] s = sums_out
    cdef int64_t[::1] cnt = counts_out
    cdef int64_t c
    with nogil:
        for i in range(n):
            c = labels[i]
            cnt[c] += 1
            for j in range(d):
                s[c, j] += points[i, j]
    return sums_out, counts_out

"""Numpy reference implementations of the kernel API.

Used when the compiled core (`protodiff.backend._fastcore`) is not built,
or when PROTODIFF_BACKEND=python forces it. Every function here must agree
with its compiled counterpart to float64 round-off.
"""

import numpy as np

NAME = "python"


def matmul(a, b):
    return np.matmul(a, b)


def matmul_nt(a, b):
    # a @ b.T
    return np.matmul(a, b.T)


def matmul_tn(a, b):
    # a.T @ b
    return np.matmul(a.T, b)


def matmul_rowstable(a, b):
    """a @ b with each output row computed independently of the others.

    BLAS gemm may round a row differently depending on its position in the
    matrix (blocked micro-kernels); per-row gemv does not. Required where a
    bit-exact result under row permutation is part of the contract.
    """
    out = np.empty((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        out[i] = a[i] @ b
    return out


def ewise_add(a, b):
    return a + b


def ewise_sub(a, b):
    return a - b


def ewise_mul(a, b):
    return a * b


def scalar_add(a, s):
    return a + s


def scalar_mul(a, s):
    return a * s


def rowvec_add(a, v):
    return a + v


def rowvec_mul(a, v):
    return a * v


def relu(x):
    return np.maximum(x, 0.0)


def relu_grad(x, g):
    return np.where(x > 0.0, g, 0.0)


def tanh(x):
    return np.tanh(x)


def tanh_grad(y, g):
    # y = tanh(x)
    return g * (1.0 - y * y)


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_grad(y, g):
    # y = sigmoid(x)
    return g * y * (1.0 - y)


def softplus(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def softplus_grad(x, g):
    return g * sigmoid(x)


def log(x):
    return np.log(x)


def log_grad(x, g):
    return g / x

def softmax_rows(x):
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=1, keepdims=True)


def softmax_grad_rows(y, g):
    # y = softmax(x); dx = y * (g - sum(g * y, axis=1))
    s = (g * y).sum(axis=1, keepdims=True)
    return y * (g - s)


def log_softmax_rows(x):
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    return (x - m) - np.log(e.sum(axis=1, keepdims=True))


def log_softmax_grad_rows(y, g):
    # y = log_softmax(x); dx = g - exp(y) * sum(g, axis=1)
    s = g.sum(axis=1, keepdims=True)
    return g - np.exp(y) * s


def layernorm_rows(x, eps):
    mean = x.mean(axis=1, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * rstd
    return xhat, rstd[:, 0].copy()


def layernorm_grad_rows(xhat, rstd, g):
    # dx = rstd * (g - mean(g) - xhat * mean(g * xhat))
    n = xhat.shape[1]
    gm = g.mean(axis=1, keepdims=True)
    gx = (g * xhat).sum(axis=1, keepdims=True) / n
    return (g - gm - xhat * gx) * rstd[:, None]


def sum_all(x):
    return float(np.sum(x))


def sum_leading(a):
    # column sums of a 2-d view; the broadcast adjoint
    return a.sum(axis=0)


def sqdist_assign(points, centroids):
    """Nearest centroid per point under squared Euclidean distance.

    Ties resolve to the lowest centroid index. Returns (labels, sqdists).
    """
    n = points.shape[0]
    labels = np.empty(n, dtype=np.int64)
    dists = np.empty(n)
    # chunked to bound the n*k temporary
    step = max(1, 2_000_000 // max(1, centroids.shape[0]))
    for lo in range(0, n, step):
        hi = min(n, lo + step)
        d = ((points[lo:hi, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        labels[lo:hi] = d.argmin(axis=1)
        dists[lo:hi] = d[np.arange(hi - lo), labels[lo:hi]]
    return labels, dists


def centroid_update(points, labels, k):
    """Per-cluster coordinate sums and member counts."""
    d = points.shape[1]
    sums = np.zeros((k, d))
    np.add.at(sums, labels, points)
    counts = np.bincount(labels, minlength=k).astype(np.int64)
    return sums, counts

"""Dense float64 tensors with reverse-mode automatic differentiation.

The tape is implicit: every tracked operation stamps its result with a
monotonically increasing sequence number, so creation order is already a
topological order of the graph. `backward` gathers the nodes reachable from
the loss, replays them in reverse sequence order, and visits each exactly
once, accumulating adjoints into the `grad` buffer of every requires_grad
leaf. Repeated backward calls accumulate (callers reset grads).

Numeric kernels are delegated to `protodiff.backend` (compiled core when
built, numpy reference otherwise). Tensors are treated as immutable after
construction except for optimizer updates to parameter leaves.
"""

import itertools

import numpy as np

from .backend import kernels as K
from .errors import ContractError, NumericError, ShapeError

FINITE_CHECKS = True

_SEQ = itertools.count()


def _check_finite(arr, what):
    if FINITE_CHECKS and not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {what}")


class _Ctx:
    """Backward record: parent tensors and the adjoint function."""

    __slots__ = ("parents", "backward")

    def __init__(self, parents, backward):
        self.parents = parents
        self.backward = backward


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_ctx", "_seq")

    def __init__(self, data, requires_grad=False):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        _check_finite(arr, "tensor data")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._ctx = None
        self._seq = next(_SEQ)

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(()))

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _result(data, parents, backward):
        out = Tensor.__new__(Tensor)
        arr = np.ascontiguousarray(data, dtype=np.float64)
        _check_finite(arr, "operation result")
        out.data = arr
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        out._ctx = _Ctx(parents, backward) if out.requires_grad else None
        out._seq = next(_SEQ)
        return out

    def backward(self):
        if self.data.size != 1:
            raise ContractError(
                f"backward requires a scalar loss, got shape {self.data.shape}"
            )
        if self._ctx is None and not self.requires_grad:
            raise ContractError("loss is not on the tape (nothing requires grad)")
        # gather the reachable subgraph; sequence ids give topological order
        nodes = []
        seen = {id(self)}
        stack = [self]
        while stack:
            node = stack.pop()
            nodes.append(node)
            if node._ctx is not None:
                for p in node._ctx.parents:
                    if id(p) not in seen:
                        seen.add(id(p))
                        stack.append(p)
        nodes.sort(key=lambda t: t._seq, reverse=True)
        adjoint = {id(self): np.ones_like(self.data)}
        for node in nodes:
            g = adjoint.pop(id(node), None)
            if g is None:
                continue
            if node._ctx is None:
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._ctx.parents, node._ctx.backward(g)):
                if pg is None:
                    continue
                prev = adjoint.get(id(parent))
                adjoint[id(parent)] = pg if prev is None else prev + pg

    # -- elementwise arithmetic ---------------------------------------------

    def _binary(self, other, kind):
        if isinstance(other, (int, float)):
            return _scalar_op(self, float(other), kind)
        if not isinstance(other, Tensor):
            return NotImplemented
        a, b = self, other
        if a.shape == b.shape:
            return _ewise_op(a, b, kind)
        if b.size == 1:
            return _scalar_tensor_op(a, b, kind)
        if a.size == 1:
            # add and mul are commutative
            return _scalar_tensor_op(b, a, kind)
        if len(b.shape) < len(a.shape) and a.shape[-len(b.shape):] == b.shape:
            return _rowvec_op(a, b, kind)
        if len(a.shape) < len(b.shape) and b.shape[-len(a.shape):] == a.shape:
            if kind == "add":
                return _rowvec_op(b, a, "add")
            if kind == "mul":
                return _rowvec_op(b, a, "mul")
        raise ShapeError(f"incompatible shapes {a.shape} and {b.shape}")

    def __add__(self, other):
        return self._binary(other, "add")

    __radd__ = __add__

    def __mul__(self, other):
        return self._binary(other, "mul")

    __rmul__ = __mul__

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return _scalar_op(self, -float(other), "add")
        return self._binary(_neg(other), "add")

    def __rsub__(self, other):
        return _neg(self)._binary(other, "add")

    def __neg__(self):
        return _neg(self)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return _scalar_op(self, 1.0 / float(other), "mul")
        return NotImplemented

    def __matmul__(self, other):
        return matmul(self, other)

    # -- activations and shape ops (method sugar) ---------------------------

    def relu(self):
        return relu(self)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def softplus(self):
        return softplus(self)

    def log(self):
        return log(self)

    def softmax(self):
        return softmax(self)

    def log_softmax(self):
        return log_softmax(self)

    def layernorm(self, eps=1e-5):
        return layernorm(self, eps)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self):
        return transpose(self)


def _flat(t):
    return t.data.reshape(-1)


def _neg(t):
    if not isinstance(t, Tensor):
        raise ShapeError(f"expected Tensor, got {type(t)!r}")
    data = K.scalar_mul(_flat(t), -1.0).reshape(t.shape)
    return Tensor._result(data, (t,), lambda g: (-g,))


def _ewise_op(a, b, kind):
    if kind == "add":
        data = K.ewise_add(_flat(a), _flat(b)).reshape(a.shape)
        return Tensor._result(data, (a, b), lambda g: (g, g))
    data = K.ewise_mul(_flat(a), _flat(b)).reshape(a.shape)

    def back(g):
        return (
            K.ewise_mul(g.reshape(-1), _flat(b)).reshape(a.shape),
            K.ewise_mul(g.reshape(-1), _flat(a)).reshape(b.shape),
        )

    return Tensor._result(data, (a, b), back)


def _scalar_op(t, s, kind):
    if kind == "add":
        data = K.scalar_add(_flat(t), s).reshape(t.shape)
        return Tensor._result(data, (t,), lambda g: (g,))
    data = K.scalar_mul(_flat(t), s).reshape(t.shape)
    return Tensor._result(data, (t,), lambda g: (g * s,))


def _scalar_tensor_op(a, b, kind):
    # b holds a single element but stays on the tape
    s = float(b.data.reshape(-1)[0])
    if kind == "add":
        data = K.scalar_add(_flat(a), s).reshape(a.shape)

        def back(g):
            return g, np.full(b.shape, g.sum())

        return Tensor._result(data, (a, b), back)
    data = K.scalar_mul(_flat(a), s).reshape(a.shape)

    def back(g):
        return g * s, np.full(b.shape, float((g.reshape(-1) * _flat(a)).sum()))

    return Tensor._result(data, (a, b), back)


def _rowvec_op(a, b, kind):
    a2d = a.data.reshape(-1, b.size)
    v = _flat(b)
    if kind == "add":
        data = K.rowvec_add(a2d, v).reshape(a.shape)

        def back(g):
            return g, K.sum_leading(g.reshape(-1, b.size)).reshape(b.shape)

        return Tensor._result(data, (a, b), back)
    data = K.rowvec_mul(a2d, v).reshape(a.shape)

    def back(g):
        ga = K.rowvec_mul(g.reshape(-1, b.size), v).reshape(a.shape)
        gb = K.sum_leading(
            K.ewise_mul(g.reshape(-1), _flat(a)).reshape(-1, b.size)
        ).reshape(b.shape)
        return ga, gb

    return Tensor._result(data, (a, b), back)


# -- matrix multiply ---------------------------------------------------------


def _matmul_impl(a, b, kernel):
    if len(a.shape) != 2 or len(b.shape) != 2:
        raise ShapeError(f"matmul needs 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} vs {b.shape}")
    data = kernel(a.data, b.data)

    def back(g):
        return K.matmul_nt(g, b.data), K.matmul_tn(a.data, g)

    return Tensor._result(data, (a, b), back)


def matmul(a, b):
    return _matmul_impl(a, b, K.matmul)


def matmul_rowstable(a, b):
    """Matrix product whose output rows are bit-identical under row
    permutation of `a`; used where that is part of the contract (MIL bags)."""
    return _matmul_impl(a, b, K.matmul_rowstable)


# -- unary kernels -----------------------------------------------------------


def relu(t):
    data = K.relu(_flat(t)).reshape(t.shape)
    return Tensor._result(
        data, (t,), lambda g: (K.relu_grad(_flat(t), g.reshape(-1)).reshape(t.shape),)
    )


def tanh(t):
    data = K.tanh(_flat(t)).reshape(t.shape)
    return Tensor._result(
        data,
        (t,),
        lambda g: (K.tanh_grad(data.reshape(-1), g.reshape(-1)).reshape(t.shape),),
    )


def sigmoid(t):
    data = K.sigmoid(_flat(t)).reshape(t.shape)
    return Tensor._result(
        data,
        (t,),
        lambda g: (K.sigmoid_grad(data.reshape(-1), g.reshape(-1)).reshape(t.shape),),
    )


def softplus(t):
    data = K.softplus(_flat(t)).reshape(t.shape)
    return Tensor._result(
        data,
        (t,),
        lambda g: (K.softplus_grad(_flat(t), g.reshape(-1)).reshape(t.shape),),
    )


def log(t):
    data = K.log(_flat(t)).reshape(t.shape)
    return Tensor._result(
        data, (t,), lambda g: (K.log_grad(_flat(t), g.reshape(-1)).reshape(t.shape),)
    )


def _rows(t):
    if t.data.ndim == 0:
        raise ShapeError(f"need at least 1-d input, got shape {t.shape}")
    return t.data.reshape(-1, t.shape[-1])


def softmax(t):
    y = K.softmax_rows(_rows(t))
    data = y.reshape(t.shape)

    def back(g):
        return (K.softmax_grad_rows(y, g.reshape(y.shape)).reshape(t.shape),)

    return Tensor._result(data, (t,), back)


def log_softmax(t):
    y = K.log_softmax_rows(_rows(t))
    data = y.reshape(t.shape)

    def back(g):
        return (K.log_softmax_grad_rows(y, g.reshape(y.shape)).reshape(t.shape),)

    return Tensor._result(data, (t,), back)


def layernorm(t, eps=1e-5):
    """Normalize over the last axis to zero mean and unit variance."""
    xhat, rstd = K.layernorm_rows(_rows(t), eps)
    data = xhat.reshape(t.shape)

    def back(g):
        return (K.layernorm_grad_rows(xhat, rstd, g.reshape(xhat.shape)).reshape(t.shape),)

    return Tensor._result(data, (t,), back)


# -- reductions and shape ops ------------------------------------------------


def sum_all(t):
    data = np.asarray(K.sum_all(_flat(t)))

    def back(g):
        return (np.full(t.shape, float(g.reshape(()))),)

    return Tensor._result(data, (t,), back)


def mean_all(t):
    n = t.size
    data = np.asarray(K.sum_all(_flat(t)) / n)

    def back(g):
        return (np.full(t.shape, float(g.reshape(())) / n),)

    return Tensor._result(data, (t,), back)


def reshape(t, shape):
    data = t.data.reshape(shape)

    def back(g):
        return (g.reshape(t.shape),)

    return Tensor._result(data, (t,), back)


def transpose(t):
    if len(t.shape) != 2:
        raise ShapeError(f"transpose needs a 2-d tensor, got {t.shape}")
    data = t.data.T

    def back(g):
        return (np.ascontiguousarray(g.T),)

    return Tensor._result(data, (t,), back)


def concat(tensors, axis=-1):
    tensors = tuple(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis if axis >= 0 else len(t.shape) + axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(
            np.ascontiguousarray(p) for p in np.split(g, offsets, axis=axis)
        )

    return Tensor._result(data, tensors, back)


def gather_rows(table, indices):
    """Differentiable row lookup (embedding select); adjoint scatter-adds."""
    idx = np.asarray(indices, dtype=np.int64)
    data = table.data[idx]

    def back(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return Tensor._result(data, (table,), back)


def gauss(shape, rng):
    """Gaussian sampling node: a constant leaf, not differentiable w.r.t.
    the noise."""
    return Tensor(rng.standard_normal(shape))


def constant(data):
    return Tensor(data)

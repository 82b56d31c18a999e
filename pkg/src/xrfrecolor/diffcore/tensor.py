"""Reverse-mode autodiff on numpy arrays.

A :class:`Tensor` remembers the tensors it was computed from and a closure
mapping its output gradient to parent gradients.  :class:`Tape` orders the
graph below a scalar output and runs those closures once each, in reverse
topological order.
"""
import contextlib

import numpy as np

_STATE = {"dtype": np.float32, "grad": True}


def default_dtype():
    return _STATE["dtype"]


def set_default_dtype(dtype):
    _STATE["dtype"] = np.dtype(dtype).type


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the dtype used for new parameters and constants."""
    old = _STATE["dtype"]
    _STATE["dtype"] = np.dtype({"double": np.float64, "single": np.float32}.get(dtype, dtype)).type
    try:
        yield
    finally:
        _STATE["dtype"] = old


@contextlib.contextmanager
def no_grad():
    old = _STATE["grad"]
    _STATE["grad"] = False
    try:
        yield
    finally:
        _STATE["grad"] = old


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "op", "__weakref__")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None, op="leaf"):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(_STATE["dtype"])
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op

    shape = property(lambda self: self.data.shape)
    ndim = property(lambda self: self.data.ndim)
    dtype = property(lambda self: self.data.dtype)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    def backward(self, grad=None):
        Tape.from_output(self).backward(grad)

    # arithmetic -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if dtype is not None or not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(dtype or _STATE["dtype"])
    return Tensor(arr)


def make(data, parents, backward_fn, op):
    """Create an op output; the graph edge is dropped when no parent needs grads."""
    if _STATE["grad"] and any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, backward_fn, op)
    return Tensor(data, op=op)


class Tape:
    """Nodes reachable from an output, in topological order."""

    def __init__(self, output, nodes):
        self.output = output
        self.nodes = nodes
        self.visits = {}

    @classmethod
    def from_output(cls, out):
        order, seen = [], set()
        stack = [(out, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        return cls(out, order)

    def backward(self, grad=None):
        out = self.output
        if grad is None:
            if out.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(out.data)
        grads = {id(out): np.asarray(grad, dtype=out.dtype)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            self.visits[id(node)] = self.visits.get(id(node), 0) + 1
            if g is None:
                continue
            if node.backward_fn is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
        return self


def unbroadcast(g, shape):
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _pair(a, b):
    a = as_tensor(a)
    b = as_tensor(b, a.dtype) if not isinstance(b, Tensor) else b
    return a, b


def add(a, b):
    a, b = _pair(a, b)
    return make(a.data + b.data, (a, b),
                lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)), "add")


def sub(a, b):
    a, b = _pair(a, b)
    return make(a.data - b.data, (a, b),
                lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)), "sub")


def mul(a, b):
    a, b = _pair(a, b)
    return make(a.data * b.data, (a, b),
                lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)), "mul")


def div(a, b):
    a, b = _pair(a, b)
    out = a.data / b.data
    return make(out, (a, b),
                lambda g: (unbroadcast(g / b.data, a.shape), unbroadcast(-g * out / b.data, b.shape)), "div")


def power(a, p):
    a = as_tensor(a)
    return make(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1),), "pow")


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return make(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    a = as_tensor(a)
    return make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)
    # subgradient 0 at the origin
    safe = np.where(out > 0, out, 1.0)
    return make(out, (a,), lambda g: (np.where(out > 0, g * 0.5 / safe, 0.0).astype(out.dtype),), "sqrt")


def maximum(a, b):
    """Elementwise max; ties send the gradient to ``a``."""
    a, b = _pair(a, b)
    pick = a.data >= b.data
    return make(np.where(pick, a.data, b.data), (a, b),
                lambda g: (unbroadcast(np.where(pick, g, 0), a.shape), unbroadcast(np.where(pick, 0, g), b.shape)),
                "maximum")


def where(cond, a, b):
    a, b = _pair(a, b)
    cond = np.asarray(cond, dtype=bool)
    return make(np.where(cond, a.data, b.data), (a, b),
                lambda g: (unbroadcast(np.where(cond, g, 0), a.shape), unbroadcast(np.where(cond, 0, g), b.shape)),
                "where")


def matmul(a, b):
    a, b = _pair(a, b)

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if b.ndim > 1 else np.multiply.outer(g, b.data)
        gb = np.swapaxes(a.data, -1, -2) @ g if a.ndim > 1 else np.multiply.outer(a.data, g)
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return make(a.data @ b.data, (a, b), back, "matmul")


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make(a.data.sum(axis=axis, keepdims=keepdims), (a,), back, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)
    return make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None):
    a = as_tensor(a)
    inv = None if axes is None else tuple(np.argsort(axes))
    return make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def getitem(a, idx):
    a = as_tensor(a)

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return make(a.data[idx], (a,), back, "getitem")


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
                lambda g: tuple(np.split(g, sizes, axis=axis)), "concat")


def shift2d(a, dy, dx):
    """Translate the last two axes by (dy, dx) with zero fill."""
    a = as_tensor(a)

    def _shift(x, sy, sx):
        out = np.zeros_like(x)
        H, W = x.shape[-2:]
        ys, yd = (slice(0, H - sy), slice(sy, H)) if sy >= 0 else (slice(-sy, H), slice(0, H + sy))
        xs, xd = (slice(0, W - sx), slice(sx, W)) if sx >= 0 else (slice(-sx, W), slice(0, W + sx))
        out[..., yd, xd] = x[..., ys, xs]
        return out

    return make(_shift(a.data, dy, dx), (a,), lambda g: (_shift(g, -dy, -dx),), "shift2d")


def pairwise_distance(z):
    """Euclidean distance matrix between rows; the gradient at coincident points is taken as 0."""
    z = as_tensor(z)
    diff = z.data[:, None, :] - z.data[None, :, :]
    d = np.sqrt((diff ** 2).sum(-1))
    safe = np.where(d > 0, d, 1.0)

    def back(g):
        w = np.where(d > 0, g / safe, 0.0)
        w = w + w.T
        return ((w[..., None] * diff).sum(axis=1),)

    return make(d, (z,), back, "pairwise_distance")

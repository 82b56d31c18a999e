"""Layers built on :mod:`.tensor`, plus the named parameter store."""
from collections import OrderedDict

import numpy as np
from scipy.special import erf

from .tensor import Tensor, as_tensor, default_dtype, make

SELU_ALPHA = 1.6732632423543772848170429916717
SELU_SCALE = 1.0507009873554804934193349852946


class ParamStore:
    """Ordered mapping of parameter name -> leaf :class:`Tensor`."""

    def __init__(self):
        self._params = OrderedDict()
        self._trainable = {}

    def add(self, name, value, trainable=True):
        if name in self._params:
            raise KeyError(f"parameter {name!r} already registered")
        t = Tensor(np.array(value, dtype=default_dtype()), requires_grad=trainable)
        self._params[name] = t
        self._trainable[name] = trainable
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def trainable(self):
        return [(n, p) for n, p in self._params.items() if self._trainable[n]]

    def count(self, trainable_only=True):
        return int(sum(p.data.size for n, p in self._params.items() if self._trainable[n] or not trainable_only))

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None

    def state(self):
        return OrderedDict((n, p.data.copy()) for n, p in self._params.items())

    def load_state(self, state, strict=True):
        for name, p in self._params.items():
            if name not in state:
                if strict:
                    raise KeyError(f"missing parameter {name!r}")
                continue
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"parameter {name!r}: shape {arr.shape} != expected {p.shape}")
            p.data = arr.astype(p.dtype)
        if strict:
            extra = set(state) - set(self._params)
            if extra:
                raise KeyError(f"unexpected parameters: {sorted(extra)}")

    def astype(self, dtype):
        for p in self._params.values():
            p.data = p.data.astype(dtype)
        return self


def lecun_normal(rng, fan_in, fan_out):
    return rng.normal(0.0, np.sqrt(1.0 / fan_in), size=(fan_in, fan_out))


def xavier_uniform(rng, fan_in, fan_out):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


def linear(x, W, b=None):
    out = as_tensor(x) @ W
    return out if b is None else out + b


def selu(x):
    x = as_tensor(x)
    neg = SELU_SCALE * SELU_ALPHA * np.expm1(np.minimum(x.data, 0))
    out = np.where(x.data > 0, SELU_SCALE * x.data, neg)
    dout = np.where(x.data > 0, SELU_SCALE, neg + SELU_SCALE * SELU_ALPHA).astype(x.dtype)
    return make(out.astype(x.dtype), (x,), lambda g: (g * dout,), "selu")


def gelu(x):
    """Exact GELU, ``x * Phi(x)``."""
    x = as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data / np.sqrt(2.0)))
    pdf = np.exp(-0.5 * x.data ** 2) / np.sqrt(2.0 * np.pi)
    return make((x.data * cdf).astype(x.dtype), (x,), lambda g: (g * (cdf + x.data * pdf),), "gelu")


def sigmoid(x):
    x = as_tensor(x)
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return make(out, (x,), lambda g: (g * out * (1 - out),), "sigmoid")


def softmax(x, axis=-1):
    x = as_tensor(x)
    m = np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make(out, (x,), back, "softmax")


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize over the last axis, then scale/shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def back(g):
        gx_hat = g * gain.data
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        red = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return make(xhat * gain.data + bias.data, (x, gain, bias), back, "layer_norm")


def _im2col3(x):
    # x: (B, C, H, W) -> (B, C*9, H*W), zero padding 1
    B, C, H, W = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = np.empty((B, C, 9, H, W), dtype=x.dtype)
    for ky in range(3):
        for kx in range(3):
            cols[:, :, ky * 3 + kx] = xp[:, :, ky:ky + H, kx:kx + W]
    return cols.reshape(B, C * 9, H * W)


def _col2im3(cols, shape):
    B, C, H, W = shape
    cols = cols.reshape(B, C, 9, H, W)
    xp = np.zeros((B, C, H + 2, W + 2), dtype=cols.dtype)
    for ky in range(3):
        for kx in range(3):
            xp[:, :, ky:ky + H, kx:kx + W] += cols[:, :, ky * 3 + kx]
    return xp[:, :, 1:-1, 1:-1]


def conv3x3(x, K, b=None):
    """3x3 cross-correlation, stride 1, zero padding 1; x is (C,H,W) or (B,C,H,W)."""
    x, K = as_tensor(x), as_tensor(K)
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    B, C, H, W = xd.shape
    if K.shape[1:] != (C, 3, 3):
        raise ValueError(f"kernel shape {K.shape} does not match {C} input channels")
    cols = _im2col3(xd)
    Km = K.data.reshape(K.shape[0], -1)
    out = (Km @ cols).reshape(B, K.shape[0], H, W)
    if b is not None:
        b = as_tensor(b)
        out = out + b.data[None, :, None, None]

    def back(g):
        g4 = g[None] if squeeze else g
        gm = g4.reshape(B, K.shape[0], H * W)
        gK = np.einsum("bop,bcp->oc", gm, cols).reshape(K.shape)
        gx = _col2im3(Km.T @ gm, xd.shape)
        grads = [gx[0] if squeeze else gx, gK]
        if b is not None:
            grads.append(gm.sum(axis=(0, 2)))
        return tuple(grads)

    parents = (x, K) if b is None else (x, K, b)
    return make(out[0] if squeeze else out, parents, back, "conv3x3")


def dropout(x, rate, training, rng):
    """Inverted dropout; identity when not training or ``rate == 0``."""
    x = as_tensor(x)
    if not training or rate <= 0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return make(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


def stochastic_depth(branch, rate, training, rng):
    """Drop the whole residual branch per sample (leading axis) with probability ``rate``."""
    branch = as_tensor(branch)
    if not training or rate <= 0:
        return branch
    shape = (branch.shape[0],) + (1,) * (branch.ndim - 1)
    keep = (rng.random(shape) >= rate).astype(branch.dtype) / (1.0 - rate)
    return make(branch.data * keep, (branch,), lambda g: (g * keep,), "stochastic_depth")

"""Tape-based reverse-mode differentiation over numpy arrays.

Every op records its parents and a closure mapping the output gradient to
parent gradients.  Heavy layers (convolutions, normalizations, softmax,
cross entropy) are fused ops with hand-written backward passes so the
Python overhead stays per-layer rather than per-element.

Arrays are channels-last (N, H, W, C).  Dtype is whatever the inputs carry:
float32 for training, float64 for gradient checks.
"""
from __future__ import annotations

import contextlib

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf requiring grad."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without an explicit gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other, self.dtype)))

    def __rsub__(self, other):
        return add(as_tensor(other, self.dtype), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def _topological_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if dtype is not None and arr.dtype != dtype:
        arr = arr.astype(dtype)
    return Tensor(arr)


def _make(data, parents, backward):
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Tensor(data, True, tuple(parents), backward)
    return Tensor(data)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# elementwise ---------------------------------------------------------------
def add(a, b):
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def neg(a):
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a, b):
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def square(a):
    ad = a.data
    return _make(ad * ad, (a,), lambda g: (2.0 * ad * g,))


_RELU_SIGNS = None


@contextlib.contextmanager
def record_relu_signs():
    """Collect every ReLU's active mask, in call order (used to spot kinks)."""
    global _RELU_SIGNS
    prev = _RELU_SIGNS
    _RELU_SIGNS = []
    try:
        yield _RELU_SIGNS
    finally:
        _RELU_SIGNS = prev


def relu(a):
    mask = a.data > 0
    if _RELU_SIGNS is not None:
        _RELU_SIGNS.append(mask)
    return _make(np.where(mask, a.data, 0).astype(a.dtype, copy=False), (a,),
                 lambda g: (g * mask,))


def sigmoid(a):
    x = a.data
    # split branches so neither exp overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


# shape ---------------------------------------------------------------------
def reshape(a, shape):
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes):
    inv = np.argsort(axes)
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def getitem(a, index):
    shape = a.shape

    def backward(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, index, g)
        return (out,)

    return _make(a.data[index], (a,), backward)


def take(a, indices, axis=0):
    """Gather along ``axis``; repeated indices accumulate in backward."""
    indices = np.asarray(indices, dtype=np.intp)
    shape = a.shape

    def backward(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, (slice(None),) * axis + (indices,), g)
        return (out,)

    return _make(np.take(a.data, indices, axis=axis), (a,), backward)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
                 lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    return concat([expand_dims(t, axis) for t in tensors], axis=axis)


def expand_dims(a, axis):
    return reshape(a, np.expand_dims(a.data, axis).shape)


# reductions ----------------------------------------------------------------
def sum_(a, axis=None, keepdims=False):
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def mean(a, axis=None, keepdims=False):
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return sum_(a, axis, keepdims) * (1.0 / n)


# linear algebra --------------------------------------------------------------
def matmul(a, b):
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if bd.ndim == 2 and ad.ndim > 2:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _make(ad @ bd, (a, b), backward)


def linear(x, w, b=None):
    out = matmul(x, w)
    return out if b is None else out + b


# fused nonlinear ops --------------------------------------------------------
def softmax(a, axis=-1, mask=None):
    """Softmax along ``axis``; entries where ``mask`` is False get exactly 0."""
    x = a.data
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (a,), backward)


def log_softmax_np(x, axis=-1):
    m = np.max(x, axis=axis, keepdims=True)
    z = x - m
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def cross_entropy(logits, targets, weights=None):
    """Weighted mean of -log softmax(logits)[target] over rows.

    ``weights`` (one per row) selects/weights rows; zero-weight rows (padding)
    are excluded from the mean.  An all-zero weight vector yields 0.
    """
    x = logits.data
    flat = x.reshape(-1, x.shape[-1])
    t = np.asarray(targets, dtype=np.intp).reshape(-1)
    w = np.ones(t.shape, dtype=x.dtype) if weights is None else np.asarray(weights, dtype=x.dtype).reshape(-1)
    denom = w.sum()
    if denom == 0:
        return Tensor(np.zeros((), dtype=x.dtype))
    t_safe = np.where(w > 0, t, 0)
    logp = log_softmax_np(flat)
    rows = np.arange(flat.shape[0])
    loss = -(w * logp[rows, t_safe]).sum() / denom
    shape = x.shape

    def backward(g):
        p = np.exp(logp)
        p[rows, t_safe] -= 1.0
        return ((p * (w / denom)[:, None] * g).reshape(shape),)

    return _make(np.asarray(loss, dtype=x.dtype), (logits,), backward)


def layer_norm(x, gamma, beta, eps=1e-5):
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data
    d = xd.shape[-1]

    def backward(g):
        gg = (g * xhat).reshape(-1, d).sum(0)
        gb = g.reshape(-1, d).sum(0)
        gx_hat = g * gd
        gx = inv * (gx_hat - gx_hat.mean(-1, keepdims=True) - xhat * (gx_hat * xhat).mean(-1, keepdims=True))
        return gx, gg, gb

    return _make(xhat * gd + beta.data, (x, gamma, beta), backward)


def batch_norm(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """Per-channel normalization over every axis but the last.

    In training mode batch statistics are used and the running buffers
    (plain arrays) are updated in place.
    """
    xd = x.data
    c = xd.shape[-1]
    axes = tuple(range(xd.ndim - 1))
    if training:
        mu = xd.mean(axis=axes)
        xc = xd - mu
        var = (xc * xc).mean(axis=axes)
        n = xd.size // c
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var * (n / max(n - 1, 1))
    else:
        mu, var = running_mean.astype(xd.dtype), running_var.astype(xd.dtype)
        xc = xd - mu
    inv = (1.0 / np.sqrt(var + eps)).astype(xd.dtype)
    xhat = xc * inv
    gd = gamma.data

    def backward(g):
        gg = (g * xhat).reshape(-1, c).sum(0)
        gb = g.reshape(-1, c).sum(0)
        gx_hat = g * gd
        if training:
            gx = inv * (gx_hat - gx_hat.mean(axis=axes) - xhat * (gx_hat * xhat).mean(axis=axes))
        else:
            gx = gx_hat * inv
        return gx, gg, gb

    return _make(xhat * gd + beta.data, (x, gamma, beta), backward)


# convolutions ----------------------------------------------------------------
def conv2d(x, w, b=None, stride=1, padding=0):
    """x: (N, H, W, Cin); w: (kh, kw, Cin, Cout); b: (Cout,).

    Computed as a sum of kh*kw shifted matmuls, which avoids an im2col buffer.
    """
    xd, wd = x.data, w.data
    n, h, wid, cin = xd.shape
    kh, kw, _, cout = wd.shape
    s, p = stride, padding
    ho = (h + 2 * p - kh) // s + 1
    wo = (wid + 2 * p - kw) // s + 1
    xp = np.pad(xd, ((0, 0), (p, p), (p, p), (0, 0))) if p else xd

    def window(a, i, j):
        return a[:, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s, :]

    if cin == 1:
        # a single input channel gives matmuls too thin to pay off
        out = np.zeros((n, ho, wo, cout), dtype=xd.dtype)
        for i in range(kh):
            for j in range(kw):
                out += window(xp, i, j) * wd[i, j, 0]
    else:
        out = window(xp, 0, 0) @ wd[0, 0]
        for i in range(kh):
            for j in range(kw):
                if i or j:
                    out += window(xp, i, j) @ wd[i, j]
    if b is not None:
        out += b.data
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        g2 = g.reshape(-1, cout)
        gw = np.empty_like(wd)
        for i in range(kh):
            for j in range(kw):
                gw[i, j] = window(xp, i, j).reshape(-1, cin).T @ g2
        gx = None
        if x.requires_grad:
            gxp = np.zeros(xp.shape, dtype=xd.dtype)
            for i in range(kh):
                for j in range(kw):
                    window(gxp, i, j)[...] += g @ wd[i, j].T
            gx = gxp[:, p:p + h, p:p + wid, :]
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(0)

    return _make(out, parents, backward)


def conv_transpose2d(x, w, b=None, stride=2, padding=0, output_padding=0):
    """Transposed convolution. x: (N, H, W, Cin); w: (kh, kw, Cin, Cout).

    Output size per axis: (H - 1) * stride - 2 * padding + k + output_padding.
    """
    xd, wd = x.data, w.data
    n, h, wid, cin = xd.shape
    kh, kw, _, cout = wd.shape
    s, p = stride, padding
    ho = (h - 1) * s - 2 * p + kh + output_padding
    wo = (wid - 1) * s - 2 * p + kw + output_padding
    fh = (h - 1) * s + kh + output_padding
    fw = (wid - 1) * s + kw + output_padding
    x2 = xd.reshape(-1, cin)
    wt = wd.transpose(2, 0, 1, 3).reshape(cin, -1)
    z = (x2 @ wt).reshape(n, h, wid, kh, kw, cout)
    full = np.zeros((n, fh, fw, cout), dtype=xd.dtype)
    for i in range(kh):
        for j in range(kw):
            full[:, i:i + s * (h - 1) + 1:s, j:j + s * (wid - 1) + 1:s, :] += z[:, :, :, i, j, :]
    out = full[:, p:p + ho, p:p + wo, :]
    if b is not None:
        out = out + b.data
    else:
        out = out.copy()
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        gfull = np.zeros((n, fh, fw, cout), dtype=g.dtype)
        gfull[:, p:p + ho, p:p + wo, :] = g
        gz = np.empty((n, h, wid, kh, kw, cout), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                gz[:, :, :, i, j, :] = gfull[:, i:i + s * (h - 1) + 1:s, j:j + s * (wid - 1) + 1:s, :]
        gz2 = gz.reshape(n * h * wid, -1)
        gw = (x2.T @ gz2).reshape(cin, kh, kw, cout).transpose(1, 2, 0, 3)
        gx = (gz2 @ wt.T).reshape(xd.shape)
        if b is None:
            return gx, gw
        return gx, gw, g.reshape(-1, cout).sum(0)

    return _make(out, parents, backward)

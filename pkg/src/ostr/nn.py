"""Parameter containers and the few layer types the model needs."""
from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor


class Module:
    """Attribute-ordered container of parameters, buffers and submodules."""

    training = True

    def named_parameters(self, prefix=""):
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def named_buffers(self, prefix=""):
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, np.ndarray):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_buffers(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{name}.{i}.")

    def modules(self):
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for _, p in self.named_parameters():
            p.grad = None


def _param(array):
    return Tensor(array, requires_grad=True)


def uniform_fan_in(rng, shape, fan_in, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear(Module):
    def __init__(self, d_in, d_out, rng, dtype=np.float32, bias=True):
        self.w = _param(uniform_fan_in(rng, (d_in, d_out), d_in, dtype))
        self.b = _param(np.zeros(d_out, dtype=dtype)) if bias else None

    def __call__(self, x):
        return ag.linear(x, self.w, self.b)


class Conv2d(Module):
    def __init__(self, c_in, c_out, kernel, rng, stride=1, padding=0, dtype=np.float32, bias=True):
        fan_in = c_in * kernel * kernel
        self.w = _param(uniform_fan_in(rng, (kernel, kernel, c_in, c_out), fan_in, dtype))
        self.b = _param(np.zeros(c_out, dtype=dtype)) if bias else None
        self.stride = stride
        self.padding = padding

    def __call__(self, x):
        return ag.conv2d(x, self.w, self.b, self.stride, self.padding)


class ConvTranspose2d(Module):
    """Stride-``s`` transposed convolution; padding chosen by the caller."""

    def __init__(self, c_in, c_out, kernel, rng, stride=2, padding=0, output_padding=0, dtype=np.float32):
        fan_in = c_in * kernel * kernel // (stride * stride)
        self.w = _param(uniform_fan_in(rng, (kernel, kernel, c_in, c_out), max(fan_in, 1), dtype))
        self.b = _param(np.zeros(c_out, dtype=dtype))
        self.stride = stride
        self.padding = padding
        self.output_padding = output_padding

    def __call__(self, x):
        return ag.conv_transpose2d(x, self.w, self.b, self.stride, self.padding, self.output_padding)


class BatchNorm(Module):
    def __init__(self, channels, dtype=np.float32, momentum=0.1, eps=1e-5):
        self.gamma = _param(np.ones(channels, dtype=dtype))
        self.beta = _param(np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=np.float64)
        self.running_var = np.ones(channels, dtype=np.float64)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x):
        return ag.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                             self.training, self.momentum, self.eps)


class LayerNorm(Module):
    def __init__(self, dim, dtype=np.float32, eps=1e-5):
        self.gamma = _param(np.ones(dim, dtype=dtype))
        self.beta = _param(np.zeros(dim, dtype=dtype))
        self.eps = eps

    def __call__(self, x):
        return ag.layer_norm(x, self.gamma, self.beta, self.eps)


class Embedding(Module):
    def __init__(self, num, dim, rng, dtype=np.float32):
        self.w = _param((rng.standard_normal((num, dim)) * 0.1).astype(dtype))

    def __call__(self, ids):
        return ag.take(self.w, np.asarray(ids), axis=0)


def sinusoidal_encoding(length, dim, dtype=np.float32):
    pos = np.arange(length)[:, None]
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    enc = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return enc.astype(dtype)

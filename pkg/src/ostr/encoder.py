"""Residual convolutional encoder with total spatial stride 8.

Relative to a ResNet-34 layout: 3x3 stem instead of 7x7, the last stage is
dropped, and no max-pooling is used; the stride-8 schedule is stem /2,
stage-2 entry /2, stage-3 entry /2.
"""
from __future__ import annotations

import dataclasses

import numpy as np

from . import autograd as ag
from .errors import InvalidArgument
from .nn import BatchNorm, Conv2d, Module

STAGE_STRIDES = (1, 2, 2)
STEM_STRIDE = 2


@dataclasses.dataclass(frozen=True)
class EncoderConfig:
    base_channels: int = 32
    blocks_per_stage: int = 2
    height: int = 32
    width: int = 256

    @property
    def stage_channels(self):
        b = self.base_channels
        return (b, 2 * b, 4 * b)

    @property
    def out_channels(self):
        return self.stage_channels[-1]

    @property
    def downsample(self):
        return STEM_STRIDE * int(np.prod(STAGE_STRIDES))

    @property
    def grid_shape(self):
        return self.height // self.downsample, self.width // self.downsample


class BasicBlock(Module):
    def __init__(self, c_in, c_out, stride, rng, dtype):
        self.conv1 = Conv2d(c_in, c_out, 3, rng, stride=stride, padding=1, dtype=dtype, bias=False)
        self.bn1 = BatchNorm(c_out, dtype)
        self.conv2 = Conv2d(c_out, c_out, 3, rng, padding=1, dtype=dtype, bias=False)
        self.bn2 = BatchNorm(c_out, dtype)
        self.proj = None
        if stride != 1 or c_in != c_out:
            self.proj = Conv2d(c_in, c_out, 1, rng, stride=stride, dtype=dtype, bias=False)
            self.proj_bn = BatchNorm(c_out, dtype)

    def __call__(self, x):
        h = ag.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        shortcut = x if self.proj is None else self.proj_bn(self.proj(x))
        return ag.relu(h + shortcut)


class Encoder(Module):
    def __init__(self, config, rng, dtype=np.float32):
        self.config = config
        c = config.stage_channels
        self.stem = Conv2d(1, c[0], 3, rng, stride=STEM_STRIDE, padding=1, dtype=dtype, bias=False)
        self.stem_bn = BatchNorm(c[0], dtype)
        stages = []
        c_in = c[0]
        for c_out, stride in zip(c, STAGE_STRIDES):
            blocks = []
            for k in range(config.blocks_per_stage):
                blocks.append(BasicBlock(c_in, c_out, stride if k == 0 else 1, rng, dtype))
                c_in = c_out
            stages.append(blocks)
        self.stage1, self.stage2, self.stage3 = stages

    def __call__(self, images):
        """images: (N, H, W) or (N, H, W, 1) array/Tensor -> F of shape (N, H/8, W/8, C)."""
        x = images if isinstance(images, ag.Tensor) else ag.Tensor(np.asarray(images))
        if x.ndim == 3:
            x = x.reshape(x.shape + (1,))
        cfg = self.config
        if x.shape[1:3] != (cfg.height, cfg.width):
            raise InvalidArgument(f"encoder expects {cfg.height}x{cfg.width} images, got {x.shape[1:3]}")
        x = ag.relu(self.stem_bn(self.stem(x)))
        for block in (*self.stage1, *self.stage2, *self.stage3):
            x = block(x)
        return x


def encode(encoder, images):
    return encoder(images)


def grad_encode(encoder, images, upstream):
    """Backpropagate ``upstream`` (shaped like F) into parameters and the input.

    Returns ``(param_grads: dict, input_grad: array)``.
    """
    x = ag.Tensor(np.asarray(images, dtype=encoder.stem.w.dtype), requires_grad=True)
    encoder.zero_grad()
    out = encoder(x)
    out.backward(np.asarray(upstream, dtype=out.dtype))
    grads = {name: (p.grad if p.grad is not None else np.zeros_like(p.data))
             for name, p in encoder.named_parameters()}
    gx = x.grad if x.grad is not None else np.zeros_like(x.data)
    return grads, gx

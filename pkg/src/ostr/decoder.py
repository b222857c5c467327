"""Autoregressive transformer decoder over flattened encoder features.

The feature grid is flattened row-major (index = i * grid_width + j) and
given sinusoidal position codes, as is the token sequence.  Layers are
pre-norm: masked self-attention, cross-attention to the features, then a
ReLU feed-forward block.  Cross-attention weights of every layer and head are
returned; the head mean of the last layer is the per-step attention map
handed to the reconstruction network.
"""
from __future__ import annotations

import dataclasses

import numpy as np

from . import autograd as ag
from .errors import InvalidArgument
from .nn import Embedding, LayerNorm, Linear, Module, sinusoidal_encoding


@dataclasses.dataclass(frozen=True)
class DecoderConfig:
    num_classes: int
    model_dim: int = 128
    num_heads: int = 4
    ffn_dim: int = 0  # 0 -> 4 * model_dim
    num_layers: int = 2
    max_steps: int = 14

    def __post_init__(self):
        if self.model_dim % self.num_heads:
            raise InvalidArgument(f"model_dim {self.model_dim} not divisible by {self.num_heads} heads")

    @property
    def eos(self):
        return self.num_classes

    @property
    def pad(self):
        return self.num_classes + 1

    @property
    def bos(self):
        return self.num_classes + 2

    @property
    def vocab_size(self):
        return self.num_classes + 3

    @property
    def ffn(self):
        return self.ffn_dim or 4 * self.model_dim


@dataclasses.dataclass
class AttentionTrace:
    """``layers[l]`` holds cross-attention weights (N, heads, T, P); ``mean`` is
    the head mean of the last layer, (N, T, P), still attached to the graph."""

    layers: list
    mean: ag.Tensor

    def step_maps(self, grid_shape):
        n, t, _ = self.mean.shape
        return self.mean.data.reshape(n, t, *grid_shape)


def glimpse(weights, features):
    """Attention-weighted sum over positions: sum_p weights[..., p] * features[..., p, :]."""
    return ag.matmul(weights, features)


def shift_right(labels, config):
    """Teacher-forcing inputs/targets: ``[BOS, y...]`` and ``[y..., EOS]``, PAD-filled."""
    t = max(len(y) for y in labels) + 1
    if t > config.max_steps:
        raise InvalidArgument(f"sequence of length {t} exceeds max_steps={config.max_steps}")
    inputs = np.full((len(labels), t), config.pad, dtype=np.int64)
    targets = np.full((len(labels), t), config.pad, dtype=np.int64)
    for n, y in enumerate(labels):
        inputs[n, 0] = config.bos
        inputs[n, 1:len(y) + 1] = y
        targets[n, :len(y)] = y
        targets[n, len(y)] = config.eos
    return inputs, targets


def memory_mask(valid_width, grid_shape, stride=8):
    """(N, P) boolean mask of feature positions inside each image's valid width."""
    gh, gw = grid_shape
    cols = -(-np.asarray(valid_width) // stride)
    col_ok = np.arange(gw)[None, :] < cols[:, None]
    return np.repeat(col_ok[:, None, :], gh, axis=1).reshape(len(cols), gh * gw)


class MultiHeadAttention(Module):
    def __init__(self, dim, heads, rng, dtype):
        self.q = Linear(dim, dim, rng, dtype)
        self.k = Linear(dim, dim, rng, dtype)
        self.v = Linear(dim, dim, rng, dtype)
        self.o = Linear(dim, dim, rng, dtype)
        self.heads = heads

    def __call__(self, x, mem, mask):
        n, t, d = x.shape
        s = mem.shape[1]
        h, dh = self.heads, d // self.heads
        q = self.q(x).reshape(n, t, h, dh).transpose(0, 2, 1, 3)
        k = self.k(mem).reshape(n, s, h, dh).transpose(0, 2, 3, 1)
        v = self.v(mem).reshape(n, s, h, dh).transpose(0, 2, 1, 3)
        attn = ag.softmax((q @ k) * (1.0 / np.sqrt(dh)), axis=-1, mask=mask)
        ctx = glimpse(attn, v).transpose(0, 2, 1, 3).reshape(n, t, d)
        return self.o(ctx), attn


class DecoderLayer(Module):
    def __init__(self, cfg, rng, dtype):
        d = cfg.model_dim
        self.norm1 = LayerNorm(d, dtype)
        self.self_attn = MultiHeadAttention(d, cfg.num_heads, rng, dtype)
        self.norm2 = LayerNorm(d, dtype)
        self.cross_attn = MultiHeadAttention(d, cfg.num_heads, rng, dtype)
        self.norm3 = LayerNorm(d, dtype)
        self.ff1 = Linear(d, cfg.ffn, rng, dtype)
        self.ff2 = Linear(cfg.ffn, d, rng, dtype)

    def __call__(self, x, mem, causal, mem_mask):
        h = self.norm1(x)
        x = x + self.self_attn(h, h, causal)[0]
        a, attn = self.cross_attn(self.norm2(x), mem, mem_mask)
        x = x + a
        x = x + self.ff2(ag.relu(self.ff1(self.norm3(x))))
        return x, attn


class Decoder(Module):
    def __init__(self, config, feature_channels, rng, dtype=np.float32, feature_stride=8):
        self.config = config
        self.feature_stride = feature_stride
        d = config.model_dim
        self.embed = Embedding(config.vocab_size, d, rng, dtype)
        self.mem_proj = Linear(feature_channels, d, rng, dtype) if feature_channels != d else None
        self.layers = [DecoderLayer(config, rng, dtype) for _ in range(config.num_layers)]
        self.norm = LayerNorm(d, dtype)
        self.head = Linear(d, config.vocab_size, rng, dtype)

    def memory(self, features):
        n, gh, gw, c = features.shape
        mem = features.reshape(n, gh * gw, c)
        if self.mem_proj is not None:
            mem = self.mem_proj(mem)
        return mem + sinusoidal_encoding(gh * gw, self.config.model_dim, mem.dtype)

    def __call__(self, features, tokens, valid_width, mem=None):
        """features: (N, gh, gw, C) Tensor; tokens: (N, T) ints starting with BOS.

        Returns ``(logits (N, T, V), AttentionTrace)``.
        """
        tokens = np.asarray(tokens)
        n, t = tokens.shape
        if t > self.config.max_steps:
            raise InvalidArgument(f"{t} decoding steps exceed max_steps={self.config.max_steps}")
        if np.any(tokens[:, 0] != self.config.bos):
            raise InvalidArgument("decoder input must start with BOS")
        gh, gw = features.shape[1:3]
        if mem is None:
            mem = self.memory(features)
        x = self.embed(tokens) + sinusoidal_encoding(t, self.config.model_dim, features.dtype)
        causal = np.tril(np.ones((t, t), dtype=bool))
        mem_mask = memory_mask(valid_width, (gh, gw), self.feature_stride)[:, None, None, :]
        trace = []
        for layer in self.layers:
            x, attn = layer(x, mem, causal, mem_mask)
            trace.append(attn)
        logits = self.head(self.norm(x))
        return logits, AttentionTrace(trace, trace[-1].mean(axis=1))


def decode_teacher_forced(decoder, features, shifted_gt, valid_width):
    return decoder(features, shifted_gt, valid_width)


def greedy_decode(decoder, features, valid_width, max_steps=None):
    """Argmax decoding from BOS until EOS or ``max_steps`` emitted tokens.

    Only class ids and EOS are eligible.  Returns one list of class ids per
    image, without BOS/EOS.
    """
    cfg = decoder.config
    max_steps = cfg.max_steps - 1 if max_steps is None else max_steps
    if max_steps < 1:
        raise InvalidArgument("max_steps must be >= 1")
    max_steps = min(max_steps, cfg.max_steps - 1)
    n = features.shape[0]
    tokens = np.full((n, 1), cfg.bos, dtype=np.int64)
    done = np.zeros(n, dtype=bool)
    with ag.no_grad():
        mem = decoder.memory(features)
        for _ in range(max_steps):
            logits, _ = decoder(features, tokens, valid_width, mem=mem)
            nxt = logits.data[:, -1, :cfg.eos + 1].argmax(axis=-1)
            nxt = np.where(done, cfg.eos, nxt)
            tokens = np.concatenate([tokens, nxt[:, None]], axis=1)
            done |= nxt == cfg.eos
            if done.all():
                break
    out = []
    for row in tokens[:, 1:]:
        seq = []
        for tok in row:
            if tok == cfg.eos:
                break
            seq.append(int(tok))
        out.append(seq)
    return out


def grad_decode(decoder, features, shifted_gt, valid_width, upstream):
    """Backpropagate ``upstream`` (shaped like the logits).

    Returns ``(param_grads: dict, feature_grad: array)``.
    """
    f = ag.Tensor(np.asarray(features.data if isinstance(features, ag.Tensor) else features),
                  requires_grad=True)
    decoder.zero_grad()
    logits, _ = decoder(f, shifted_gt, valid_width)
    logits.backward(np.asarray(upstream, dtype=logits.dtype))
    grads = {name: (p.grad if p.grad is not None else np.zeros_like(p.data))
             for name, p in decoder.named_parameters()}
    return grads, (f.grad if f.grad is not None else np.zeros_like(f.data))

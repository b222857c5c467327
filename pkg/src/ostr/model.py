"""Encoder + decoder + CIRN, and the batched multi-loss forward pass."""
from __future__ import annotations

import dataclasses

import numpy as np

from . import autograd as ag
from .cirn import CIRN, CirnConfig, char_features, extract_content, extract_orientation, fuse, reconstruct
from .decoder import Decoder, DecoderConfig, greedy_decode, shift_right
from .encoder import Encoder, EncoderConfig
from .nn import Module
from .objectives import (LossWeights, content_loss, orientation_loss, text_loss, total_loss,
                         weighted_reconstruction_loss)

TERMS = ("L_t", "L_o", "L_c", "L_r")


@dataclasses.dataclass(frozen=True)
class ModelConfig:
    num_classes: int
    encoder: EncoderConfig = EncoderConfig()
    num_heads: int = 4
    num_layers: int = 2
    ffn_dim: int = 0
    max_steps: int = 14
    cirn: CirnConfig = CirnConfig()
    dtype: str = "float32"

    def decoder_config(self):
        return DecoderConfig(self.num_classes, self.encoder.out_channels, self.num_heads,
                             self.ffn_dim, self.num_layers, self.max_steps)


@dataclasses.dataclass
class Batch:
    images: np.ndarray          # (N, H, W) preprocessed
    valid_widths: np.ndarray    # (N,)
    labels: list                # class-id lists
    vertical: np.ndarray        # (N,) orientation targets


class TextRecognizer(Module):
    def __init__(self, config, seed=0):
        self.config = config
        dtype = np.dtype(config.dtype)
        rng = np.random.default_rng(seed)
        self.encoder = Encoder(config.encoder, rng, dtype)
        c = config.encoder.out_channels
        self.decoder = Decoder(config.decoder_config(), c, rng, dtype, config.encoder.downsample)
        gh, gw = config.encoder.grid_shape
        self.cirn = CIRN(config.cirn, c, config.num_classes, rng, dtype, grid_positions=gh * gw)

    @property
    def dtype(self):
        return np.dtype(self.config.dtype)

    def recognize(self, images, valid_widths, max_steps=None):
        was = self.training
        self.eval()
        try:
            with ag.no_grad():
                f = self.encoder(np.asarray(images, dtype=self.dtype))
                return greedy_decode(self.decoder, f, valid_widths, max_steps)
        finally:
            self.train(was)


def pair_bundles(vertical, rng):
    """Randomly pair horizontal with vertical bundles; leftovers stay single.

    Returns ``(pairs [(h, v)], singles [i])`` as indices into ``vertical``.
    """
    vertical = np.asarray(vertical, dtype=bool)
    h = np.flatnonzero(~vertical)
    v = np.flatnonzero(vertical)
    h = h[rng.permutation(len(h))]
    v = v[rng.permutation(len(v))]
    k = min(len(h), len(v))
    pairs = list(zip(h[:k].tolist(), v[:k].tolist()))
    singles = sorted(h[k:].tolist() + v[k:].tolist())
    return pairs, singles


def reconstruction_rows(vertical, classes, rng):
    """Rows (content_idx, orient_idx, class, rotated, weight) for the swap reconstruction."""
    pairs, singles = pair_bundles(vertical, rng)
    rows = []
    for a, b in pairs:
        ca, cb = classes[a], classes[b]
        rows += [(a, a, ca, False, 0.5), (a, b, ca, True, 0.5),
                 (b, a, cb, False, 0.5), (b, b, cb, True, 0.5)]
    for i in singles:
        rows.append((i, i, classes[i], bool(vertical[i]), 1.0))
    return rows, len(pairs) + len(singles)


@dataclasses.dataclass
class ForwardResult:
    report: object
    components: dict
    logits: ag.Tensor
    content_vec: ag.Tensor = None
    orient_vec: ag.Tensor = None
    class_logits: ag.Tensor = None
    orient_logits: ag.Tensor = None
    bundle_classes: np.ndarray = None
    bundle_vertical: np.ndarray = None
    reconstructions: ag.Tensor = None
    recon_rows: list = None


def forward(model, batch, printed, weights=LossWeights(), rng=None, terms=TERMS, features=None):
    """Compute every requested loss term on ``batch``.

    ``printed`` is a pair of arrays (upright, rotated), each (K, 32, 32).
    Terms whose weight is zero are not built, so their parameters receive
    no gradient.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    cfg = model.decoder.config
    dtype = model.dtype
    f = model.encoder(np.asarray(batch.images, dtype=dtype)) if features is None else features
    inputs, targets = shift_right(batch.labels, cfg)
    logits, trace = model.decoder(f, inputs, batch.valid_widths)
    comps = {}
    counts = {}
    if "L_t" in terms:
        comps["L_t"] = text_loss(logits, targets, cfg.pad)
        counts["L_t"] = int((targets != cfg.pad).sum())
    out = ForwardResult(None, comps, logits)
    want = {"L_o": weights.alpha > 0 and "L_o" in terms,
            "L_c": weights.beta > 0 and "L_c" in terms,
            "L_r": weights.gamma > 0 and "L_r" in terms}
    if any(want.values()):
        n, t = inputs.shape
        n_idx = np.concatenate([np.full(len(y), i) for i, y in enumerate(batch.labels)]).astype(np.intp)
        t_idx = np.concatenate([np.arange(len(y)) for y in batch.labels]).astype(np.intp)
        classes = np.concatenate([np.asarray(y) for y in batch.labels]).astype(np.int64)
        vertical = np.asarray(batch.vertical, dtype=bool)[n_idx]
        gh, gw, c = f.shape[1:]
        attn = ag.take(trace.mean.reshape(n * t, gh * gw), n_idx * t + t_idx).reshape(len(n_idx), gh, gw)
        fc = char_features(ag.take(f, n_idx), attn)
        _, cvec = extract_content(model.cirn, fc)
        ovec = extract_orientation(model.cirn, fc)
        out.content_vec, out.orient_vec = cvec, ovec
        out.bundle_classes, out.bundle_vertical = classes, vertical
        if want["L_c"]:
            out.class_logits = model.cirn.class_head(cvec)
            comps["L_c"] = content_loss(out.class_logits, classes)
            counts["L_c"] = len(classes)
        if want["L_o"]:
            out.orient_logits = model.cirn.orient_head(ovec)
            comps["L_o"] = orientation_loss(out.orient_logits, vertical.astype(np.int64))
            counts["L_o"] = len(classes)
        if want["L_r"]:
            rows, n_items = reconstruction_rows(vertical, classes, rng)
            ci, oi, cls, rot, w = (np.array(col) for col in zip(*rows))
            fused = fuse(ag.take(cvec, ci), ag.take(ovec, oi))
            images = reconstruct(model.cirn, fused)
            upright, rotated = printed
            tgt = np.where(rot[:, None, None], rotated[cls], upright[cls])
            comps["L_r"] = weighted_reconstruction_loss(images, tgt, w, n_items)
            counts["L_r"] = n_items
            out.reconstructions, out.recon_rows = images, rows
    out.report = total_loss(comps, weights, counts)
    return out


def printed_targets(charset, dtype=np.float32):
    upright = charset.bitmaps().astype(dtype)
    return upright, np.rot90(upright, 1, axes=(1, 2)).copy()

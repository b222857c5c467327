"""Character Image Reconstruction Network.

Per decoding step, the encoder features are weighted by that step's
attention map, split into a content vector (pointwise transform, summed over
positions) and an orientation vector (pointwise transform, averaged over
positions), and re-fused to reconstruct printed character images.  Swapping
orientation vectors between a horizontal and a rotated-vertical character
forces the content vector to carry no orientation.
"""
from __future__ import annotations

import dataclasses

import numpy as np

from . import autograd as ag
from .corpus import GLYPH_SIZE, Orientation, render_printed
from .errors import InvalidArgument
from .nn import ConvTranspose2d, Linear, Module

ORIENT_INDEX = {Orientation.HORIZONTAL: 0, Orientation.VERTICAL: 1}


@dataclasses.dataclass(frozen=True)
class CirnConfig:
    content_dim: int = 64
    orient_dim: int = 64
    deconv_channels: tuple = (64, 32, 16, 8)


@dataclasses.dataclass
class CharacterBundle:
    char_features: ag.Tensor
    content_map: ag.Tensor
    content_vec: ag.Tensor
    orient_vec: ag.Tensor
    class_target: int
    orient_target: Orientation


@dataclasses.dataclass
class ReconstructionPair:
    H_a: ag.Tensor
    V_a: ag.Tensor
    H_b: ag.Tensor
    V_b: ag.Tensor
    target_H_a: np.ndarray
    target_V_a: np.ndarray
    target_H_b: np.ndarray
    target_V_b: np.ndarray


class CIRN(Module):
    def __init__(self, config, feature_channels, num_classes, rng, dtype=np.float32, grid_positions=1):
        self.config = config
        c1, c2 = config.content_dim, config.orient_dim
        # no bias: a summed bias would add once per grid position
        self.content = Linear(feature_channels, c1, rng, dtype, bias=False)
        self.orient = Linear(feature_channels, c2, rng, dtype)
        # F_c carries attention mass 1, so the spatial mean shrinks it by the grid size
        # while the content sum does not; scaling the init keeps both vectors comparable
        self.orient.w.data *= grid_positions
        self.class_head = Linear(c1, num_classes, rng, dtype)
        self.orient_head = Linear(c2, 2, rng, dtype)
        chans = (c1 + c2, *config.deconv_channels, 1)
        if len(chans) != 6:
            raise InvalidArgument("reconstruction needs exactly 5 deconvolution layers")
        # k=5, s=2, pad=2, output_pad=1 doubles each side: 1 -> 2 -> ... -> 32
        self.deconvs = [ConvTranspose2d(chans[i], chans[i + 1], 5, rng, stride=2, padding=2,
                                        output_padding=1, dtype=dtype) for i in range(5)]


def char_features(features, attention):
    """Position-wise product of features (..., gh, gw, C) with weights (..., gh, gw)."""
    features = ag.as_tensor(features)
    attention = ag.as_tensor(attention)
    if features.shape[:-1] != attention.shape:
        raise InvalidArgument(f"attention grid {attention.shape} does not match features {features.shape}")
    return features * attention.reshape(attention.shape + (1,))


def extract_content(cirn, fc):
    """Returns (content_map, content_vec); the vector sums the map over positions,
    which for attention-weighted features is the attention-pooled descriptor."""
    cmap = cirn.content(fc)
    return cmap, cmap.sum(axis=(-3, -2))


def extract_orientation(cirn, fc):
    return cirn.orient(fc).mean(axis=(-3, -2))


def fuse(content_vec, orient_vec):
    return ag.concat([content_vec, orient_vec], axis=-1)


def split_fused(fused, content_dim):
    return fused[..., :content_dim], fused[..., content_dim:]


def reconstruct(cirn, fused):
    """(..., c1 + c2) -> (..., 32, 32) images in [0, 1]."""
    fused = ag.as_tensor(fused)
    lead = fused.shape[:-1]
    x = fused.reshape((-1, 1, 1, fused.shape[-1]))
    for i, layer in enumerate(cirn.deconvs):
        x = layer(x)
        x = ag.relu(x) if i < 4 else ag.sigmoid(x)
    return x.reshape(lead + (GLYPH_SIZE, GLYPH_SIZE))


def classify_heads(cirn, content_vec, orient_vec):
    return cirn.class_head(content_vec), cirn.orient_head(orient_vec)


def make_bundle(cirn, features, attention, class_target, orient_target):
    fc = char_features(features, attention)
    cmap, cvec = extract_content(cirn, fc)
    return CharacterBundle(fc, cmap, cvec, extract_orientation(cirn, fc), class_target,
                           Orientation(orient_target))


def exchange_and_reconstruct(cirn, bundle_a, bundle_b, charset):
    """Reconstruct both characters in both orientations by swapping orientation vectors.

    ``bundle_a`` must be horizontal and ``bundle_b`` vertical (rotated).
    """
    if bundle_a.orient_target is not Orientation.HORIZONTAL or bundle_b.orient_target is not Orientation.VERTICAL:
        raise InvalidArgument("exchange needs a horizontal bundle_a and a vertical bundle_b")
    ca, oa, cb, ob = bundle_a.content_vec, bundle_a.orient_vec, bundle_b.content_vec, bundle_b.orient_vec
    imgs = reconstruct(cirn, ag.stack([fuse(ca, oa), fuse(ca, ob), fuse(cb, oa), fuse(cb, ob)]))
    a, b = bundle_a.class_target, bundle_b.class_target
    return ReconstructionPair(
        imgs[0], imgs[1], imgs[2], imgs[3],
        render_printed(charset, a, False), render_printed(charset, a, True),
        render_printed(charset, b, False), render_printed(charset, b, True),
    )

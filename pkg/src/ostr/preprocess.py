"""Rotation strategy and canonical resizing applied before encoding."""
from __future__ import annotations

import dataclasses
import warnings

import numpy as np
from scipy import ndimage

from .corpus import Orientation
from .errors import InvalidArgument, WidthOverflowError

BACKGROUND = 0.0


@dataclasses.dataclass(frozen=True)
class PreprocessConfig:
    canonical_height: int = 32
    canonical_width: int = 256
    vertical_aspect_threshold: float = 1.5
    rotation: bool = True


@dataclasses.dataclass
class PreprocessedSample:
    image: np.ndarray
    was_rotated: bool
    orientation_label: Orientation
    valid_width: int


def rotate_if_vertical(image, threshold=1.5):
    """Rotate 90 degrees anticlockwise when height > threshold * width (strict)."""
    h, w = image.shape
    if h > threshold * w:
        return np.rot90(image, 1), True
    return image, False


def resize_normalize(image, height=32, width=256):
    """Aspect-preserving bilinear resize to ``height`` then right-pad to ``width``.

    Returns ``(canvas, valid_width)``.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.size == 0:
        raise InvalidArgument("empty image")
    h, w = image.shape
    new_w = max(1, int(round(w * height / h)))
    if new_w > width:
        raise WidthOverflowError(f"resized width {new_w} exceeds canonical width {width}")
    if (h, w) == (height, new_w):
        resized = image
    else:
        # half-pixel centres, edge-clamped: constants map to constants
        ys = (np.arange(height) + 0.5) * (h / height) - 0.5
        xs = (np.arange(new_w) + 0.5) * (w / new_w) - 0.5
        grid = np.meshgrid(ys, xs, indexing="ij")
        resized = ndimage.map_coordinates(image, grid, order=1, mode="nearest")
    canvas = np.full((height, width), BACKGROUND)
    canvas[:, :new_w] = np.clip(resized, 0.0, 1.0)
    return canvas, new_w


def orientation_of(image, threshold=1.5):
    h, w = image.shape
    return Orientation.VERTICAL if h > threshold * w else Orientation.HORIZONTAL


def preprocess(image, config=PreprocessConfig()):
    """Full pipeline for one image.

    The orientation label comes from the image's own aspect ratio.  With
    ``config.rotation`` off, vertical images are resized as they are.
    """
    label = orientation_of(image, config.vertical_aspect_threshold)
    rotated = False
    if config.rotation:
        image, rotated = rotate_if_vertical(image, config.vertical_aspect_threshold)
    canvas, valid = resize_normalize(image, config.canonical_height, config.canonical_width)
    return PreprocessedSample(canvas, rotated, label, valid)


def preprocess_batch(samples, config=PreprocessConfig()):
    """Preprocess a list of TextLineSamples into stacked arrays.

    Samples that overflow the canonical width are skipped with a warning.
    Returns ``(images (N, H, W), valid_widths, vertical_flags, kept_indices)``.
    """
    images, widths, vertical, kept = [], [], [], []
    for i, s in enumerate(samples):
        try:
            p = preprocess(s.image, config)
        except WidthOverflowError as e:
            warnings.warn(f"skipping sample {s.id or i}: {e}", stacklevel=2)
            continue
        images.append(p.image)
        widths.append(p.valid_width)
        vertical.append(p.orientation_label is Orientation.VERTICAL)
        kept.append(i)
    shape = (0, config.canonical_height, config.canonical_width)
    return (np.stack(images) if images else np.zeros(shape), np.array(widths, dtype=np.int64),
            np.array(vertical, dtype=bool), kept)

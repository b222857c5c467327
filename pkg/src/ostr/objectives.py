"""Text, orientation, content and reconstruction losses and their weighted sum."""
from __future__ import annotations

import dataclasses
import math

import numpy as np

from . import autograd as ag
from .errors import InvalidArgument, TrainingDivergence


@dataclasses.dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0  # orientation
    beta: float = 1.0   # content
    gamma: float = 5.0  # reconstruction

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise InvalidArgument(f"loss weights must be non-negative: {self}")


@dataclasses.dataclass
class LossReport:
    L_t: float
    L_o: float
    L_c: float
    L_r: float
    L_total: float
    weights: LossWeights
    counts: dict = dataclasses.field(default_factory=dict)
    total: ag.Tensor = dataclasses.field(default=None, repr=False, compare=False)

    def as_dict(self):
        return {"L_t": self.L_t, "L_o": self.L_o, "L_c": self.L_c, "L_r": self.L_r,
                "L_total": self.L_total}


def _zero(dtype=np.float64):
    return ag.Tensor(np.zeros((), dtype=dtype))


def text_loss(logits, targets, pad=None):
    """Mean token cross entropy over non-PAD target positions."""
    targets = np.asarray(targets)
    if logits.shape[:-1] != targets.shape:
        raise InvalidArgument(f"logits {logits.shape} do not match targets {targets.shape}")
    weights = None if pad is None else (targets != pad)
    return ag.cross_entropy(logits, targets, weights)


def orientation_loss(orient_logits, targets):
    """Mean cross entropy of the two-way orientation head; 0 when there are no bundles."""
    targets = np.asarray(targets)
    if targets.size == 0:
        return _zero(orient_logits.dtype if orient_logits is not None else np.float64)
    return ag.cross_entropy(orient_logits, targets)


def content_loss(class_logits, targets):
    targets = np.asarray(targets)
    if targets.size == 0:
        return _zero(class_logits.dtype if class_logits is not None else np.float64)
    return ag.cross_entropy(class_logits, targets)


def mse_rows(images, targets):
    """Per-image mean squared error, images (R, h, w) Tensor vs targets (R, h, w)."""
    diff = images - np.asarray(targets, dtype=images.dtype)
    return ag.square(diff).mean(axis=(-2, -1))


def weighted_reconstruction_loss(images, targets, row_weights, n_items):
    """Sum of weighted per-image MSEs divided by the number of contributing items."""
    if n_items == 0:
        return _zero(images.dtype if images is not None else np.float64)
    w = np.asarray(row_weights, dtype=images.dtype)
    return (mse_rows(images, targets) * w).sum() * (1.0 / n_items)


def reconstruction_loss(pairs, singles=()):
    """Mean over items of the reconstruction error.

    A pair contributes [MSE(H_a) + MSE(V_a) + MSE(H_b) + MSE(V_b)] / 2; an
    unpaired ``(image, target)`` single contributes its own MSE.
    """
    images, targets, weights = [], [], []
    for p in pairs:
        images += [p.H_a, p.V_a, p.H_b, p.V_b]
        targets += [p.target_H_a, p.target_V_a, p.target_H_b, p.target_V_b]
        weights += [0.5] * 4
    for img, tgt in singles:
        images.append(img)
        targets.append(tgt)
        weights.append(1.0)
    n_items = len(pairs) + len(singles)
    if n_items == 0:
        return _zero()
    return weighted_reconstruction_loss(ag.stack(images), np.stack(targets), weights, n_items)


def total_loss(components, weights=LossWeights(), counts=None):
    """Weighted sum L_t + alpha L_o + beta L_c + gamma L_r.

    ``components`` maps ``L_t``/``L_o``/``L_c``/``L_r`` to Tensors or floats;
    missing terms count as 0.
    """
    terms = {k: ag.as_tensor(components.get(k, 0.0)) for k in ("L_t", "L_o", "L_c", "L_r")}
    values = {k: float(t.data) for k, t in terms.items()}
    for k, v in values.items():
        if not math.isfinite(v):
            raise TrainingDivergence(f"{k} is not finite ({v})")
    total = terms["L_t"]
    for key, w in (("L_o", weights.alpha), ("L_c", weights.beta), ("L_r", weights.gamma)):
        if w != 0:
            total = total + terms[key] * w
    l_total = values["L_t"] + weights.alpha * values["L_o"] + weights.beta * values["L_c"] + weights.gamma * values["L_r"]
    return LossReport(values["L_t"], values["L_o"], values["L_c"], values["L_r"], l_total,
                      weights, dict(counts or {}), total)

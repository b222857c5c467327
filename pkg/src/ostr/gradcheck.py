"""Whole-model gradient check against central finite differences in float64."""
from __future__ import annotations

import dataclasses
import time

import numpy as np

from . import autograd as ag
from .cirn import CirnConfig
from .corpus import NoiseConfig, Orientation, build_charset, synth_text_line
from .encoder import EncoderConfig
from .model import TERMS, ModelConfig, TextRecognizer, forward, printed_targets
from .objectives import LossWeights
from .preprocess import PreprocessConfig
from .train import PreparedSet

# every width and depth <= 16
DESK_CONFIG = ModelConfig(
    num_classes=5,
    encoder=EncoderConfig(base_channels=2, blocks_per_stage=1, height=32, width=64),
    num_heads=2, num_layers=2, ffn_dim=16, max_steps=4,
    cirn=CirnConfig(content_dim=8, orient_dim=8, deconv_channels=(8, 8, 4, 4)),
    dtype="float64",
)


def module_of(name):
    """Reporting group of a parameter name, e.g. ``cirn.deconvs`` or ``decoder.head``."""
    parts = name.split(".")
    if parts[0] == "encoder":
        return "encoder"
    if parts[0] == "decoder":
        return "decoder.head" if parts[1] == "head" else "decoder"
    return ".".join(parts[:2])


@dataclasses.dataclass
class GradCheckReport:
    tolerance: float
    max_error: dict         # term -> {module: max relative error}
    touched: dict           # term -> set of modules with a nonzero analytic gradient
    entries: int
    kink_retries: int       # entries re-differenced with a smaller step
    seconds: float

    def passed(self):
        return all(e < self.tolerance for errs in self.max_error.values() for e in errs.values())

    def worst(self):
        return max((e for errs in self.max_error.values() for e in errs.values()), default=0.0)

    def lines(self):
        out = []
        for term, errs in self.max_error.items():
            for mod, e in sorted(errs.items()):
                out.append(f"{term}\t{mod}\t{e:.3e}\t{'touched' if mod in self.touched[term] else '-'}")
        return out


def desk_batch(config=DESK_CONFIG, seed=0, label_len=2):
    """Two horizontal and two vertical noisy lines with ``label_len`` characters."""
    charset = build_charset(config.num_classes, seed)
    rng = np.random.default_rng(seed)
    samples = [synth_text_line(charset, rng.integers(0, config.num_classes, label_len), o,
                               NoiseConfig.default(), seed + i)
               for i, o in enumerate([Orientation.HORIZONTAL, Orientation.VERTICAL] * 2)]
    pc = PreprocessConfig(config.encoder.height, config.encoder.width)
    data = PreparedSet.build(samples, pc, np.float64)
    return data.batch(np.arange(len(samples))), charset


def relative_error(analytic, numeric, floor):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def _same_signs(a, b):
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def global_grad_check(config=DESK_CONFIG, tolerance=1e-4, entries_per_tensor=3, step=1e-4,
                      floor=1e-6, seed=0, terms=("L_total",) + TERMS, min_step=1e-8):
    """Compare analytic gradients with central differences for ``L_total`` and each term.

    For every parameter tensor, ``entries_per_tensor`` seeded entries are
    perturbed by ``+-step``.  If a perturbation flips any ReLU, the difference
    straddles a kink and is retaken with a ten times smaller step (down to
    ``min_step``).  A ReLU input that is exactly zero stays a kink at any
    step; there the one-sided difference from the side that keeps the
    unperturbed masks is used, since that is the derivative backprop takes.
    The relative error uses ``floor`` as the smallest
    denominator so exact zeros compare on an absolute scale.
    """
    t0 = time.perf_counter()
    config = dataclasses.replace(config, dtype="float64")
    model = TextRecognizer(config, seed=seed)
    model.train()
    batch, charset = desk_batch(config, seed)
    printed = printed_targets(charset, np.float64)
    params = list(model.named_parameters())
    pick = np.random.default_rng([seed, 1])
    chosen = {name: pick.choice(p.data.size, min(entries_per_tensor, p.data.size), replace=False)
              for name, p in params}

    def loss(term):
        if term == "L_total":
            weights, only = LossWeights(), TERMS
        else:
            weights, only = LossWeights(1.0, 1.0, 1.0), (term,)
        with ag.record_relu_signs() as signs:
            report = forward(model, batch, printed, weights, np.random.default_rng([seed, 2]), only).report
        return report.total, signs

    max_error, touched, count, retries = {}, {}, 0, 0
    for term in terms:
        for _, p in params:
            p.grad = None
        total, base_signs = loss(term)
        base_value = float(total.data)
        total.backward()
        grads = {name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy()) for name, p in params}
        touched[term] = {module_of(n) for n, g in grads.items() if np.any(g != 0)}
        errs = {}
        for name, p in params:
            flat = p.data.reshape(-1)
            for k in chosen[name]:
                orig = flat[k]
                h = step
                while True:
                    flat[k] = orig + h
                    up, s_up = loss(term)
                    flat[k] = orig - h
                    down, s_down = loss(term)
                    flat[k] = orig
                    smooth = _same_signs(s_up, base_signs) and _same_signs(s_down, base_signs)
                    if smooth or h / 10 < min_step:
                        break
                    h /= 10
                    retries += 1
                if smooth:
                    numeric = (float(up.data) - float(down.data)) / (2 * h)
                elif _same_signs(s_down, base_signs):
                    # sitting exactly on a kink: backprop takes the side whose masks match
                    numeric = (base_value - float(down.data)) / h
                elif _same_signs(s_up, base_signs):
                    numeric = (float(up.data) - base_value) / h
                else:
                    numeric = (float(up.data) - float(down.data)) / (2 * h)
                e = relative_error(float(grads[name].reshape(-1)[k]), numeric, floor)
                mod = module_of(name)
                errs[mod] = max(errs.get(mod, 0.0), e)
                count += 1
        max_error[term] = errs
    return GradCheckReport(tolerance, max_error, touched, count, retries, time.perf_counter() - t0)

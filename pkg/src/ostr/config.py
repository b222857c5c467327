"""Flat ``section.key=value`` run configuration.

Resolution order: defaults <- config file <- explicit overrides.  The
serialized text is embedded in checkpoints and reports.
"""
from __future__ import annotations

import hashlib
from pathlib import Path

from .cirn import CirnConfig
from .corpus import NoiseConfig
from .encoder import EncoderConfig
from .errors import InvalidArgument
from .model import ModelConfig
from .objectives import LossWeights
from .preprocess import PreprocessConfig

DEFAULTS = {
    "seed": 7,
    "data.classes": 64,
    "data.charset_seed": 7,
    "data.seed": 7,
    "data.train": 5000,
    "data.val": 500,
    "data.test": 500,
    "data.vertical_test": 500,
    "data.vertical_frac": 0.2,
    "data.min_len": 1,
    "data.max_len": 4,
    "data.noise.background": 0.3,
    "data.noise.contrast_min": 0.6,
    "data.noise.jitter": 1.5,
    "data.noise.pixel_sigma": 0.06,
    "preprocess.canonical_height": 32,
    "preprocess.canonical_width": 128,
    "preprocess.vertical_aspect_threshold": 1.5,
    "preprocess.rotation": True,
    "model.base_channels": 16,
    "model.blocks_per_stage": 2,
    "model.num_heads": 4,
    "model.num_layers": 2,
    "model.ffn_dim": 0,
    "model.max_steps": 14,
    "model.content_dim": 64,
    "model.orient_dim": 64,
    "model.deconv_channels": "64,32,16,8",
    "model.dtype": "float32",
    "loss.alpha": 1.0,
    "loss.beta": 1.0,
    "loss.gamma": 5.0,
    "train.learning_rate": 1.0,
    "train.rho": 0.9,
    "train.eps": 1e-6,
    "train.weight_decay": 1e-4,
    "train.batch_size": 16,
    "train.epochs": 4,
    "train.steps": 0,
    "train.min_vertical_per_batch": 2,
    "train.eval_every": 200,
    "train.eval_samples": 0,
    "train.stop_at_acc": 0.0,
}

# full-scale preset: 256-wide canonical images, batch 64
FULL_SCALE_PRESET = {
    "preprocess.canonical_width": 256,
    "data.max_len": 8,
    "model.base_channels": 32,
    "train.batch_size": 64,
}


def _parse(key, raw):
    default = DEFAULTS[key]
    if isinstance(default, bool):
        low = str(raw).strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise InvalidArgument(f"{key}: expected a boolean, got {raw!r}")
    try:
        return type(default)(raw)
    except (TypeError, ValueError) as e:
        raise InvalidArgument(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from e


class RunConfig:
    def __init__(self, values=None):
        self.values = dict(DEFAULTS)
        if values:
            self.update(values)

    def update(self, values):
        for key, raw in values.items():
            if key not in DEFAULTS:
                raise InvalidArgument(f"unknown configuration key {key!r}")
            self.values[key] = _parse(key, raw)
        return self

    def copy(self, overrides=None):
        return RunConfig(self.values).update(overrides or {})

    def __getitem__(self, key):
        return self.values[key]

    def to_text(self):
        return "".join(f"{k}={_format(v)}\n" for k, v in self.values.items())

    @classmethod
    def from_text(cls, text):
        values = {}
        for n, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise InvalidArgument(f"config line {n}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
        return cls(values)

    @classmethod
    def from_file(cls, path):
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    def digest(self):
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    # typed views -------------------------------------------------------------
    def model_config(self):
        v = self.values
        return ModelConfig(
            num_classes=v["data.classes"],
            encoder=EncoderConfig(v["model.base_channels"], v["model.blocks_per_stage"],
                                  v["preprocess.canonical_height"], v["preprocess.canonical_width"]),
            num_heads=v["model.num_heads"], num_layers=v["model.num_layers"], ffn_dim=v["model.ffn_dim"],
            max_steps=v["model.max_steps"],
            cirn=CirnConfig(v["model.content_dim"], v["model.orient_dim"],
                            tuple(int(c) for c in v["model.deconv_channels"].split(","))),
            dtype=v["model.dtype"],
        )

    def preprocess_config(self):
        v = self.values
        return PreprocessConfig(v["preprocess.canonical_height"], v["preprocess.canonical_width"],
                                v["preprocess.vertical_aspect_threshold"], v["preprocess.rotation"])

    def loss_weights(self):
        v = self.values
        return LossWeights(v["loss.alpha"], v["loss.beta"], v["loss.gamma"])

    def noise(self):
        v = self.values
        return NoiseConfig(v["data.noise.background"], v["data.noise.contrast_min"],
                           v["data.noise.jitter"], v["data.noise.pixel_sigma"])


def _format(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


# ablation variants: (rotation, L_c, L_o, L_r)
VARIANTS = {
    "base": (False, False, False, False),
    "rotation": (True, False, False, False),
    "rot+lc+lo": (True, True, True, False),
    "rot+lc+lr": (True, True, False, True),
    "rot+lo+lr": (True, False, True, True),
    "full": (True, True, True, True),
}


def apply_variant(config, name):
    """Return a copy of ``config`` with the variant's switches applied.

    Disabled loss terms get weight 0; enabled ones keep the configured weight.
    """
    if name not in VARIANTS:
        raise InvalidArgument(f"unknown variant {name!r}; choose from {sorted(VARIANTS)}")
    rotation, lc, lo, lr = VARIANTS[name]
    out = config.copy({"preprocess.rotation": rotation})
    for enabled, key in ((lc, "loss.beta"), (lo, "loss.alpha"), (lr, "loss.gamma")):
        if not enabled:
            out.values[key] = 0.0
    return out

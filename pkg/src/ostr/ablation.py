"""The synthetic benchmark and the variant-by-seed ablation runner."""
from __future__ import annotations

import dataclasses
import logging
import statistics

from .config import apply_variant
from .corpus import build_charset, synth_split
from .evaluation import ModelRecognizer, evaluate
from .train import train

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test", "test_vertical")


def split_counts(config):
    """Split sizes in generation order; the vertical-only test split overrides the fraction."""
    return {"train": config["data.train"], "val": config["data.val"], "test": config["data.test"],
            "test_vertical": (config["data.vertical_test"], 1.0)}


def benchmark_charset(config):
    return build_charset(config["data.classes"], config["data.charset_seed"])


def benchmark_data(config, charset=None):
    """In-memory copy of what ``generate_dataset`` writes for the same config."""
    charset = charset or benchmark_charset(config)
    splits = {}
    for k, (name, size) in enumerate(split_counts(config).items()):
        n, frac = (size, config["data.vertical_frac"]) if isinstance(size, int) else size
        splits[name] = list(synth_split(charset, n, frac, [config["data.seed"], k], config.noise(),
                                        config["data.min_len"], config["data.max_len"], name))
    return charset, splits


@dataclasses.dataclass
class AblationRun:
    variant: str
    seed: int
    test: object            # EvalResult on the mixed test split
    vertical: object        # EvalResult on the vertical-only split
    seconds: float
    steps: int
    model: object = None
    config: object = None
    history: list = None       # per-step loss entries
    checkpoint: object = None  # final Checkpoint, kept alongside the model


def run_ablation(config, variants=("base", "rotation", "full"), seeds=(0, 1, 2), data=None,
                 keep_models=("full",), on_run=None):
    """Train every variant with every seed on one fixed dataset and score it.

    Seeds change initialization, batch order and pairing; the data stay put.
    """
    charset, splits = data or benchmark_data(config)
    runs = []
    for variant in variants:
        for seed in seeds:
            cfg = apply_variant(config, variant).copy({"seed": seed})
            result = train(splits["train"], charset, cfg, splits["val"], log_every=0)
            rec = ModelRecognizer(result.model, cfg.preprocess_config())
            run = AblationRun(variant, seed, evaluate(rec, splits["test"], charset),
                              evaluate(rec, splits["test_vertical"], charset), result.seconds,
                              len(result.history), config=cfg, history=result.history)
            if variant in keep_models:
                run.model, run.checkpoint = result.model, result.checkpoint
            log.info("%s seed %d: test acc %.4f, vertical acc %.4f (%.0fs)", variant, seed,
                     run.test.acc, run.vertical.acc, run.seconds)
            runs.append(run)
            if on_run:
                on_run(run)
    return runs


def medians(runs, split="test", metric="acc"):
    by_variant = {}
    for r in runs:
        by_variant.setdefault(r.variant, []).append(getattr(getattr(r, split), metric))
    return {v: statistics.median(xs) for v, xs in by_variant.items()}


def report_rows(runs):
    rows = []
    for r in runs:
        rows.append(r.test.row(f"{r.variant}/seed{r.seed}", "test"))
        rows.append(r.vertical.row(f"{r.variant}/seed{r.seed}", "test_vertical"))
    return rows

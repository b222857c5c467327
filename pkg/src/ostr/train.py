"""Batch composition, AdaDelta, and the training loop."""
from __future__ import annotations

import dataclasses
import logging
import time
import warnings

import numpy as np

from . import checkpoint as ckpt_io
from .corpus import DatasetManifest, Orientation
from .errors import InvalidArgument, TrainingDivergence
from .evaluation import ModelRecognizer, evaluate
from .model import Batch, TextRecognizer, forward, printed_targets
from .preprocess import preprocess_batch

log = logging.getLogger(__name__)


# --- batch composition ---------------------------------------------------------

def _vertical_flags(source):
    if isinstance(source, DatasetManifest):
        return np.array([Orientation(r.orientation) is Orientation.VERTICAL for r in source.records])
    if isinstance(source, (list, tuple)) and source and hasattr(source[0], "orientation"):
        return np.array([Orientation(s.orientation) is Orientation.VERTICAL for s in source])
    return np.asarray(source, dtype=bool)


def compose_batch(source, batch_size, min_vertical=2, seed=0, step=0):
    """Indices of the training batch for ``step``.

    ``source`` is a manifest, a sample list or a boolean vertical-flag array.
    Each epoch is a seeded permutation cut into ``n // batch_size`` batches.
    A batch short of ``min_vertical`` samples of either orientation has its
    surplus entries swapped for the missing kind, drawn from outside the batch.
    """
    vertical = _vertical_flags(source)
    n = len(vertical)
    if batch_size < 2:
        raise InvalidArgument(f"batch_size must be >= 2, got {batch_size}")
    if batch_size > n:
        raise InvalidArgument(f"batch_size {batch_size} exceeds dataset size {n}")
    nv = int(vertical.sum())
    if min_vertical > 0 and (nv == 0 or nv == n):
        warnings.warn("dataset has a single orientation; ignoring min_vertical", stacklevel=2)
        min_vertical = 0
    min_vertical = min(min_vertical, batch_size // 2, nv, n - nv)

    per_epoch = n // batch_size
    epoch, slot = divmod(step, per_epoch)
    perm = np.random.default_rng([seed, epoch]).permutation(n)
    batch = perm[slot * batch_size:(slot + 1) * batch_size].copy()
    if min_vertical == 0:
        return batch

    rng = np.random.default_rng([seed, epoch, slot, 2])
    for want_vertical in (True, False):
        kind = vertical[batch] == want_vertical
        short = min_vertical - int(kind.sum())
        if short <= 0:
            continue
        pool = np.setdiff1d(np.flatnonzero(vertical == want_vertical), batch)
        fill = rng.choice(pool, size=short, replace=False)
        # replace the last entries of the over-represented orientation
        victims = np.flatnonzero(~kind)[-short:]
        batch[victims] = fill
    return batch


# --- optimizer -----------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class AdaDeltaConfig:
    learning_rate: float = 1.0
    rho: float = 0.9
    eps: float = 1e-6
    weight_decay: float = 1e-4

    def __post_init__(self):
        if not 0 < self.rho < 1:
            raise InvalidArgument(f"rho must lie in (0, 1), got {self.rho}")


def adadelta_step(params, grads, accumulators, config=AdaDeltaConfig()):
    """One AdaDelta update, in place.

    ``accumulators`` is ``{"sq": [...], "delta": [...]}`` (running means of
    g^2 and of update^2).  A ``None`` gradient leaves that parameter
    untouched, decay included.  Decay is decoupled: ``p -= lr * wd * p``.
    """
    rho, eps, lr, wd = config.rho, config.eps, config.learning_rate, config.weight_decay
    for g in grads:
        if g is not None and not np.all(np.isfinite(g)):
            raise TrainingDivergence("non-finite gradient")
    for p, g, sq, acc in zip(params, grads, accumulators["sq"], accumulators["delta"]):
        if g is None:
            continue
        if p.shape != g.shape:
            raise InvalidArgument(f"gradient shape {g.shape} != parameter shape {p.shape}")
        sq *= rho
        sq += (1 - rho) * g * g
        update = np.sqrt(acc + eps) / np.sqrt(sq + eps) * g
        acc *= rho
        acc += (1 - rho) * update * update
        decay = lr * wd * p if wd else 0.0
        p -= lr * update
        p -= decay
    return params


class AdaDelta:
    def __init__(self, named_params, config=AdaDeltaConfig()):
        self.config = config
        self.names, self.params = zip(*named_params) if named_params else ((), ())
        self.sq = [np.zeros_like(p.data) for p in self.params]
        self.delta = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        adadelta_step([p.data for p in self.params], [p.grad for p in self.params],
                      {"sq": self.sq, "delta": self.delta}, self.config)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def state_arrays(self):
        for n, a in zip(self.names, self.sq):
            yield f"sq/{n}", a
        for n, a in zip(self.names, self.delta):
            yield f"delta/{n}", a

    def load_state(self, state):
        for i, n in enumerate(self.names):
            self.sq[i][...] = state[f"sq/{n}"]
            self.delta[i][...] = state[f"delta/{n}"]


# --- training loop ---------------------------------------------------------------

@dataclasses.dataclass
class PreparedSet:
    images: np.ndarray
    widths: np.ndarray
    labels: list
    vertical: np.ndarray
    samples: list

    @classmethod
    def build(cls, samples, preprocess_config, dtype=np.float32):
        images, widths, _, kept = preprocess_batch(samples, preprocess_config)
        kept_samples = [samples[i] for i in kept]
        vertical = np.array([Orientation(s.orientation) is Orientation.VERTICAL for s in kept_samples])
        return cls(images.astype(dtype), widths, [list(s.label) for s in kept_samples], vertical, kept_samples)

    def batch(self, idx):
        return Batch(self.images[idx], self.widths[idx], [self.labels[i] for i in idx], self.vertical[idx])


@dataclasses.dataclass
class TrainResult:
    model: TextRecognizer
    history: list           # one dict of loss values per step
    validation: list        # (step, acc, ned)
    checkpoint: ckpt_io.Checkpoint
    best_step: int
    seconds: float


def total_steps(config, n):
    steps = config["train.steps"]
    return steps if steps > 0 else config["train.epochs"] * (n // config["train.batch_size"])


def train(train_samples, charset, config, val_samples=None, model=None, checkpoint_path=None,
          log_every=50, on_step=None):
    """Train a recognizer and return the best-validation weights.

    Without ``val_samples`` the final weights are kept.  With
    ``train.stop_at_acc`` > 0, training ends at the first validation whose
    ACC reaches it.  A non-finite loss or
    gradient raises ``TrainingDivergence`` carrying the last-good checkpoint
    (also written to ``checkpoint_path`` when given).
    """
    t0 = time.perf_counter()
    seed = config["seed"]
    pc = config.preprocess_config()
    weights = config.loss_weights()
    model = model or TextRecognizer(config.model_config(), seed=seed)
    data = PreparedSet.build(train_samples, pc, model.dtype)
    opt = AdaDelta(list(model.named_parameters()), AdaDeltaConfig(
        config["train.learning_rate"], config["train.rho"], config["train.eps"], config["train.weight_decay"]))
    printed = printed_targets(charset, model.dtype)
    text = config.to_text()
    bs = config["train.batch_size"]
    steps = total_steps(config, len(data.labels))
    eval_every = config["train.eval_every"]
    stop_at = config["train.stop_at_acc"]
    if val_samples is not None and config["train.eval_samples"] > 0:
        val_samples = val_samples[:config["train.eval_samples"]]

    history, validation = [], []
    best = last_good = ckpt_io.capture(model, opt, 0, text)
    best_acc, best_step = -1.0, 0

    def validate(step):
        nonlocal best, best_acc, best_step, last_good
        res = evaluate(ModelRecognizer(model, pc), val_samples, charset)
        validation.append((step, res.acc, res.ned))
        log.info("step %d: val acc %.4f ned %.4f", step, res.acc, res.ned)
        last_good = ckpt_io.capture(model, opt, step, text)
        if res.acc > best_acc:
            best, best_acc, best_step = last_good, res.acc, step

    model.train()
    for step in range(steps):
        idx = compose_batch(data.vertical, bs, config["train.min_vertical_per_batch"], seed, step)
        try:
            opt.zero_grad()
            result = forward(model, data.batch(idx), printed, weights, np.random.default_rng([seed, step, 1]))
            result.report.total.backward()
            opt.step()
        except TrainingDivergence as e:
            e.checkpoint = last_good
            if checkpoint_path:
                ckpt_io.save(checkpoint_path, last_good)
            log.error("diverged at step %d: %s", step, e)
            raise
        entry = {"step": step, **result.report.as_dict()}
        history.append(entry)
        if on_step:
            on_step(entry)
        if log_every and step % log_every == 0:
            log.info("step %d/%d: %s", step, steps, " ".join(f"{k}={v:.4f}" for k, v in entry.items() if k != "step"))
        if val_samples is not None and eval_every and (step + 1) % eval_every == 0:
            validate(step + 1)
            model.train()
            if stop_at and validation[-1][1] >= stop_at:
                log.info("validation ACC reached %.4f at step %d; stopping", validation[-1][1], step + 1)
                steps = step + 1
                break

    if val_samples is not None:
        if not validation or validation[-1][0] != steps:
            validate(steps)
        ckpt_io.restore(model, best, opt)
        final = best
    else:
        final = ckpt_io.capture(model, opt, steps, text)
        best_step = steps
    model.eval()
    if checkpoint_path:
        ckpt_io.save(checkpoint_path, final)
    return TrainResult(model, history, validation, final, best_step, time.perf_counter() - t0)


def load_model(path, config=None):
    """Rebuild a recognizer from a checkpoint, using its embedded config unless one is given."""
    from .config import RunConfig

    ck = ckpt_io.load(path)
    config = config or RunConfig.from_text(ck.config_text)
    model = TextRecognizer(config.model_config(), seed=config["seed"])
    ckpt_io.restore(model, ck)
    model.eval()
    return model, config, ck

"""``ostr`` command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage error.  Configuration is
resolved as defaults <- ``OSTR_SEED`` <- ``--preset`` <- ``--config`` file <- flags, and every
path is relative to ``--workdir``.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import autograd as ag
from .ablation import report_rows, run_ablation, split_counts
from .config import FULL_SCALE_PRESET, VARIANTS, RunConfig, apply_variant
from .corpus import (DatasetManifest, build_charset, build_vertical_testset, generate_dataset, load_charset,
                     write_pgm)
from .errors import InvalidArgument, TrainingDivergence
from .evaluation import ModelRecognizer, run_benchmark, similarity_probe, write_report
from .model import forward, printed_targets
from .objectives import LossWeights
from .train import PreparedSet, load_model, train

log = logging.getLogger("ostr")

DATASET_ALIASES = {"vctr": "test_vertical", "vertical": "test_vertical"}


class UsageError(Exception):
    pass


# --- config resolution ---------------------------------------------------------

def resolve_config(args, overrides=None):
    config = RunConfig()
    env_seed = os.environ.get("OSTR_SEED")
    if env_seed is not None:
        config.update({"seed": env_seed})
    if getattr(args, "preset", "desk") == "full":
        config.update(FULL_SCALE_PRESET)
    if args.config:
        config.update(RunConfig.from_file(_path(args, args.config)).values)
    for item in args.set or ():
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        config.update({key.strip(): value.strip()})
    config.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return config


def _path(args, p):
    p = Path(p)
    return p if p.is_absolute() else Path(args.workdir) / p


def _data_dir(args):
    return _path(args, args.data)


def _load_split(args, name, charset):
    name = DATASET_ALIASES.get(name, name)
    manifest = DatasetManifest.read(_data_dir(args) / f"{name}.tsv")
    return manifest.load_samples(charset)


def _charset(args):
    return load_charset(_data_dir(args) / "charset.tsv")


def _variant_config(args, config):
    if args.variant:
        config = apply_variant(config, args.variant)
    flags = {"preprocess.rotation": False if args.no_rotation else None,
             "loss.beta": 0.0 if args.no_lc else args.beta,
             "loss.alpha": 0.0 if args.no_lo else args.alpha,
             "loss.gamma": 0.0 if args.no_lr else args.gamma}
    return config.copy({k: v for k, v in flags.items() if v is not None})


# --- commands ------------------------------------------------------------------

def cmd_gen_data(args):
    if args.vertical_frac is not None and not 0.0 <= args.vertical_frac <= 1.0:
        raise UsageError(f"--vertical-frac must lie in [0, 1], got {args.vertical_frac}")
    config = resolve_config(args, {"data.classes": args.classes, "data.train": args.train, "data.val": args.val,
                                   "data.test": args.test, "data.vertical_frac": args.vertical_frac,
                                   "data.seed": args.seed})
    out = _path(args, args.out)
    charset = build_charset(config["data.classes"], config["data.charset_seed"])
    manifests = generate_dataset(charset, split_counts(config), config["data.vertical_frac"], config["data.seed"],
                                 out, config.noise(), config["data.min_len"], config["data.max_len"])
    vertical = build_vertical_testset(manifests["test_vertical"])
    vertical.write(out / "test_vertical.tsv")
    (out / "run_config.txt").write_text(config.to_text(), encoding="utf-8")
    for name, m in manifests.items():
        c = (vertical if name == "test_vertical" else m).counts()
        print(f"{name}\ttotal={c['total']}\thorizontal={c['horizontal']}\tvertical={c['vertical']}")
    return 0


def _train_inputs(args, config):
    charset = _charset(args)
    config = config.copy({"data.classes": charset.num_classes})
    return charset, config, _load_split(args, "train", charset), _load_split(args, "val", charset)


def cmd_train(args):
    config = _variant_config(args, resolve_config(args, {"seed": args.seed, "train.steps": args.steps}))
    charset, config, train_samples, val_samples = _train_inputs(args, config)
    name = args.variant or "custom"
    out = _path(args, args.out or f"checkpoints/{name}.ostr")
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out.with_suffix(".log.tsv"), "w", encoding="utf-8") as f:
        f.write("".join(f"# config {line}\n" for line in config.to_text().splitlines()))
        f.write("step\tL_t\tL_o\tL_c\tL_r\tL_total\n")

        def on_step(e):
            f.write(f"{e['step']}\t{e['L_t']!r}\t{e['L_o']!r}\t{e['L_c']!r}\t{e['L_r']!r}\t{e['L_total']!r}\n")

        result = train(train_samples, charset, config, val_samples, checkpoint_path=out, on_step=on_step)
    for step, acc, ned in result.validation:
        print(f"val\tstep={step}\tacc={acc:.4f}\tned={ned:.4f}")
    print(f"checkpoint\t{out}\tbest_step={result.best_step}\tseconds={result.seconds:.1f}")
    return 0


def _loader(args, path):
    def load():
        model, config, _ = load_model(_path(args, path))
        return ModelRecognizer(model, config.preprocess_config())
    return load


def cmd_eval(args):
    config = resolve_config(args)
    charset = _charset(args)
    datasets = []
    for name in args.dataset:
        try:
            datasets.append((name, _load_split(args, name, charset)))
        except (OSError, InvalidArgument) as e:
            log.error("dataset %s: %s", name, e)
    if not datasets:
        print("error: no dataset could be loaded", file=sys.stderr)
        return 1
    recognizers = [(Path(c).stem, _loader(args, c)) for c in args.checkpoint]
    rows = run_benchmark(recognizers, datasets, charset)
    out = _path(args, args.report)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_report(rows, out, config.to_text())
    for r in rows:
        if "error" in r:
            print(f"{r['name']}\t{r['dataset']}\terror: {r['error']}")
        else:
            print(f"{r['name']}\t{r['dataset']}\tacc={r['acc']:.4f}\tned={r['ned']:.4f}\tn={r['n']}")
    return 1 if all("error" in r for r in rows) else 0


def cmd_probe(args):
    model, config, _ = load_model(_path(args, args.checkpoint))
    charset = _charset(args)
    seed = args.seed if args.seed is not None else config["seed"]
    lines = ["source\ts_o_mean\ts_o_std\ts_c_mean\ts_c_std\tpairs\tS_o>S_c"]
    for source in args.source or ("raw", "content"):
        r = similarity_probe(model, charset, source, args.pairs, seed, config.preprocess_config(), config.noise(),
                             label_len=max(2, min(3, config["data.max_len"])))
        lines.append(f"{r.source}\t{r.s_o_mean:.6f}\t{r.s_o_std:.6f}\t{r.s_c_mean:.6f}\t{r.s_c_std:.6f}\t"
                     f"{r.pairs}\t{r.conjecture_holds()}")
    text = "\n".join(lines) + "\n"
    print(text, end="")
    out = _path(args, args.report)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("".join(f"# config {ln}\n" for ln in config.to_text().splitlines()) + text, encoding="utf-8")
    return 0


def reconstruction_grid(model, config, charset, samples, count, seed=0):
    """Rows of (H_a, target, V_a, target, H_b, target, V_b, target) tiles, one row per H/V pair."""
    data = PreparedSet.build(samples, config.preprocess_config(), model.dtype)
    h = np.flatnonzero(~data.vertical)[:count]
    v = np.flatnonzero(data.vertical)[:count]
    k = min(len(h), len(v))
    if k == 0:
        raise InvalidArgument("need at least one horizontal and one vertical sample")
    # one character per line keeps the bundle pairing one-to-one
    idx = np.concatenate([h[:k], v[:k]])
    batch = data.batch(idx)
    batch.labels = [lab[:1] for lab in batch.labels]
    upright, rotated = printed = printed_targets(charset, model.dtype)
    model.eval()
    with ag.no_grad():
        res = forward(model, batch, printed, LossWeights(0, 0, 1), np.random.default_rng(seed), ("L_r",))
    recon = res.reconstructions.data
    rows = []
    for r in range(0, len(res.recon_rows) - 3, 4):
        tiles = []
        for img, (_, _, cls, rot, _) in zip(recon[r:r + 4], res.recon_rows[r:r + 4]):
            tiles += [img, rotated[cls] if rot else upright[cls]]
        rows.append(np.concatenate(tiles, axis=1))
    return np.concatenate(rows, axis=0)


def cmd_reconstruct(args):
    model, config, _ = load_model(_path(args, args.checkpoint))
    charset = _charset(args)
    samples = _load_split(args, args.dataset, charset)
    grid = reconstruction_grid(model, config, charset, samples, args.count, args.seed or 0)
    out = _path(args, args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_pgm(out, grid)
    out.with_suffix(".cfg").write_text(config.to_text(), encoding="utf-8")
    print(f"grid\t{out}\t{grid.shape[0] // 32} pairs")
    return 0


def cmd_ablate(args):
    config = resolve_config(args, {"train.steps": args.steps})
    charset = _charset(args)
    config = config.copy({"data.classes": charset.num_classes})
    splits = {name: _load_split(args, name, charset) for name in ("train", "val", "test", "test_vertical")}
    seeds = [int(s) for s in args.seed_list.split(",")] if args.seed_list else list(range(args.seeds))
    variants = args.variants.split(",") if args.variants else list(VARIANTS)
    for v in variants:
        if v not in VARIANTS:
            raise UsageError(f"unknown variant {v!r}; choose from {', '.join(VARIANTS)}")
    runs = run_ablation(config, variants, seeds, data=(charset, splits), keep_models=(),
                        on_run=lambda r: print(f"{r.variant}\tseed={r.seed}\tacc={r.test.acc:.4f}\t"
                                               f"ned={r.test.ned:.4f}\tvertical_acc={r.vertical.acc:.4f}", flush=True))
    out = _path(args, args.report)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_report(report_rows(runs), out, config.to_text())
    print(f"report\t{out}")
    return 0


def cmd_gradcheck(args):
    from .gradcheck import global_grad_check

    report = global_grad_check(tolerance=args.tolerance)
    print("\n".join(report.lines()))
    print(f"entries={report.entries}\tkink_retries={report.kink_retries}\tworst={report.worst():.3e}\t"
          f"seconds={report.seconds:.1f}\t{'PASS' if report.passed() else 'FAIL'}")
    return 0 if report.passed() else 1


# --- parser ----------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--workdir", default=".", help="base directory for every relative path")
    common.add_argument("--preset", choices=["desk", "full"], default="desk",
                        help="desk: 128-wide images, batch 16 (default); full: 256-wide, batch 64")
    common.add_argument("--config", help="key=value configuration file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one configuration key")
    common.add_argument("--data", default="data", help="dataset directory (default: data)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ostr", description="Orientation-disentangled text recognition.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="synthesize the benchmark dataset")
    p.add_argument("--classes", type=int)
    p.add_argument("--train", type=int)
    p.add_argument("--val", type=int)
    p.add_argument("--test", type=int)
    p.add_argument("--vertical-frac", type=float)
    p.add_argument("--seed", type=int, help="data seed")
    p.add_argument("--out", default="data")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", parents=[common], help="train one model variant")
    p.add_argument("--variant", choices=list(VARIANTS))
    p.add_argument("--no-rotation", action="store_true")
    p.add_argument("--no-lc", action="store_true", help="drop the content loss")
    p.add_argument("--no-lo", action="store_true", help="drop the orientation loss")
    p.add_argument("--no-lr", action="store_true", help="drop the reconstruction loss")
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int, help="override the epoch-derived step count")
    p.add_argument("--out", help="checkpoint path (default: checkpoints/<variant>.ostr)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="score checkpoints on datasets")
    p.add_argument("--checkpoint", action="append", required=True)
    p.add_argument("--dataset", action="append", default=None,
                   help="split name, or 'vctr' for the vertical-only split (repeatable)")
    p.add_argument("--report", default="reports/eval.tsv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("probe", parents=[common], help="feature-similarity probe")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--source", action="append", choices=("raw", "content"))
    p.add_argument("--pairs", type=int, default=200)
    p.add_argument("--seed", type=int)
    p.add_argument("--report", default="reports/probe.tsv")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("reconstruct", parents=[common], help="dump H/V reconstruction grids")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", default="test")
    p.add_argument("--count", type=int, default=8, help="number of H/V pairs")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="reports/reconstruction.pgm")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("ablate", parents=[common], help="train and score every variant for several seeds")
    p.add_argument("--seeds", type=int, default=3, help="use seeds 0..N-1")
    p.add_argument("--seed-list", help="explicit comma-separated seeds")
    p.add_argument("--variants", help="comma-separated subset (default: all six)")
    p.add_argument("--steps", type=int)
    p.add_argument("--report", default="reports/ablation.tsv")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every gradient")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "dataset", "") is None:
        args.dataset = ["test"]
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, InvalidArgument) as e:
        print(f"ostr {args.command}: error: {e}", file=sys.stderr)
        return 2
    except TrainingDivergence as e:
        print(f"ostr {args.command}: training diverged: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"ostr {args.command}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

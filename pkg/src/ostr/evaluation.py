"""Text normalization, ACC / NED metrics, the feature-similarity probe and the
benchmark runner."""
from __future__ import annotations

import dataclasses
import io
import logging
from pathlib import Path

import numpy as np

from . import autograd as ag
from .cirn import char_features, extract_content
from .corpus import NoiseConfig, Orientation, synth_text_line
from .decoder import shift_right
from .errors import InvalidArgument
from .preprocess import PreprocessConfig, preprocess_batch

log = logging.getLogger(__name__)

REPORT_SCHEMA = "ostr-bench-v1"
REPORT_FIELDS = ("name", "dataset", "acc", "ned", "acc_h", "ned_h", "acc_v", "ned_v", "n")


# --- normalization ---------------------------------------------------------

def full_width_table():
    """Full-width ASCII variants (U+FF01..U+FF5E) and the ideographic space."""
    table = {chr(cp): chr(cp - 0xFEE0) for cp in range(0xFF01, 0xFF5F)}
    table["　"] = " "
    return table


# small demonstration table; load a full one with load_rule_table
SIMPLIFY_DEMO = {
    "體": "体", "門": "门", "車": "车", "馬": "马", "電": "电",
    "語": "语", "長": "长", "東": "东", "魚": "鱼", "鳥": "鸟",
}


def load_rule_table(path):
    """UTF-8 TSV, one ``from<TAB>to`` mapping per line."""
    table = {}
    with open(path, encoding="utf-8") as f:
        for n, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise InvalidArgument(f"{path}:{n}: expected from<TAB>to")
            table[parts[0]] = parts[1]
    return table


@dataclasses.dataclass(frozen=True)
class NormalizationRules:
    """Applied in this order: width fold, script simplification, case fold, space removal."""

    width_fold: dict = dataclasses.field(default_factory=full_width_table)
    simplify: dict = dataclasses.field(default_factory=lambda: dict(SIMPLIFY_DEMO))
    case_fold: bool = True
    strip_whitespace: bool = True

    @classmethod
    def none(cls):
        return cls({}, {}, False, False)


def _map_symbols(s, table):
    return "".join(table.get(ch, ch) for ch in s) if table else s


def normalize_text(s, rules=NormalizationRules()):
    s = _map_symbols(s, rules.width_fold)
    s = _map_symbols(s, rules.simplify)
    if rules.case_fold:
        s = s.lower()
    if rules.strip_whitespace:
        s = "".join(s.split())
    return s


# --- metrics -----------------------------------------------------------------

def edit_distance(a, b):
    """Levenshtein distance with unit insert / delete / substitute costs."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def _check_pairs(preds, labels):
    if len(preds) != len(labels):
        raise InvalidArgument(f"{len(preds)} predictions for {len(labels)} labels")
    if not preds:
        raise InvalidArgument("need at least one prediction")


def compute_acc(preds, labels, rules=NormalizationRules()):
    _check_pairs(preds, labels)
    hits = sum(normalize_text(p, rules) == normalize_text(y, rules) for p, y in zip(preds, labels))
    return hits / len(preds)


def ned_term(pred, label):
    """ED / maxlen for one normalized pair; two empty strings count as identical."""
    m = max(len(pred), len(label))
    return 0.0 if m == 0 else edit_distance(pred, label) / m


def compute_ned(preds, labels, rules=NormalizationRules()):
    _check_pairs(preds, labels)
    total = sum(ned_term(normalize_text(p, rules), normalize_text(y, rules)) for p, y in zip(preds, labels))
    return 1.0 - total / len(preds)


@dataclasses.dataclass
class EvalResult:
    acc: float
    ned: float
    n: int
    by_orientation: dict = dataclasses.field(default_factory=dict)

    def row(self, name, dataset):
        h = self.by_orientation.get("H", (float("nan"), float("nan"), 0))
        v = self.by_orientation.get("V", (float("nan"), float("nan"), 0))
        return {"name": name, "dataset": dataset, "acc": self.acc, "ned": self.ned,
                "acc_h": h[0], "ned_h": h[1], "acc_v": v[0], "ned_v": v[1], "n": self.n}


def score(pred_strings, label_strings, orientations, rules=NormalizationRules()):
    result = EvalResult(compute_acc(pred_strings, label_strings, rules),
                        compute_ned(pred_strings, label_strings, rules), len(pred_strings))
    orientations = [Orientation(o).value for o in orientations]
    for key in ("H", "V"):
        idx = [i for i, o in enumerate(orientations) if o == key]
        if idx:
            p = [pred_strings[i] for i in idx]
            y = [label_strings[i] for i in idx]
            result.by_orientation[key] = (compute_acc(p, y, rules), compute_ned(p, y, rules), len(idx))
    return result


# --- recognizers ----------------------------------------------------------------

class ModelRecognizer:
    """Preprocess + greedy decode; samples overflowing the canonical width predict ''."""

    def __init__(self, model, preprocess_config=PreprocessConfig(), batch_size=64):
        self.model = model
        self.preprocess_config = preprocess_config
        self.batch_size = batch_size

    def predict(self, samples):
        out = [[] for _ in samples]
        for start in range(0, len(samples), self.batch_size):
            chunk = samples[start:start + self.batch_size]
            images, widths, _, kept = preprocess_batch(chunk, self.preprocess_config)
            if not kept:
                continue
            for i, seq in zip(kept, self.model.recognize(images, widths)):
                out[start + i] = seq
        return out


class OracleRecognizer:
    def predict(self, samples):
        return [list(s.label) for s in samples]


class EmptyRecognizer:
    def predict(self, samples):
        return [[] for _ in samples]


def evaluate(recognizer, samples, charset, rules=NormalizationRules()):
    preds = recognizer.predict(samples)
    return score([charset.encode(p) for p in preds], [charset.encode(s.label) for s in samples],
                 [s.orientation for s in samples], rules)


# --- similarity probe ------------------------------------------------------------

@dataclasses.dataclass
class SimilarityReport:
    source: str
    s_o_mean: float
    s_o_std: float
    s_c_mean: float
    s_c_std: float
    pairs: int

    def conjecture_holds(self):
        """True when same-orientation pairs are more similar than same-content pairs."""
        return self.s_o_mean > self.s_c_mean


def cosine(a, b):
    a = np.ravel(a).astype(np.float64)
    b = np.ravel(b).astype(np.float64)
    den = np.linalg.norm(a) * np.linalg.norm(b)
    return float(a @ b / den) if den > 0 else 0.0


def _features(model, samples, preprocess_config, source):
    """Per-sample feature arrays: flattened F (raw) or per-character content vectors."""
    images, widths, vertical, kept = preprocess_batch(samples, preprocess_config)
    if len(kept) != len(samples):
        raise InvalidArgument("probe samples overflow the canonical width")
    was = model.training
    model.eval()
    try:
        with ag.no_grad():
            f = model.encoder(images.astype(model.dtype))
            if source == "raw":
                return [f.data[i].ravel() for i in range(len(samples))]
            labels = [s.label for s in samples]
            inputs, _ = shift_right(labels, model.decoder.config)
            _, trace = model.decoder(f, inputs, widths)
            gh, gw = f.shape[1:3]
            attn = trace.mean.data.reshape(len(samples), -1, gh, gw)
            fmaps = np.broadcast_to(f.data[:, None], attn.shape + (f.shape[-1],))
            _, cvec = extract_content(model.cirn, char_features(fmaps, attn))
            return [cvec.data[i, :len(labels[i])] for i in range(len(samples))]
    finally:
        model.train(was)


def similarity_probe(model, charset, feature_source="raw", num_pairs=200, seed=0,
                     preprocess_config=PreprocessConfig(), noise=NoiseConfig(), label_len=3):
    """Mean cosine similarity of same-orientation/different-content pairs (S_o)
    versus same-content/different-orientation pairs (S_c).

    Raw features compare whole flattened feature maps; content features
    compare content vectors character by character.
    """
    if feature_source not in ("raw", "content"):
        raise InvalidArgument(f"feature_source must be 'raw' or 'content', got {feature_source!r}")
    if num_pairs < 1 or charset.num_classes < 2:
        raise InvalidArgument("need at least one pair and two classes")
    if label_len < 2:
        raise InvalidArgument("probe lines need at least two characters to be drawn vertically")
    rng = np.random.default_rng(seed)
    so_a, so_b, sc_a, sc_b = [], [], [], []
    for _ in range(num_pairs):
        la = rng.integers(0, charset.num_classes, label_len)
        lb = rng.integers(0, charset.num_classes, label_len)
        while np.any(la == lb):
            lb = rng.integers(0, charset.num_classes, label_len)
        o = Orientation.VERTICAL if rng.random() < 0.5 else Orientation.HORIZONTAL
        s1, s2, s3, s4 = (int(x) for x in rng.integers(2**63, size=4))
        so_a.append(synth_text_line(charset, la, o, noise, s1))
        so_b.append(synth_text_line(charset, lb, o, noise, s2))
        lc = rng.integers(0, charset.num_classes, label_len)
        sc_a.append(synth_text_line(charset, lc, Orientation.HORIZONTAL, noise, s3))
        sc_b.append(synth_text_line(charset, lc, Orientation.VERTICAL, noise, s4))

    def sims(xs, ys):
        fx = _features(model, xs, preprocess_config, feature_source)
        fy = _features(model, ys, preprocess_config, feature_source)
        if feature_source == "raw":
            return np.array([cosine(a, b) for a, b in zip(fx, fy)])
        return np.array([np.mean([cosine(u, v) for u, v in zip(a, b)]) for a, b in zip(fx, fy)])

    so = sims(so_a, so_b)
    sc = sims(sc_a, sc_b)
    return SimilarityReport(feature_source, float(so.mean()), float(so.std()),
                            float(sc.mean()), float(sc.std()), num_pairs)


# --- benchmark ------------------------------------------------------------------

def run_benchmark(recognizers, datasets, charset, rules=NormalizationRules()):
    """Evaluate every (name, recognizer) on every (name, samples).

    A recognizer entry may be a zero-argument callable returning the
    recognizer (e.g. a checkpoint loader); if it raises, that row records
    the error and the run continues.
    """
    rows = []
    for name, rec in recognizers:
        try:
            rec = rec() if callable(rec) and not hasattr(rec, "predict") else rec
        except Exception as e:  # report per row, keep going
            log.warning("cannot load %s: %s", name, e)
            rows += [{"name": name, "dataset": ds, "error": str(e)} for ds, _ in datasets]
            continue
        for ds_name, samples in datasets:
            rows.append(evaluate(rec, samples, charset, rules).row(name, ds_name))
    return rows


def format_report(rows, config_text=""):
    buf = io.StringIO()
    buf.write(f"# schema={REPORT_SCHEMA}\n")
    for line in config_text.splitlines():
        buf.write(f"# config {line}\n")
    buf.write("\t".join(REPORT_FIELDS) + "\n")
    for r in rows:
        if "error" in r:
            buf.write(f"{r['name']}\t{r['dataset']}\terror={r['error']}\n")
            continue
        cells = []
        for k in REPORT_FIELDS:
            v = r[k]
            cells.append(f"{v:.6f}" if isinstance(v, float) else str(v))
        buf.write("\t".join(cells) + "\n")
    return buf.getvalue()


def parse_report(text):
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    header = lines[0].split("\t")
    rows = []
    for ln in lines[1:]:
        cells = ln.split("\t")
        if len(cells) != len(header):
            rows.append({"name": cells[0], "dataset": cells[1], "error": cells[2].removeprefix("error=")})
            continue
        row = dict(zip(header, cells))
        for k in header[2:]:
            row[k] = int(row[k]) if k == "n" else float(row[k])
        rows.append(row)
    return rows


def write_report(rows, path, config_text=""):
    Path(path).write_text(format_report(rows, config_text), encoding="utf-8")


# --- disentanglement diagnostics ---------------------------------------------------

def _teacher_forced(model, samples, preprocess_config, printed, terms, weights, seed, batch_size):
    from .model import forward
    from .objectives import LossWeights
    from .train import PreparedSet

    data = PreparedSet.build(samples, preprocess_config, model.dtype)
    was = model.training
    model.eval()
    try:
        with ag.no_grad():
            for k, start in enumerate(range(0, len(data.labels), batch_size)):
                idx = np.arange(start, min(start + batch_size, len(data.labels)))
                yield forward(model, data.batch(idx), printed, LossWeights(*weights), np.random.default_rng([seed, k]),
                              terms)
    finally:
        model.train(was)


def head_accuracy(model, samples, charset, preprocess_config=PreprocessConfig(), batch_size=64):
    """Accuracy of the orientation and content heads on every character bundle of ``samples``.

    Bundles come from teacher-forced decoding, so the attention maps follow
    the ground-truth prefix.
    """
    from .model import printed_targets

    printed = printed_targets(charset, model.dtype)
    hits_o = hits_c = total = 0
    for res in _teacher_forced(model, samples, preprocess_config, printed, ("L_o", "L_c"), (1, 1, 0), 0, batch_size):
        hits_o += int((res.orient_logits.data.argmax(-1) == res.bundle_vertical).sum())
        hits_c += int((res.class_logits.data.argmax(-1) == res.bundle_classes).sum())
        total += len(res.bundle_classes)
    return {"orientation": hits_o / total, "content": hits_c / total, "bundles": total}


@dataclasses.dataclass
class ReconstructionReport:
    mse: float              # mean per-pixel MSE over every reconstruction
    swap_correct: float     # share of swapped outputs closer to the rotated glyph than to the upright one
    swaps: int
    images: int


def reconstruction_fidelity(model, samples, charset, preprocess_config=PreprocessConfig(), seed=0, batch_size=64):
    """Score H/V reconstructions against the printed targets.

    A swap output takes the content of a horizontal character and the
    orientation of a vertical one, so it should resemble the rotated glyph.
    """
    from .model import printed_targets

    upright, rotated = printed = printed_targets(charset, model.dtype)
    sq_err, pixels, swaps, correct, images = 0.0, 0, 0, 0, 0
    for res in _teacher_forced(model, samples, preprocess_config, printed, ("L_r",), (0, 0, 1), seed, batch_size):
        recon = res.reconstructions.data.astype(np.float64)
        for img, (ci, oi, cls, rot, _) in zip(recon, res.recon_rows):
            target = rotated[cls] if rot else upright[cls]
            sq_err += float(np.sum((img - target) ** 2))
            pixels += img.size
            images += 1
            if ci != oi and rot:
                swaps += 1
                correct += np.mean((img - rotated[cls]) ** 2) < np.mean((img - upright[cls]) ** 2)
    return ReconstructionReport(sq_err / max(pixels, 1), correct / swaps if swaps else float("nan"), swaps, images)

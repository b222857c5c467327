"""Procedural glyph alphabet, printed references and synthetic text lines.

Glyphs are random anti-aliased strokes on a 32x32 canvas.  Pixel values are
quantized to multiples of 1/255 at creation so that every image survives the
8-bit PGM round trip bit-exactly.  Ink is bright (1.0), background dark.
"""
from __future__ import annotations

import dataclasses
import enum
import os
import warnings
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import DatasetWriteError, InvalidArgument

GLYPH_SIZE = 32
MAX_LABEL_LEN = 12
MAX_CLASSES = 4096
# class symbols start at U+4E00 so that no symbol is touched by case folding,
# width folding or whitespace stripping
SYMBOL_BASE = 0x4E00
DEFAULT_REJECT = ("unrecognizable", "multiline", "oblique")


class Orientation(str, enum.Enum):
    HORIZONTAL = "H"
    VERTICAL = "V"


def rot90ccw(image):
    return np.rot90(image, 1)


def quantize(image):
    return np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0


@dataclasses.dataclass(frozen=True)
class GlyphSpec:
    class_id: int
    bitmap: np.ndarray


@dataclasses.dataclass(frozen=True)
class Charset:
    num_classes: int
    glyphs: list
    seed: int

    def symbol(self, class_id):
        return chr(SYMBOL_BASE + int(class_id))

    def encode(self, label):
        """Class ids -> label string."""
        return "".join(self.symbol(c) for c in label)

    def decode(self, text):
        """Label string -> class ids."""
        ids = [ord(ch) - SYMBOL_BASE for ch in text]
        if any(not 0 <= i < self.num_classes for i in ids):
            raise InvalidArgument(f"label {text!r} has symbols outside the charset")
        return ids

    def bitmaps(self):
        return np.stack([g.bitmap for g in self.glyphs])


def _segment_distance(yy, xx, p0, p1):
    d = p1 - p0
    t = ((yy - p0[0]) * d[0] + (xx - p0[1]) * d[1]) / max(float(d @ d), 1e-9)
    t = np.clip(t, 0.0, 1.0)
    return np.hypot(yy - (p0[0] + t * d[0]), xx - (p0[1] + t * d[1]))


def _draw_glyph(rng):
    yy, xx = np.mgrid[0:GLYPH_SIZE, 0:GLYPH_SIZE] + 0.5
    img = np.zeros((GLYPH_SIZE, GLYPH_SIZE))
    for _ in range(rng.integers(3, 7)):
        p0 = rng.uniform(4, GLYPH_SIZE - 4, 2)
        p1 = rng.uniform(4, GLYPH_SIZE - 4, 2)
        thick = rng.uniform(2.0, 3.5)
        ink = np.clip(thick / 2 + 0.5 - _segment_distance(yy, xx, p0, p1), 0.0, 1.0)
        img = np.maximum(img, ink)
    return quantize(img)


def _pooled(img):
    return img.reshape(8, 4, 8, 4).mean(axis=(1, 3)).ravel()


def build_charset(num_classes, seed, min_asymmetry=0.08, min_separation=0.06):
    """Deterministic alphabet of ``num_classes`` distinct, rotation-asymmetric glyphs.

    Candidates are rejected when their ink coverage is outside [10%, 60%],
    when they are too close to their own 90-degree rotation, or when their
    8x8 pooled image is too close to any accepted glyph in either
    orientation.
    """
    if not 2 <= num_classes <= MAX_CLASSES:
        raise InvalidArgument(f"num_classes must be in [2, {MAX_CLASSES}], got {num_classes}")
    rng = np.random.default_rng(seed)
    glyphs = []
    pooled = np.empty((2 * num_classes, 64))
    n_pooled = 0
    while len(glyphs) < num_classes:
        g = _draw_glyph(rng)
        coverage = (g > 0.5).mean()
        if not 0.10 <= coverage <= 0.60:
            continue
        r = rot90ccw(g)
        if np.abs(g - r).mean() < min_asymmetry:
            continue
        pg = _pooled(g)
        if n_pooled and np.abs(pooled[:n_pooled] - pg).mean(axis=1).min() < min_separation:
            continue
        glyphs.append(GlyphSpec(len(glyphs), g))
        pooled[n_pooled] = pg
        pooled[n_pooled + 1] = _pooled(r)
        n_pooled += 2
    return Charset(num_classes, glyphs, seed)


def render_printed(charset, class_id, rotated=False):
    """Printed reference image; ``rotated`` gives the anticlockwise rotation."""
    if not 0 <= class_id < charset.num_classes:
        raise InvalidArgument(f"unknown class id {class_id}")
    bitmap = charset.glyphs[class_id].bitmap
    return rot90ccw(bitmap).copy() if rotated else bitmap.copy()


@dataclasses.dataclass(frozen=True)
class NoiseConfig:
    background: float = 0.0
    contrast_min: float = 1.0
    jitter: float = 0.0
    pixel_sigma: float = 0.0

    @classmethod
    def default(cls):
        return cls(background=0.3, contrast_min=0.6, jitter=1.5, pixel_sigma=0.06)


@dataclasses.dataclass
class TextLineSample:
    image: np.ndarray
    label: list
    orientation: Orientation
    id: str
    flags: tuple = ()


def synth_text_line(charset, label, orientation, noise=NoiseConfig(), seed=0, sample_id=""):
    """Render ``label`` left-to-right (horizontal) or top-to-bottom (vertical).

    Vertical lines stack upright glyphs; rotation happens later, in
    preprocessing.
    """
    label = [int(c) for c in label]
    if not 1 <= len(label) <= MAX_LABEL_LEN:
        raise InvalidArgument(f"label length must be in [1, {MAX_LABEL_LEN}], got {len(label)}")
    orientation = Orientation(orientation)
    if orientation is Orientation.VERTICAL and len(label) < 2:
        # a one-glyph column is square, so it could not satisfy H > 1.5 W
        raise InvalidArgument("a vertical line needs at least 2 characters")
    rng = np.random.default_rng(seed)
    n = len(label)
    s = GLYPH_SIZE
    vertical = orientation is Orientation.VERTICAL
    canvas = np.zeros((s * n, s) if vertical else (s, s * n))
    for k, c in enumerate(label):
        g = render_printed(charset, c)
        if noise.jitter > 0:
            g = ndimage.shift(g, rng.uniform(-noise.jitter, noise.jitter, 2), order=1, mode="constant")
        if vertical:
            canvas[k * s:(k + 1) * s, :] = g
        else:
            canvas[:, k * s:(k + 1) * s] = g
    bg = rng.uniform(0.0, noise.background)
    ink = rng.uniform(noise.contrast_min, 1.0)
    img = bg + (ink - bg) * canvas
    if noise.pixel_sigma > 0:
        img = img + noise.pixel_sigma * rng.standard_normal(img.shape)
    return TextLineSample(quantize(img), label, orientation, sample_id)


# --- on-disk formats ---------------------------------------------------------

def write_pgm(path, image):
    """Binary P5 graymap, maxval 255; value v is stored as round(255 v)."""
    data = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(data).save(path, format="PPM")


def read_pgm(path):
    with Image.open(path) as im:
        if im.mode != "L":
            raise InvalidArgument(f"{path}: expected an 8-bit graymap, got mode {im.mode}")
        return np.asarray(im, dtype=np.uint8) / 255.0


def save_charset(charset, directory):
    """Writes charset.tsv (class_id<TAB>symbol), charset.pgm (glyph sheet) and charset.meta."""
    directory = Path(directory)
    tsv = directory / "charset.tsv"
    try:
        directory.mkdir(parents=True, exist_ok=True)
        with open(tsv, "w", encoding="utf-8", newline="\n") as f:
            for g in charset.glyphs:
                f.write(f"{g.class_id}\t{charset.symbol(g.class_id)}\n")
        write_pgm(directory / "charset.pgm", np.concatenate(charset.bitmaps(), axis=1))
        (directory / "charset.meta").write_text(
            f"num_classes={charset.num_classes}\nseed={charset.seed}\n", encoding="utf-8")
    except OSError as e:
        raise DatasetWriteError(tsv, e) from e
    return tsv


def load_charset(tsv_path):
    tsv_path = Path(tsv_path)
    ids = []
    with open(tsv_path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                cid, sym = line.rstrip("\n").split("\t")
                if ord(sym) - SYMBOL_BASE != int(cid):
                    raise InvalidArgument(f"{tsv_path}: symbol table entry {cid} does not match {sym!r}")
                ids.append(int(cid))
    sheet = read_pgm(tsv_path.with_suffix(".pgm"))
    meta = dict(line.split("=", 1) for line in tsv_path.with_suffix(".meta").read_text().split())
    glyphs = [GlyphSpec(i, sheet[:, i * GLYPH_SIZE:(i + 1) * GLYPH_SIZE].copy()) for i in ids]
    return Charset(len(glyphs), glyphs, int(meta["seed"]))


@dataclasses.dataclass(frozen=True)
class ManifestRecord:
    image_path: str
    label: str
    orientation: Orientation
    flags: tuple = ()


@dataclasses.dataclass
class DatasetManifest:
    """Records are stored with paths relative to ``root``."""

    records: list
    charset_ref: Path
    root: Path

    def __len__(self):
        return len(self.records)

    def write(self, path):
        path = Path(path)
        try:
            with open(path, "w", encoding="utf-8", newline="\n") as f:
                for r in self.records:
                    fields = [r.image_path, r.label, r.orientation.value]
                    if r.flags:
                        fields.append(",".join(r.flags))
                    f.write("\t".join(fields) + "\n")
        except OSError as e:
            raise DatasetWriteError(path, e) from e
        return path

    @classmethod
    def read(cls, path, charset_ref=None):
        path = Path(path)
        records = []
        with open(path, encoding="utf-8") as f:
            for line in f:
                line = line.rstrip("\n")
                if not line:
                    continue
                fields = line.split("\t")
                flags = tuple(x for x in fields[3].split(",") if x) if len(fields) > 3 else ()
                records.append(ManifestRecord(fields[0], fields[1], Orientation(fields[2]), flags))
        ref = Path(charset_ref) if charset_ref else path.parent / "charset.tsv"
        return cls(records, ref, path.parent)

    def image_path(self, record):
        return self.root / record.image_path

    def counts(self):
        nv = sum(r.orientation is Orientation.VERTICAL for r in self.records)
        return {"total": len(self.records), "horizontal": len(self.records) - nv, "vertical": nv}

    def load_samples(self, charset=None, validate=True):
        charset = charset or load_charset(self.charset_ref)
        out = []
        for r in self.records:
            img = read_pgm(self.image_path(r))
            label = charset.decode(r.label)
            if validate:
                expected = ((GLYPH_SIZE * len(label), GLYPH_SIZE) if r.orientation is Orientation.VERTICAL
                            else (GLYPH_SIZE, GLYPH_SIZE * len(label)))
                if img.shape != expected:
                    raise InvalidArgument(f"{r.image_path}: shape {img.shape}, expected {expected}")
            out.append(TextLineSample(img, label, r.orientation, Path(r.image_path).stem, r.flags))
        return out


def _split_sizes(n, vertical_fraction):
    nv = int(round(vertical_fraction * n))
    return n - nv, nv


def synth_split(charset, n, vertical_fraction, seed, noise=NoiseConfig(), min_len=1, max_len=8,
                prefix="s"):
    """Yield ``n`` seeded text-line samples, exactly ``round(fraction * n)`` vertical.

    Vertical lines draw their length from ``[max(min_len, 2), max_len]``.
    """
    if not 0.0 <= vertical_fraction <= 1.0:
        raise InvalidArgument(f"vertical_fraction must be in [0, 1], got {vertical_fraction}")
    if not 1 <= min_len <= max_len <= MAX_LABEL_LEN:
        raise InvalidArgument(f"bad label length range [{min_len}, {max_len}]")
    if vertical_fraction > 0 and max_len < 2:
        raise InvalidArgument("vertical lines need max_len >= 2")
    rng = np.random.default_rng(seed)
    _, nv = _split_sizes(n, vertical_fraction)
    vertical = np.zeros(n, dtype=bool)
    vertical[rng.permutation(n)[:nv]] = True
    for i in range(n):
        length = int(rng.integers(max(min_len, 2) if vertical[i] else min_len, max_len + 1))
        label = rng.integers(0, charset.num_classes, length).tolist()
        sample_seed = int(rng.integers(2**63))
        orient = Orientation.VERTICAL if vertical[i] else Orientation.HORIZONTAL
        yield synth_text_line(charset, label, orient, noise, sample_seed, f"{prefix}_{i:06d}")


def generate_dataset(charset, counts, vertical_fraction, seed, out_dir, noise=NoiseConfig(),
                     min_len=1, max_len=8):
    """Write images, per-split manifests (``<split>.tsv``) and the charset files.

    ``counts`` maps split name to a size, or to ``(size, vertical_fraction)``
    to override the shared fraction.  Returns ``{split: DatasetManifest}``.
    Label lengths are uniform in [min_len, max_len]; symbols are uniform over
    the charset.  Split ``k`` holds the samples of
    ``synth_split(..., seed=[seed, k])``.
    """
    out_dir = Path(out_dir)
    # validate before touching the filesystem
    list(synth_split(charset, 0, vertical_fraction, 0, noise, min_len, max_len))
    charset_ref = save_charset(charset, out_dir)
    manifests = {}
    for split_index, (split, size) in enumerate(counts.items()):
        n, fraction = (size, vertical_fraction) if isinstance(size, int) else size
        img_dir = out_dir / "images" / split
        try:
            img_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise DatasetWriteError(img_dir, e) from e
        records = []
        for sample in synth_split(charset, n, fraction, [seed, split_index], noise,
                                  min_len, max_len, split):
            rel = os.path.join("images", split, f"{sample.id}.pgm")
            try:
                write_pgm(out_dir / rel, sample.image)
            except OSError as e:
                raise DatasetWriteError(out_dir / rel, e) from e
            records.append(ManifestRecord(rel, charset.encode(sample.label), sample.orientation))
        manifest = DatasetManifest(records, charset_ref, out_dir)
        manifest.write(out_dir / f"{split}.tsv")
        manifests[split] = manifest
    return manifests


def build_vertical_testset(manifest, reject_flags=DEFAULT_REJECT):
    """Keep vertical records that carry none of ``reject_flags``.

    Mirrors the three-step collection procedure: drop horizontal crops,
    drop unrecognizable (or multi-line / oblique) crops, keep the labels.
    """
    kept = [r for r in manifest.records
            if r.orientation is Orientation.VERTICAL and not set(r.flags) & set(reject_flags)]
    if not kept:
        warnings.warn("vertical test set is empty: manifest has no usable vertical records", stacklevel=2)
    return DatasetManifest(kept, manifest.charset_ref, manifest.root)

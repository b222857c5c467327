"""Versioned binary checkpoint container.

Layout (little-endian)::

    b"OSTR1"  u32 version  u64 step
    u32 len + UTF-8 run-config text
    u32 len + ASCII sha256 hex digest of the config text
    u32 n_entries, then per entry:
        u32 len + UTF-8 name, u32 ndim, ndim x u64 dims, prod(dims) x f64 values

Entry names are prefixed ``param/``, ``buffer/``, ``opt/sq/`` and
``opt/delta/``.  Values are stored as float64, so float32 models round-trip
exactly.
"""
from __future__ import annotations

import dataclasses
import hashlib
import io
import struct
from pathlib import Path

import numpy as np

from .errors import InvalidArgument

MAGIC = b"OSTR1"
VERSION = 1


@dataclasses.dataclass
class Checkpoint:
    entries: dict          # name -> float64 array
    step: int = 0
    config_text: str = ""

    @property
    def config_hash(self):
        return hashlib.sha256(self.config_text.encode()).hexdigest()


def _write_str(buf, s):
    raw = s.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)


def _read_str(buf):
    (n,) = struct.unpack("<I", buf.read(4))
    return buf.read(n).decode("utf-8")


def to_bytes(ckpt):
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<IQ", VERSION, ckpt.step))
    _write_str(buf, ckpt.config_text)
    _write_str(buf, ckpt.config_hash)
    buf.write(struct.pack("<I", len(ckpt.entries)))
    for name, arr in ckpt.entries.items():
        arr = np.asarray(arr, dtype="<f8")
        _write_str(buf, name)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(np.ascontiguousarray(arr).tobytes())
    return buf.getvalue()


def from_bytes(data):
    buf = io.BytesIO(data)
    if buf.read(len(MAGIC)) != MAGIC:
        raise InvalidArgument("not an OSTR1 checkpoint")
    version, step = struct.unpack("<IQ", buf.read(12))
    if version != VERSION:
        raise InvalidArgument(f"unsupported checkpoint version {version}")
    config_text = _read_str(buf)
    digest = _read_str(buf)
    if digest != hashlib.sha256(config_text.encode()).hexdigest():
        raise InvalidArgument("checkpoint config hash mismatch")
    (n,) = struct.unpack("<I", buf.read(4))
    entries = {}
    for _ in range(n):
        name = _read_str(buf)
        (ndim,) = struct.unpack("<I", buf.read(4))
        shape = struct.unpack(f"<{ndim}Q", buf.read(8 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        entries[name] = np.frombuffer(buf.read(8 * count), dtype="<f8").reshape(shape).copy()
    return Checkpoint(entries, step, config_text)


def save(path, ckpt):
    Path(path).write_bytes(to_bytes(ckpt))
    return path


def load(path):
    return from_bytes(Path(path).read_bytes())


def capture(model, optimizer=None, step=0, config_text=""):
    entries = {}
    for name, p in model.named_parameters():
        entries[f"param/{name}"] = p.data.astype(np.float64)
    for name, b in model.named_buffers():
        entries[f"buffer/{name}"] = b.astype(np.float64)
    if optimizer is not None:
        for name, arr in optimizer.state_arrays():
            entries[f"opt/{name}"] = arr.astype(np.float64)
    return Checkpoint(entries, step, config_text)


def restore(model, ckpt, optimizer=None):
    """Copy checkpoint values into ``model`` (and ``optimizer``) in place."""
    params = dict(model.named_parameters())
    buffers = dict(model.named_buffers())
    for name, p in params.items():
        key = f"param/{name}"
        if key not in ckpt.entries:
            raise InvalidArgument(f"checkpoint lacks {key}")
        src = ckpt.entries[key]
        if src.shape != p.data.shape:
            raise InvalidArgument(f"{key}: shape {src.shape} != {p.data.shape}")
        p.data = src.astype(p.data.dtype)
    for name, b in buffers.items():
        b[...] = ckpt.entries[f"buffer/{name}"]
    if optimizer is not None:
        optimizer.load_state({k[4:]: v for k, v in ckpt.entries.items() if k.startswith("opt/")})

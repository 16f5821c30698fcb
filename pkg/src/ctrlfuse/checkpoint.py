"""Versioned binary checkpoint format (magic "CFCK").

Layout, little-endian throughout:
  magic   4 bytes "CFCK"
  version u32
  count   u32
  per tensor:
    name_len u16, name UTF-8, ndim u8, dims u32[ndim], payload f32 LE

The model config (JSON) and the training RNG state ride along as two
reserved tensors, "__config_json__" (UTF-8 bytes as f32 values) and
"__rng_state__", so the file stays a plain tensor container.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"CFCK"
VERSION = 1
CONFIG_KEY = "__config_json__"
RNG_KEY = "__rng_state__"


class FormatError(ValueError):
    pass


class VersionError(FormatError):
    pass


def save_tensors(path, tensors: dict, config: dict | None = None,
                 rng_state=None):
    """tensors: name -> numpy array (stored as f32)."""
    items = dict(tensors)
    if config is not None:
        raw = json.dumps(config, sort_keys=True).encode("utf-8")
        items[CONFIG_KEY] = np.frombuffer(raw, dtype=np.uint8).astype(np.float64)
    if rng_state is not None:
        items[RNG_KEY] = np.asarray(rng_state, dtype=np.float64)
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<II", VERSION, len(items))
    for name in sorted(items):
        arr = np.asarray(items[name], dtype=np.float32)
        enc = name.encode("utf-8")
        blob += struct.pack("<H", len(enc)) + enc
        blob += struct.pack("<B", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.astype("<f4").tobytes()
    Path(path).write_bytes(bytes(blob))


def load_tensors(path):
    """Returns (tensors: name -> float64 array, config dict | None,
    rng_state array | None). Truncated or malformed files raise
    FormatError without partial state."""
    raw = Path(path).read_bytes()
    off = 0

    def take(n):
        nonlocal off
        if off + n > len(raw):
            raise FormatError("truncated checkpoint file")
        piece = raw[off:off + n]
        off += n
        return piece

    if take(4) != MAGIC:
        raise FormatError("bad magic; not a CFCK checkpoint")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise VersionError(f"unsupported checkpoint version {version}")
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim))
        n = int(np.prod(dims)) if ndim else 1
        payload = np.frombuffer(take(4 * n), dtype="<f4")
        tensors[name] = payload.reshape(dims).astype(np.float64)
    if off != len(raw):
        raise FormatError("trailing bytes after last tensor")
    config = None
    rng_state = None
    if CONFIG_KEY in tensors:
        raw_cfg = tensors.pop(CONFIG_KEY)
        config = json.loads(bytes(raw_cfg.astype(np.uint8)).decode("utf-8"))
    if RNG_KEY in tensors:
        rng_state = tensors.pop(RNG_KEY)
    return tensors, config, rng_state


def save_model(path, model, rng_state=None):
    tensors = {name: p.data for name, p in model.named_params().items()}
    save_tensors(path, tensors, config=model.config.as_dict(),
                 rng_state=rng_state)


def load_model(path):
    """Rebuild a CtrlFuse model from a checkpoint file."""
    from .model import CtrlFuse, ModelConfig

    tensors, config, rng_state = load_tensors(path)
    if config is None:
        raise FormatError("checkpoint carries no model config")
    model = CtrlFuse(ModelConfig.from_dict(config))
    params = model.named_params()
    for name, arr in tensors.items():
        if name not in params:
            raise FormatError(f"unknown tensor {name!r} in checkpoint")
        if params[name].data.shape != arr.shape:
            raise FormatError(f"shape mismatch for tensor {name!r}")
        params[name].data = arr
    return model, rng_state

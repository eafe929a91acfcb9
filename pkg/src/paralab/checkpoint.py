"""PLCK checkpoint files.

Layout (little-endian): magic ``PLCK``, version u16, metadata length u32,
UTF-8 JSON metadata, then each tensor as name length u16, name bytes,
rank u8, dims u32 each, float32 payload.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError

MAGIC = b"PLCK"
VERSION = 1


@dataclass
class Checkpoint:
    metadata: dict
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def step(self) -> int:
        return int(self.metadata["step"])

    def params(self) -> dict[str, np.ndarray]:
        return {k[len("param/"):]: v for k, v in self.tensors.items() if k.startswith("param/")}

    def moments(self, which: str) -> dict[str, np.ndarray]:
        prefix = f"opt.{which}/"
        return {k[len(prefix):]: v for k, v in self.tensors.items() if k.startswith(prefix)}


def encode_rng_state(rng: np.random.Generator) -> str:
    return json.dumps(rng.bit_generator.state, sort_keys=True).encode().hex()


def decode_rng_state(hex_state: str) -> np.random.Generator:
    state = json.loads(bytes.fromhex(hex_state).decode())
    bitgen = getattr(np.random, state["bit_generator"])()
    bitgen.state = state
    return np.random.Generator(bitgen)


def save(path: str | Path, metadata: dict, tensors: dict[str, np.ndarray]) -> None:
    meta = dict(metadata, n_tensors=len(tensors))
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<HI", VERSION, len(meta_bytes)), meta_bytes]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        for p in parts:
            fh.write(p)
    os.replace(tmp, path)


def load(path: str | Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValidationError(f"{path}: not a PLCK checkpoint")
    version, meta_len = struct.unpack_from("<HI", raw, 4)
    if version != VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {version}")
    pos = 10
    metadata = json.loads(raw[pos : pos + meta_len].decode("utf-8"))
    pos += meta_len
    tensors = {}
    try:
        while pos < len(raw):
            (n,) = struct.unpack_from("<H", raw, pos)
            name = raw[pos + 2 : pos + 2 + n].decode("utf-8")
            pos += 2 + n
            (rank,) = struct.unpack_from("<B", raw, pos)
            dims = struct.unpack_from(f"<{rank}I", raw, pos + 1)
            pos += 1 + 4 * rank
            count = int(np.prod(dims, dtype=np.int64))
            tensors[name] = np.frombuffer(raw, dtype="<f4", count=count, offset=pos).reshape(dims).astype(np.float32)
            pos += 4 * count
    except (struct.error, ValueError) as exc:
        raise ValidationError(f"{path}: truncated or corrupt tensor section ({exc})") from None
    if len(tensors) != metadata.get("n_tensors"):
        raise ValidationError(f"{path}: expected {metadata.get('n_tensors')} tensors, found {len(tensors)}")
    return Checkpoint(metadata, tensors)


def params_hash(params: dict[str, np.ndarray]) -> str:
    """Digest of parameter names, shapes and values; unaffected by timing metadata."""
    h = hashlib.sha256()
    for name in sorted(params):
        a = np.ascontiguousarray(params[name])
        h.update(f"{name}:{a.dtype.str}:{a.shape};".encode())
        h.update(a.tobytes())
    return h.hexdigest()[:16]

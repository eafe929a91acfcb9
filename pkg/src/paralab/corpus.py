"""Byte-level tokenization, fixed-length chunking and the tail validation split."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ValidationError

PAD = 256
EOS = 257
MASK = 258
VOCAB_SIZE = 259
SPECIAL_IDS = frozenset({PAD, EOS, MASK})

DOC_SEPARATOR = b"\n\n"

CHUNK_MAGIC = b"PLCH"
CHUNK_VERSION = 1
_CHUNK_HEADER = struct.Struct("<4sHIIQ")


@dataclass(frozen=True)
class Vocabulary:
    size: int = VOCAB_SIZE
    pad: int = PAD
    eos: int = EOS
    mask: int = MASK


VOCAB = Vocabulary()


@dataclass
class CorpusSplit:
    train_chunks: np.ndarray  # [N_train, seq_len] int
    val_chunks: np.ndarray  # [N_val, seq_len] int
    split_fraction: float

    @property
    def seq_len(self) -> int:
        return int(self.train_chunks.shape[1] if len(self.train_chunks) else self.val_chunks.shape[1])


def tokenize(text: bytes) -> np.ndarray:
    """One id per byte, with EOS after every document.

    Documents end at each blank-line separator (the separator bytes are kept
    and the EOS follows them) and at the end of the input, so ``b""`` becomes
    ``[EOS]``.
    """
    if isinstance(text, str):
        text = text.encode("utf-8")
    docs = text.split(DOC_SEPARATOR)
    out = np.empty(len(text) + len(docs), dtype=np.int64)
    pos = 0
    for i, doc in enumerate(docs):
        if i < len(docs) - 1:
            doc = doc + DOC_SEPARATOR
        n = len(doc)
        out[pos : pos + n] = np.frombuffer(doc, dtype=np.uint8)
        out[pos + n] = EOS
        pos += n + 1
    return out


def detokenize(ids) -> bytes:
    """Inverse of :func:`tokenize`: byte ids pass through, specials vanish."""
    ids = np.asarray(ids)
    return ids[ids < 256].astype(np.uint8).tobytes()


def build_chunks(tokens, seq_len: int) -> np.ndarray:
    """Consecutive non-overlapping windows of exactly ``seq_len`` tokens.

    The trailing remainder is dropped.  Returns an array of shape
    ``[n_chunks, seq_len]`` (zero rows if there are too few tokens).
    """
    if seq_len < 2:
        raise ConfigError(f"seq_len must be >= 2, got {seq_len}")
    tokens = np.asarray(tokens, dtype=np.int64)
    n = len(tokens) // seq_len
    return tokens[: n * seq_len].reshape(n, seq_len).copy()


def split(chunks, fraction: float) -> CorpusSplit:
    """Hold out the final ``ceil(fraction * N)`` chunks for validation, unshuffled."""
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"split fraction must be in (0, 1), got {fraction}")
    chunks = np.asarray(chunks)
    n = len(chunks)
    if n == 0:
        raise ConfigError("cannot split an empty chunk list")
    n_val = math.ceil(round(fraction * n, 9))  # 0.07 * 100 is 7.000000000000001
    if n_val >= n:
        raise ConfigError(f"degenerate split: {n} chunk(s) leave no training data")
    return CorpusSplit(chunks[: n - n_val], chunks[n - n_val :], fraction)


def load_corpus(path: str | Path, seq_len: int, fraction: float) -> CorpusSplit:
    """Read a text file (or a PLCH chunk file) and return its split."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            head = fh.read(4)
    except OSError as exc:
        raise ConfigError(f"cannot read corpus {path}: {exc.strerror}") from None
    if head == CHUNK_MAGIC:
        chunks, file_seq_len = read_chunks(path)
        if file_seq_len != seq_len:
            raise ConfigError(f"{path}: chunk file has seq_len {file_seq_len}, config wants {seq_len}")
    else:
        chunks = build_chunks(tokenize(path.read_bytes()), seq_len)
    return split(chunks, fraction)


def write_chunks(path: str | Path, chunks, vocab_size: int = VOCAB_SIZE) -> None:
    chunks = np.asarray(chunks)
    if chunks.ndim != 2:
        raise ValueError("chunks must be a 2-D array")
    if chunks.size and (chunks.min() < 0 or chunks.max() >= min(vocab_size, 1 << 16)):
        raise ValueError("token id outside the vocabulary")
    count, seq_len = chunks.shape
    with open(path, "wb") as fh:
        fh.write(_CHUNK_HEADER.pack(CHUNK_MAGIC, CHUNK_VERSION, vocab_size, seq_len, count))
        fh.write(chunks.astype("<u2").tobytes())


def read_chunks(path: str | Path) -> tuple[np.ndarray, int]:
    """Returns ``(chunks, seq_len)`` from a PLCH file."""
    raw = Path(path).read_bytes()
    if len(raw) < _CHUNK_HEADER.size:
        raise ValidationError(f"{path}: truncated chunk header")
    magic, version, vocab_size, seq_len, count = _CHUNK_HEADER.unpack_from(raw)
    if magic != CHUNK_MAGIC or version != CHUNK_VERSION:
        raise ValidationError(f"{path}: not a version-{CHUNK_VERSION} PLCH file")
    payload = raw[_CHUNK_HEADER.size :]
    if len(payload) != 2 * seq_len * count:
        raise ValidationError(f"{path}: payload size does not match header")
    ids = np.frombuffer(payload, dtype="<u2").astype(np.int64)
    if ids.size and ids.max() >= vocab_size:
        raise ValidationError(f"{path}: id outside declared vocabulary")
    return ids.reshape(count, seq_len), seq_len

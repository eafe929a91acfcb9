"""Next-token loss, cosine masking schedule, and masked-token loss."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .corpus import MASK
from .errors import ContractError, ResampleSignal


def gamma(t: float) -> float:
    """Cosine masking probability 1 - cos^2(pi t / 2)."""
    if not 0.0 <= t <= 1.0:
        raise ContractError(f"t must lie in [0, 1], got {t}")
    c = math.cos(math.pi * t / 2.0)
    return 1.0 - c * c


def gamma_array(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    if np.any((t < 0.0) | (t > 1.0)):
        raise ContractError("t must lie in [0, 1]")
    c = np.cos(np.pi * t / 2.0)
    return 1.0 - c * c


@dataclass
class MaskRealization:
    t: np.ndarray  # [batch]
    mask: np.ndarray  # [batch, seq] bool, True = masked
    corrupted: np.ndarray  # [batch, seq] int


def apply_mask(seq, t, rng: np.random.Generator) -> MaskRealization:
    """Mask each position independently with probability gamma(t).

    ``seq`` is ``[seq]`` or ``[batch, seq]``; ``t`` is a scalar or one value per
    example.  Uniform draws are compared against gamma(t), so ``t=0`` masks
    nothing and ``t=1`` masks everything.
    """
    seq = np.asarray(seq)
    single = seq.ndim == 1
    batch = seq[None] if single else seq
    if np.any(batch == MASK):
        raise ContractError("input already contains MASK ids")
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (batch.shape[0],)).copy()
    p = gamma_array(t)
    mask = rng.random(batch.shape) < p[:, None]
    corrupted = np.where(mask, MASK, batch)
    if single:
        return MaskRealization(t, mask[0], corrupted[0])
    return MaskRealization(t, mask, corrupted)


def ar_loss(logits: T.Tensor, tokens) -> T.Tensor:
    """Mean next-token cross-entropy (nats): position i predicts token i+1."""
    tokens = np.asarray(tokens)
    if tokens.ndim == 1:
        tokens = tokens[None]
    if tokens.shape[1] < 2:
        raise ContractError("next-token loss needs sequences of length >= 2")
    targets = np.empty_like(tokens)
    targets[:, :-1] = tokens[:, 1:]
    targets[:, -1] = 0
    select = np.ones(tokens.shape, dtype=bool)
    select[:, -1] = False
    return T.cross_entropy(logits, targets, select)


def mdlm_loss(logits: T.Tensor, original, realization: MaskRealization) -> T.Tensor:
    """Mean cross-entropy over masked positions only (nats per masked token).

    Raises :class:`ResampleSignal` when nothing in the batch is masked.
    """
    original = np.asarray(original)
    mask = np.asarray(realization.mask, dtype=bool)
    if original.ndim == 1:
        original = original[None]
        mask = mask.reshape(original.shape)
    if not mask.any():
        raise ResampleSignal("no masked positions in batch")
    return T.cross_entropy(logits, original, mask)


def token_nll(logits: np.ndarray, targets) -> np.ndarray:
    """Per-position negative log-likelihood (nats) from raw logits, no tape."""
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets)
    m = logits.max(axis=-1, keepdims=True)
    lse = m[..., 0] + np.log(np.exp(logits - m).sum(axis=-1))
    return lse - np.take_along_axis(logits, targets[..., None], axis=-1)[..., 0]

"""Nucleus sampling for the causal model, iterative unmasking for the diffusion model.

Samples are generated in batches for speed, but every sample owns its random
stream (``default_rng([seed, index])``), so a sample depends only on the
checkpoint, the config and its index.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .corpus import EOS, MASK, PAD
from .errors import ConfigError, ContractError
from .model import Transformer

# never emitted by either sampler
FORBIDDEN_IDS = (PAD, MASK)
GEN_BATCH = 64


@dataclass(frozen=True)
class GenerationConfig:
    length: int = 128
    top_p: float = 0.9
    temperature: float = 0.8
    steps: int = 100
    tau_start: float = 1.2
    tau_end: float = 0.5
    repetition_penalty: float = 1.3
    seed: int = 0

    def __post_init__(self):
        if self.length < 1:
            raise ConfigError("length must be >= 1")
        if not 0.0 < self.top_p <= 1.0:
            raise ConfigError("top_p must lie in (0, 1]")
        if min(self.temperature, self.tau_start, self.tau_end) <= 0:
            raise ConfigError("temperatures must be positive")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.repetition_penalty < 1.0:
            raise ConfigError("repetition_penalty must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DenoiseState:
    tokens: np.ndarray
    masked_count: int
    step_index: int


@dataclass
class DenoiseTrace:
    """Per-step record of one MDLM sample, for invariant checks."""

    unmasked_per_step: list[int] = field(default_factory=list)
    states: list[DenoiseState] = field(default_factory=list)


def nucleus_filter(probs, p: float) -> np.ndarray:
    """Zero everything outside the smallest top-probability set with mass >= p, renormalize."""
    probs = np.asarray(probs, dtype=np.float64)
    if p >= 1.0:
        return probs / probs.sum()
    order = np.argsort(-probs, kind="stable")
    cum = np.cumsum(probs[order])
    keep = int(np.searchsorted(cum, p, side="left")) + 1
    keep = min(keep, len(probs))
    out = np.zeros_like(probs)
    kept = order[:keep]
    out[kept] = probs[kept]
    return out / out.sum()


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def anneal_temperature(s: int, S: int, tau_start: float, tau_end: float) -> float:
    """Linear schedule from tau_start at s=0 to tau_end at s=S-1."""
    if not 0 <= s < S:
        raise ContractError(f"step {s} outside [0, {S})")
    if S == 1:
        return tau_end
    return tau_start + (tau_end - tau_start) * s / (S - 1)


def unmask_quota(L: int, S: int) -> list[int]:
    """How many positions each denoising step reveals; sums to ``L``.

    Uses min(S, L) steps of floor(L/S') each, the remainder going one apiece
    to the earliest steps.
    """
    if L < 1 or S < 1:
        raise ContractError("L and S must be >= 1")
    steps = min(S, L)
    base, extra = divmod(L, steps)
    return [base + 1 if i < extra else base for i in range(steps)]


def apply_repetition_penalty(logits, committed, penalty: float) -> np.ndarray:
    """Make already-committed token ids less likely.

    Positive logits are divided by ``penalty``, negative ones multiplied, so
    the adjustment always lowers the token's score.  Works on ``[..., V]``.
    """
    if penalty < 1.0:
        raise ContractError("penalty must be >= 1")
    out = np.array(logits, dtype=np.float64, copy=True)
    ids = np.fromiter(committed, dtype=np.int64) if not isinstance(committed, np.ndarray) else committed
    if penalty == 1.0 or ids.size == 0:
        return out
    cols = out[..., ids]
    out[..., ids] = np.where(cols > 0, cols / penalty, cols * penalty)
    return out


def _forbid(logits: np.ndarray) -> np.ndarray:
    logits[..., list(FORBIDDEN_IDS)] = -np.inf
    return logits


def _rngs(seed: int, lo: int, hi: int) -> list[np.random.Generator]:
    return [np.random.default_rng([seed, i]) for i in range(lo, hi)]


def ar_generate(model: Transformer, cfg: GenerationConfig, num_samples: int = 1) -> np.ndarray:
    """``[num_samples, L]`` tokens sampled left to right after a single EOS prime.

    Logits are divided by the temperature, softmaxed and nucleus-filtered.  The
    context is the most recent ``seq_len`` tokens.
    """
    if model.config.attention_mode != "causal":
        raise ContractError("ar_generate needs a causal model")
    window = model.config.seq_len
    out = np.empty((num_samples, cfg.length), dtype=np.int64)
    for lo in range(0, num_samples, GEN_BATCH):
        hi = min(lo + GEN_BATCH, num_samples)
        rngs = _rngs(cfg.seed, lo, hi)
        seqs = np.full((hi - lo, 1), EOS, dtype=np.int64)
        for _ in range(cfg.length):
            ctx = seqs[:, -window:]
            logits = model.forward(ctx).data[:, -1].astype(np.float64)
            probs = softmax(_forbid(logits / cfg.temperature))
            nxt = np.empty(hi - lo, dtype=np.int64)
            for j, rng in enumerate(rngs):
                q = nucleus_filter(probs[j], cfg.top_p)
                nxt[j] = _draw(q, rng.random())
            seqs = np.concatenate([seqs, nxt[:, None]], axis=1)
        out[lo:hi] = seqs[:, 1:]
    return out


def _draw(probs: np.ndarray, u: float) -> int:
    """Inverse-CDF draw; never lands on a zero-probability id."""
    cum = np.cumsum(probs)
    i = int(np.searchsorted(cum, u * cum[-1], side="right"))
    i = min(i, len(probs) - 1)
    while probs[i] == 0.0:  # u*total beyond rounding in cum[-1]
        i -= 1
    return i


def _draw_rows(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Row-wise :func:`_draw`."""
    cum = np.cumsum(probs, axis=1)
    x = u * cum[:, -1]
    idx = np.minimum((cum <= x[:, None]).sum(axis=1), probs.shape[1] - 1)
    for r in np.flatnonzero(probs[np.arange(len(idx)), idx] == 0.0):
        idx[r] = _draw(probs[r], u[r])
    return idx


def mdlm_generate(
    model: Transformer,
    cfg: GenerationConfig,
    num_samples: int = 1,
    traces: list[DenoiseTrace] | None = None,
) -> np.ndarray:
    """``[num_samples, L]`` tokens by confidence-ordered unmasking from all-MASK.

    Each step: forward at t = masked/L; for every still-masked position apply
    the repetition penalty to ids already committed in that sample, divide by
    the annealed temperature, softmax, and sample a candidate; the quota's
    most confident candidates (ties broken at random) are committed for good.
    If ``traces`` is a list, one :class:`DenoiseTrace` per sample is appended.
    """
    L = cfg.length
    if L > model.config.seq_len:
        raise ContractError(f"length {L} exceeds model seq_len {model.config.seq_len}")
    quota = unmask_quota(L, cfg.steps)
    n_steps = len(quota)
    conditioned = model.config.timestep_conditioning
    out = np.empty((num_samples, L), dtype=np.int64)
    for lo in range(0, num_samples, GEN_BATCH):
        hi = min(lo + GEN_BATCH, num_samples)
        rngs = _rngs(cfg.seed, lo, hi)
        seqs = np.full((hi - lo, L), MASK, dtype=np.int64)
        batch_traces = [DenoiseTrace() for _ in rngs]
        masked = L
        for s in range(n_steps):
            t = masked / L if conditioned else None
            logits_all = model.forward(seqs, t=t).data.astype(np.float64)
            tau = anneal_temperature(s, n_steps, cfg.tau_start, cfg.tau_end)
            for j, rng in enumerate(rngs):
                pos = np.flatnonzero(seqs[j] == MASK)
                committed = np.unique(seqs[j][seqs[j] != MASK])
                logits = apply_repetition_penalty(logits_all[j, pos], committed, cfg.repetition_penalty)
                probs = softmax(_forbid(logits) / tau)
                cand = _draw_rows(probs, rng.random(len(pos)))
                conf = probs[np.arange(len(pos)), cand]
                order = np.lexsort((rng.random(len(pos)), -conf))
                pick = order[: quota[s]]
                seqs[j, pos[pick]] = cand[pick]
                if traces is not None:
                    batch_traces[j].unmasked_per_step.append(len(pick))
                    batch_traces[j].states.append(
                        DenoiseState(seqs[j].copy(), int((seqs[j] == MASK).sum()), s)
                    )
            masked -= quota[s]
        if np.any(seqs == MASK):
            raise RuntimeError("internal error: MASK id left in MDLM output")
        out[lo:hi] = seqs
        if traces is not None:
            traces.extend(batch_traces)
    return out

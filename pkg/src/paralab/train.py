"""AdamW training loop shared by both paradigms.

Everything that is random (data order, timesteps, masks) is derived from the
master seed, so a run is a pure function of (seed, configs, corpus).  The only
nondeterministic quantities are wall-clock timings, which come from an
injectable ``clock``.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import checkpoint as ckpt
from . import tensor as T
from .corpus import CorpusSplit
from .errors import ConfigError, ContractError, MeasurementError, TrainingError, ValidationError
from .model import ModelConfig, Transformer
from .objectives import apply_mask, ar_loss, mdlm_loss, token_nll

log = logging.getLogger(__name__)

PARADIGMS = ("ar", "mdlm")
EVAL_T_GRID = tuple(round(0.1 * i, 1) for i in range(1, 10))
LOG_HEADER = ["step", "split", "loss_nats", "wall_ms", "tokens_per_sec"]


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 16
    lr: float = 3e-4
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    warmup_steps: int | None = None  # None -> 1% of steps
    eval_every: int = 100
    seed: int = 0
    clip_norm: float = 1.0
    steady_state_skip: int = 50
    divergence_loss: float = 20.0
    divergence_patience: int = 100

    def __post_init__(self):
        if self.steps <= 0:
            raise ConfigError("steps must be positive")
        if self.batch_size <= 0:
            raise ConfigError("batch_size must be positive")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if not 0 < self.eval_every <= self.steps:
            raise ConfigError("eval_every must lie in [1, steps]")
        if self.warmup_steps is not None and self.warmup_steps < 0:
            raise ConfigError("warmup_steps must be >= 0")
        b1, b2 = self.betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1):
            raise ConfigError("betas must lie in [0, 1)")

    @property
    def warmup(self) -> int:
        return self.steps // 100 if self.warmup_steps is None else self.warmup_steps

    def lr_at(self, step: int) -> float:
        """Linear warmup to ``lr`` over the warmup steps, then constant (step is 1-based)."""
        if self.warmup and step < self.warmup:
            return self.lr * step / self.warmup
        return self.lr

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "OptimizerState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adamw_step(params, grads, state: OptimizerState, cfg: TrainConfig, lr: float | None = None):
    """One decoupled-weight-decay Adam update, in place.  Returns ``(params, state)``."""
    bad = [k for k, g in grads.items() if not np.isfinite(g).all()]
    if bad:
        raise TrainingError(f"non-finite gradient at step {state.step + 1} in: {', '.join(sorted(bad))}")
    lr = cfg.lr if lr is None else lr
    b1, b2 = cfg.betas
    state.step += 1
    k = state.step
    c1 = 1.0 - b1**k
    c2 = 1.0 - b2**k
    for name, theta in params.items():
        g = grads[name]
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        if cfg.weight_decay:
            update += cfg.weight_decay * theta
        theta -= (lr * update).astype(theta.dtype, copy=False)
    return params, state


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``."""
    sq = 0.0
    for name in sorted(grads):
        g = grads[name].astype(np.float64)
        sq += float(np.dot(g.ravel(), g.ravel()))
    norm = math.sqrt(sq)
    if max_norm and norm > max_norm:
        s = max_norm / (norm + 1e-6)
        for g in grads.values():
            g *= g.dtype.type(s)
    return norm


# --- convergence log --------------------------------------------------------


@dataclass
class LogRecord:
    step: int
    split: str
    loss: float
    wall_ms: float
    tokens_per_sec: float


@dataclass
class ConvergenceLog:
    tokens_per_step: int
    records: list[LogRecord] = field(default_factory=list)
    config_hash: str = ""

    def add(self, *args) -> None:
        self.records.append(LogRecord(*args))

    def split(self, which: str) -> list[LogRecord]:
        return [r for r in self.records if r.split == which]

    def best(self) -> tuple[int, float]:
        """Step and loss of the lowest validation loss (earliest on ties)."""
        val = self.split("val")
        if not val:
            raise ValidationError("log has no validation records")
        best = val[0]
        for r in val[1:]:
            if r.loss < best.loss:
                best = r
        return best.step, best.loss

    def truncate(self, step: int) -> None:
        self.records = [r for r in self.records if r.step <= step]

    def validate(self) -> None:
        prev = -1
        for r in self.records:
            if r.step < prev:
                raise ValidationError(f"log steps not monotone: {r.step} after {prev}")
            if r.split not in ("train", "val"):
                raise ValidationError(f"unknown split {r.split!r}")
            prev = r.step
        val_steps = [r.step for r in self.split("val")]
        if len(val_steps) != len(set(val_steps)):
            raise ValidationError("more than one validation record at a step")

    def to_csv(self, include_timing: bool = True) -> str:
        buf = io.StringIO()
        buf.write(f"# config_hash={self.config_hash} tokens_per_step={self.tokens_per_step}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_HEADER)
        for r in self.records:
            wall = f"{r.wall_ms:.3f}" if include_timing else "0"
            tps = f"{r.tokens_per_sec:.1f}" if include_timing else "0"
            w.writerow([r.step, r.split, repr(float(r.loss)), wall, tps])
        return buf.getvalue()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "ConvergenceLog":
        lines = text.splitlines()
        meta = {}
        while lines and lines[0].startswith("#"):
            for item in lines.pop(0)[1:].split():
                key, _, value = item.partition("=")
                meta[key] = value
        reader = csv.reader(lines)
        header = next(reader, None)
        if header != LOG_HEADER:
            raise ValidationError(f"unexpected log header {header}")
        out = cls(int(meta.get("tokens_per_step", 0)), config_hash=meta.get("config_hash", ""))
        for row in reader:
            try:
                out.add(int(row[0]), row[1], float(row[2]), float(row[3]), float(row[4]))
            except (IndexError, ValueError):
                raise ValidationError(f"malformed log row {row}") from None
        out.validate()
        return out

    @classmethod
    def load(cls, path: str | Path) -> "ConvergenceLog":
        return cls.from_csv(Path(path).read_text())


def tokens_per_second(batch: int, seq_len: int, steps: int, seconds: float) -> float:
    return batch * seq_len * steps / seconds


def measure_throughput(log: ConvergenceLog, skip: int = 50, min_steps: int = 100) -> float:
    """Tokens/sec over training steps after the first ``skip`` (steady state)."""
    train = [r for r in log.split("train") if r.step >= skip]
    if len(train) < min_steps + 1:
        raise MeasurementError(f"need >= {min_steps} steady-state steps, have {max(len(train) - 1, 0)}")
    n = train[-1].step - train[0].step
    seconds = (train[-1].wall_ms - train[0].wall_ms) / 1000.0
    if seconds <= 0:
        raise MeasurementError("no elapsed time in measurement window")
    return log.tokens_per_step * n / seconds


def step_time_ms(log: ConvergenceLog, skip: int = 50, min_steps: int = 100) -> float:
    """Mean steady-state wall time per optimizer step."""
    return log.tokens_per_step / measure_throughput(log, skip, min_steps) * 1000.0


# --- evaluation --------------------------------------------------------------


def evaluate(model: Transformer, val_chunks, paradigm: str, batch_size: int = 16, seed: int = 0) -> float:
    """Validation loss in nats.

    AR: mean next-token loss over every predicted position.  MDLM: chunk ``i``
    is corrupted at ``t = EVAL_T_GRID[i % 9]`` with a fixed masking seed; the
    masked-token loss is averaged within each timestep stratum, then across
    strata.
    """
    val = np.asarray(val_chunks)
    if len(val) == 0:
        raise ContractError("empty validation set")
    if paradigm == "ar":
        total, count = 0.0, 0
        for lo in range(0, len(val), batch_size):
            batch = val[lo : lo + batch_size]
            nll = token_nll(model.forward(batch).data[:, :-1], batch[:, 1:])
            total += float(nll.sum(dtype=np.float64))
            count += nll.size
        return total / count
    if paradigm != "mdlm":
        raise ConfigError(f"unknown paradigm {paradigm!r}")
    rng = np.random.default_rng([seed, 0xE7A1])
    grid = np.array(EVAL_T_GRID)
    sums = np.zeros(len(grid))
    counts = np.zeros(len(grid))
    for lo in range(0, len(val), batch_size):
        batch = val[lo : lo + batch_size]
        strata = np.arange(lo, lo + len(batch)) % len(grid)
        real = apply_mask(batch, grid[strata], rng)
        t = real.t if model.config.timestep_conditioning else None
        nll = token_nll(model.forward(real.corrupted, t=t).data, batch)
        per_chunk = np.where(real.mask, nll, 0.0).sum(axis=1, dtype=np.float64)
        np.add.at(sums, strata, per_chunk)
        np.add.at(counts, strata, real.mask.sum(axis=1))
    present = counts > 0
    return float(np.mean(sums[present] / counts[present]))


# --- training ----------------------------------------------------------------


@dataclass
class TrainResult:
    log: ConvergenceLog
    model: Transformer
    best_step: int
    best_val_loss: float
    best_params: dict[str, np.ndarray]


def check_paradigm(model_cfg: ModelConfig, paradigm: str) -> None:
    if paradigm == "ar":
        if model_cfg.attention_mode != "causal" or model_cfg.timestep_conditioning:
            raise ConfigError("AR training needs causal attention and no timestep conditioning")
    elif paradigm == "mdlm":
        if model_cfg.attention_mode != "bidirectional":
            raise ConfigError("MDLM training needs bidirectional attention")
    else:
        raise ConfigError(f"unknown paradigm {paradigm!r}")


def batch_indices(step: int, batch_size: int, n: int, seed: int) -> np.ndarray:
    """Chunk indices for 1-based ``step``: consecutive slices of per-epoch permutations."""
    first = (step - 1) * batch_size
    idx = np.arange(first, first + batch_size)
    epochs = idx // n
    out = np.empty(batch_size, dtype=np.int64)
    for e in np.unique(epochs):
        perm = np.random.default_rng([seed, 0xDA7A, int(e)]).permutation(n)
        sel = epochs == e
        out[sel] = perm[idx[sel] % n]
    return out


def loss_and_grads(model: Transformer, batch: np.ndarray, paradigm: str, rng: np.random.Generator):
    """Forward + backward for one batch.

    MDLM draws per-example t and masks from ``rng``; a batch with nothing
    masked is redrawn rather than passed to the loss.
    """
    g = T.Graph()
    if paradigm == "ar":
        loss = ar_loss(model.forward(batch, graph=g), batch)
    else:
        while True:
            real = apply_mask(batch, rng.random(len(batch)), rng)
            if real.mask.any():
                break
        t = real.t if model.config.timestep_conditioning else None
        loss = mdlm_loss(model.forward(real.corrupted, t=t, graph=g), batch, real)
    grads = g.backward(loss)
    g.release()
    return float(loss.data), grads


def _ckpt_metadata(model_cfg, train_cfg, paradigm, step, best_step, best_val, wall_ms, rng, role, config_hash):
    return {
        "model_config": model_cfg.to_dict(),
        "train_config": train_cfg.to_dict(),
        "paradigm": paradigm,
        "step": step,
        "best_step": best_step,
        "best_val_loss": best_val,
        "wall_ms": wall_ms,
        "rng_state": ckpt.encode_rng_state(rng),
        "role": role,
        "config_hash": config_hash,
    }


def save_state(path, model, opt, meta) -> None:
    tensors = {f"param/{k}": v for k, v in model.params.items()}
    tensors.update({f"opt.m/{k}": v for k, v in opt.m.items()})
    tensors.update({f"opt.v/{k}": v for k, v in opt.v.items()})
    meta = dict(meta, optimizer_step=opt.step)
    ckpt.save(path, meta, tensors)


def load_model(path: str | Path) -> tuple[Transformer, ckpt.Checkpoint]:
    c = ckpt.load(path)
    cfg = ModelConfig(**c.metadata["model_config"])
    return Transformer(cfg, c.params()), c


def train(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    data: CorpusSplit,
    paradigm: str,
    out_dir: str | Path | None = None,
    resume: bool = False,
    stop_after: int | None = None,
    clock: Callable[[], float] = time.perf_counter,
    config_hash: str = "",
    progress: Callable[[LogRecord], None] | None = None,
) -> TrainResult:
    """Run ``train_cfg.steps`` AdamW steps and evaluate every ``eval_every``.

    With ``out_dir`` set, ``log.csv``, ``ckpt_best`` and ``ckpt_last`` are
    written there (``ckpt_last`` at every evaluation).  ``resume`` continues
    from ``ckpt_last``.  ``stop_after`` ends the run early at that step after
    writing ``ckpt_last``, which is how an interruption is simulated.
    """
    check_paradigm(model_cfg, paradigm)
    train_chunks = np.asarray(data.train_chunks)
    if len(train_chunks) == 0 or len(data.val_chunks) == 0:
        raise ConfigError("training and validation splits must be non-empty")
    if train_chunks.shape[1] != model_cfg.seq_len:
        raise ConfigError(f"chunks have length {train_chunks.shape[1]}, model seq_len is {model_cfg.seq_len}")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    seed = train_cfg.seed
    tokens_per_step = train_cfg.batch_size * model_cfg.seq_len
    model = Transformer(model_cfg, seed=seed)
    opt = OptimizerState.zeros_like(model.params)
    rng = np.random.default_rng([seed, 0x7EA1])
    history = ConvergenceLog(tokens_per_step, config_hash=config_hash)
    start, wall_ms = 0, 0.0
    best_step, best_val = 0, math.inf
    best_params = {k: v.copy() for k, v in model.params.items()}

    if resume:
        if out is None or not (out / "ckpt_last").exists():
            raise ConfigError("resume requested but no ckpt_last found")
        c = ckpt.load(out / "ckpt_last")
        meta = c.metadata
        if ModelConfig(**meta["model_config"]) != model_cfg or meta["paradigm"] != paradigm:
            raise ConfigError("checkpoint was written for a different model or paradigm")
        if meta["train_config"] != train_cfg.to_dict():
            raise ConfigError("checkpoint was written with a different training config")
        model = Transformer(model_cfg, c.params())
        opt = OptimizerState(c.moments("m"), c.moments("v"), int(meta["optimizer_step"]))
        rng = ckpt.decode_rng_state(meta["rng_state"])
        start, wall_ms = int(meta["step"]), float(meta["wall_ms"])
        best_step, best_val = int(meta["best_step"]), float(meta["best_val_loss"])
        if (out / "ckpt_best").exists():
            best_params = ckpt.load(out / "ckpt_best").params()
        if (out / "log.csv").exists():
            history = ConvergenceLog.load(out / "log.csv")
            history.truncate(start)

    def checkpoint(role: str, step: int) -> None:
        if out is None:
            return
        meta = _ckpt_metadata(model_cfg, train_cfg, paradigm, step, best_step, best_val, wall_ms, rng, role, config_hash)
        save_state(out / f"ckpt_{role}", model, opt, meta)

    over_limit = 0
    last_eval_step, last_eval_wall = start, wall_ms
    for step in range(start + 1, train_cfg.steps + 1):
        batch = train_chunks[batch_indices(step, train_cfg.batch_size, len(train_chunks), seed)]
        t0 = clock()
        loss, grads = loss_and_grads(model, batch, paradigm, rng)
        clip_grad_norm(grads, train_cfg.clip_norm)
        adamw_step(model.params, grads, opt, train_cfg, lr=train_cfg.lr_at(step))
        dt = clock() - t0
        wall_ms += dt * 1000.0
        rec = LogRecord(step, "train", loss, wall_ms, tokens_per_step / dt if dt > 0 else 0.0)
        history.records.append(rec)

        over_limit = over_limit + 1 if loss > train_cfg.divergence_loss else 0
        if over_limit >= train_cfg.divergence_patience:
            raise TrainingError(f"diverged: loss above {train_cfg.divergence_loss} nats for {over_limit} steps")

        if step % train_cfg.eval_every == 0 or step == train_cfg.steps:
            val = evaluate(model, data.val_chunks, paradigm, train_cfg.batch_size, seed)
            span = (wall_ms - last_eval_wall) / 1000.0
            tps = tokens_per_step * (step - last_eval_step) / span if span > 0 else 0.0
            vrec = LogRecord(step, "val", val, wall_ms, tps)
            history.records.append(vrec)
            last_eval_step, last_eval_wall = step, wall_ms
            if val < best_val:
                best_step, best_val = step, val
                best_params = {k: v.copy() for k, v in model.params.items()}
                checkpoint("best", step)
            checkpoint("last", step)
            if out is not None:
                history.save(out / "log.csv")
            if progress is not None:
                progress(vrec)
            log.info("%s step %d train %.4f val %.4f", paradigm, step, loss, val)
        if stop_after is not None and step == stop_after:
            checkpoint("last", step)
            if out is not None:
                history.save(out / "log.csv")
            break

    return TrainResult(history, model, best_step, best_val, best_params)

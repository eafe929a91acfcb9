"""Pre-norm transformer shared by both paradigms.

The causal/bidirectional attention switch and the optional timestep
conditioning are the only structural differences between the two models.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .corpus import VOCAB_SIZE
from .errors import ConfigError, ContractError

ATTENTION_MODES = ("causal", "bidirectional")


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = VOCAB_SIZE
    d_model: int = 128
    n_layers: int = 4
    n_heads: int = 4
    ffn_dim: int = 512
    seq_len: int = 128
    attention_mode: str = "causal"
    timestep_conditioning: bool = False
    tie_output_head: bool = False
    init_std: float = 0.02

    def __post_init__(self):
        if self.attention_mode not in ATTENTION_MODES:
            raise ConfigError(f"attention_mode must be one of {ATTENTION_MODES}")
        for field in ("vocab_size", "d_model", "n_heads", "ffn_dim"):
            if getattr(self, field) < 1:
                raise ConfigError(f"{field} must be positive")
        if self.n_layers < 0:
            raise ConfigError("n_layers must be >= 0")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.seq_len < 2:
            raise ConfigError("seq_len must be >= 2")
        if self.timestep_conditioning and self.d_model % 2:
            raise ConfigError("timestep conditioning needs an even d_model")

    @property
    def timestep_dim(self) -> int:
        return self.d_model

    def to_dict(self) -> dict:
        return asdict(self)


def preset(paradigm: str, **shared) -> ModelConfig:
    """The AR or MDLM variant of one shared set of hyperparameters."""
    if paradigm == "ar":
        return ModelConfig(attention_mode="causal", timestep_conditioning=False, **shared)
    if paradigm == "mdlm":
        return ModelConfig(attention_mode="bidirectional", timestep_conditioning=True, **shared)
    raise ConfigError(f"unknown paradigm {paradigm!r}")


def count_params(cfg: ModelConfig) -> int:
    V, d, f, L = cfg.vocab_size, cfg.d_model, cfg.ffn_dim, cfg.n_layers
    n = V * d + cfg.seq_len * d  # token + position tables
    # key projection has no bias: it would shift every score in a row equally
    per_layer = 2 * d + (4 * d * d + 3 * d) + 2 * d + (d * f + f) + (f * d + d)
    n += L * per_layer
    n += 2 * d  # final norm
    if not cfg.tie_output_head:
        n += d * V
    if cfg.timestep_conditioning:
        s = cfg.timestep_dim
        n += (s * d + d) + (d * d + d)
    return n


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    V, d, f = cfg.vocab_size, cfg.d_model, cfg.ffn_dim
    shapes: dict[str, tuple[int, ...]] = {"tok_emb": (V, d), "pos_emb": (cfg.seq_len, d)}
    if cfg.timestep_conditioning:
        shapes.update({
            "time.w1": (cfg.timestep_dim, d), "time.b1": (d,),
            "time.w2": (d, d), "time.b2": (d,),
        })
    for i in range(cfg.n_layers):
        p = f"blocks.{i}."
        shapes.update({
            p + "ln1.g": (d,), p + "ln1.b": (d,),
            p + "attn.wq": (d, d), p + "attn.bq": (d,),
            p + "attn.wk": (d, d),
            p + "attn.wv": (d, d), p + "attn.bv": (d,),
            p + "attn.wo": (d, d), p + "attn.bo": (d,),
            p + "ln2.g": (d,), p + "ln2.b": (d,),
            p + "mlp.w1": (d, f), p + "mlp.b1": (f,),
            p + "mlp.w2": (f, d), p + "mlp.b2": (d,),
        })
    shapes["ln_f.g"] = (d,)
    shapes["ln_f.b"] = (d,)
    if not cfg.tie_output_head:
        shapes["head"] = (d, V)
    return shapes


def init_params(cfg: ModelConfig, seed: int = 0) -> dict[str, np.ndarray]:
    """GPT-2 style init: N(0, std) weights, residual projections scaled by 1/sqrt(2L)."""
    rng = np.random.default_rng([seed, 0x1417])
    dtype = T.get_dtype()
    resid_std = cfg.init_std / math.sqrt(2 * max(cfg.n_layers, 1))
    params = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "g":
            arr = np.ones(shape)
        elif len(shape) == 1:
            arr = np.zeros(shape)
        elif leaf in ("wo", "w2") and name.startswith("blocks."):
            arr = rng.normal(0.0, resid_std, shape)
        else:
            arr = rng.normal(0.0, cfg.init_std, shape)
        params[name] = arr.astype(dtype)
    return params


def sinusoidal(t, dim: int) -> np.ndarray:
    """Raw timestep features: interleaved (sin(t*w_i), cos(t*w_i)), w_i = 10000^(-2i/dim).

    ``t`` may be a scalar or a 1-D array; the result has a trailing axis of ``dim``.
    """
    if dim % 2:
        raise ContractError(f"timestep embedding dim must be even, got {dim}")
    t = np.asarray(t, dtype=np.float64)
    omega = 10000.0 ** (-2.0 * np.arange(dim // 2) / dim)
    angles = t[..., None] * omega
    out = np.empty(t.shape + (dim,), dtype=np.float64)
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out


def timestep_embedding(p: dict[str, T.Tensor], t, dim: int) -> T.Tensor:
    """Sinusoidal features through Linear -> GELU -> Linear, width d_model."""
    raw = T._as_tensor(sinusoidal(t, dim))
    h = T.gelu(T.add(T.matmul(raw, p["time.w1"]), p["time.b1"]))
    return T.add(T.matmul(h, p["time.w2"]), p["time.b2"])


class Transformer:
    """Parameters plus a forward pass.  ``params`` maps names to numpy arrays."""

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray] | None = None, seed: int = 0):
        self.config = config
        self.params = params if params is not None else init_params(config, seed)
        expected = param_shapes(config)
        if set(self.params) != set(expected):
            missing = sorted(set(expected) - set(self.params))
            extra = sorted(set(self.params) - set(expected))
            raise ContractError(f"parameter set mismatch (missing={missing}, extra={extra})")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ContractError(f"{name}: expected shape {shape}, got {self.params[name].shape}")

    def num_params(self) -> int:
        return sum(int(a.size) for a in self.params.values())

    def _check_t(self, t, batch: int) -> np.ndarray | None:
        if not self.config.timestep_conditioning:
            if t is not None:
                raise ContractError("timestep given to a model without timestep conditioning")
            return None
        if t is None:
            raise ContractError("timestep-conditioned model needs t")
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (batch,))
        if not np.all((t >= 0.0) & (t <= 1.0)):
            raise ContractError("timestep outside [0, 1]")
        return t

    def forward(self, tokens, t=None, graph: T.Graph | None = None) -> T.Tensor:
        """Logits ``[batch, seq, vocab]`` for integer ``tokens`` ``[batch, seq]``.

        ``t`` (scalar or per-example) is required iff timestep conditioning is on.
        Pass a recording ``graph`` to differentiate; by default nothing is taped.
        """
        cfg = self.config
        tokens = np.asarray(tokens)
        if tokens.ndim == 1:
            tokens = tokens[None]
        B, S = tokens.shape
        if S > cfg.seq_len:
            raise ContractError(f"sequence length {S} exceeds model seq_len {cfg.seq_len}")
        t = self._check_t(t, B)
        g = graph if graph is not None else T.Graph(record=False)
        p = {name: g.param(name, arr) for name, arr in self.params.items()}

        pos = p["pos_emb"] if S == cfg.seq_len else T.embedding(p["pos_emb"], np.arange(S))
        x = T.add(T.embedding(p["tok_emb"], tokens), pos)
        if t is not None:
            temb = timestep_embedding(p, t, cfg.timestep_dim)
            x = T.add(x, T.reshape(temb, (B, 1, cfg.d_model)))

        causal = cfg.attention_mode == "causal"
        for i in range(cfg.n_layers):
            x = self._block(p, f"blocks.{i}.", x, causal)

        x = T.layer_norm(x, p["ln_f.g"], p["ln_f.b"])
        head = T.transpose(p["tok_emb"], (1, 0)) if cfg.tie_output_head else p["head"]
        return T.matmul(x, head)

    __call__ = forward

    def _block(self, p, pre: str, x: T.Tensor, causal: bool) -> T.Tensor:
        cfg = self.config
        B, S, d = x.shape
        H = cfg.n_heads
        dh = d // H

        h = T.layer_norm(x, p[pre + "ln1.g"], p[pre + "ln1.b"])

        def heads(w, b=None):
            y = T.matmul(h, p[pre + w])
            if b is not None:
                y = T.add(y, p[pre + b])
            return T.transpose(T.reshape(y, (B, S, H, dh)), (0, 2, 1, 3))

        q, k, v = heads("attn.wq", "attn.bq"), heads("attn.wk"), heads("attn.wv", "attn.bv")
        scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
        att = T.softmax(scores, causal=causal)
        ctx = T.reshape(T.transpose(T.matmul(att, v), (0, 2, 1, 3)), (B, S, d))
        x = T.add(x, T.add(T.matmul(ctx, p[pre + "attn.wo"]), p[pre + "attn.bo"]))

        h = T.layer_norm(x, p[pre + "ln2.g"], p[pre + "ln2.b"])
        h = T.gelu(T.add(T.matmul(h, p[pre + "mlp.w1"]), p[pre + "mlp.b1"]))
        return T.add(x, T.add(T.matmul(h, p[pre + "mlp.w2"]), p[pre + "mlp.b2"]))

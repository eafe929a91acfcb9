"""Experiment config files: flat ``key = value`` text with ``[section]`` headers.

Sections: ``[experiment]``, ``[model]`` (shared architecture), ``[train]``
(shared optimization), and ``[ar]`` / ``[mdlm]`` holding only each
paradigm's generation settings.  Both runs are built from the one record,
so shared values cannot drift apart.
"""

from __future__ import annotations

import configparser
import dataclasses
import functools
import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ConfigError
from ..model import ModelConfig, preset
from ..sampler import GenerationConfig
from ..train import PARADIGMS, TrainConfig

SHARED_MODEL_KEYS = ("d_model", "n_layers", "n_heads", "ffn_dim", "seq_len", "tie_output_head", "init_std")
TRAIN_KEYS = tuple(
    f.name for f in dataclasses.fields(TrainConfig) if f.name not in ("seed", "betas")
) + ("beta1", "beta2")
AR_GEN_KEYS = ("length", "top_p", "temperature")
MDLM_GEN_KEYS = ("length", "steps", "tau_start", "tau_end", "repetition_penalty")
EXPERIMENT_KEYS = ("corpus", "output", "seed", "split_fraction", "num_samples", "refs_per_sample")

# keys allowed to differ between the resolved AR and MDLM snapshots
PARADIGM_SPECIFIC = frozenset(
    {"paradigm", "model.attention_mode", "model.timestep_conditioning"}
    | {f"generate.{f.name}" for f in dataclasses.fields(GenerationConfig) if f.name != "seed"}
)


@dataclass(frozen=True)
class ExperimentConfig:
    corpus: str
    output: str
    seed: int = 0
    split_fraction: float = 0.05
    num_samples: int = 200
    refs_per_sample: int = 50
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    generate: dict = field(default_factory=lambda: {"ar": {}, "mdlm": {}})

    def __post_init__(self):
        if self.num_samples < 1:
            raise ConfigError("num_samples must be >= 1")
        if not 0 < self.split_fraction < 1:
            raise ConfigError("split_fraction must lie in (0, 1)")
        # constructing every derived config validates the values
        for p in PARADIGMS:
            self.model_config(p)
            self.generation_config(p)
        self.train_config()

    def model_config(self, paradigm: str) -> ModelConfig:
        return preset(paradigm, **self.model)

    def train_config(self) -> TrainConfig:
        kw = dict(self.train)
        b1, b2 = kw.pop("beta1", 0.9), kw.pop("beta2", 0.999)
        return TrainConfig(betas=(b1, b2), seed=self.seed, **kw)

    def generation_config(self, paradigm: str) -> GenerationConfig:
        return GenerationConfig(seed=self.seed, **self.generate.get(paradigm, {}))

    def with_overrides(self, **changes) -> "ExperimentConfig":
        gen_changes = {k: changes.pop(k) for k in ("length",) if changes.get(k) is not None}
        changes = {k: v for k, v in changes.items() if v is not None}
        generate = {p: dict(self.generate.get(p, {}), **gen_changes) for p in PARADIGMS}
        return dataclasses.replace(self, generate=generate, **changes)

    # --- serialization ---------------------------------------------------

    def corpus_digest(self) -> str:
        try:
            return _file_sha256(self.corpus)
        except OSError as exc:
            raise ConfigError(f"cannot read corpus {self.corpus}: {exc.strerror}") from None

    def snapshot(self) -> str:
        """Canonical text form of everything that shapes the results.

        The output directory is left out and the corpus is pinned by content,
        so a moved or copied run keeps its identity.
        """
        experiment = {k: getattr(self, k) for k in EXPERIMENT_KEYS if k != "output"}
        experiment["corpus_sha256"] = self.corpus_digest()
        sections = {
            "experiment": experiment,
            "model": self.model,
            "train": self.train,
            "ar": self.generate.get("ar", {}),
            "mdlm": self.generate.get("mdlm", {}),
        }
        lines = []
        for name, values in sections.items():
            lines.append(f"[{name}]")
            lines += [f"{k} = {_fmt(v)}" for k, v in sorted(values.items())]
            lines.append("")
        return "\n".join(lines)

    def config_hash(self) -> str:
        """Hash of the snapshot minus the corpus path (its digest stands in)."""
        basis = "\n".join(line for line in self.snapshot().split("\n") if not line.startswith("corpus = "))
        return hashlib.sha256(basis.encode("utf-8")).hexdigest()[:16]

    def resolved(self, paradigm: str) -> str:
        """Every effective setting of one paradigm's run, flat and sorted."""
        flat = {"paradigm": paradigm, "config_hash": self.config_hash()}
        flat.update({f"model.{k}": v for k, v in self.model_config(paradigm).to_dict().items()})
        flat.update({f"train.{k}": v for k, v in self.train_config().to_dict().items()})
        flat.update({f"generate.{k}": v for k, v in self.generation_config(paradigm).to_dict().items()})
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in sorted(flat.items()))


@functools.lru_cache(maxsize=8)
def _digest(path: str, size: int, mtime_ns: int) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _file_sha256(path: str) -> str:
    st = os.stat(path)
    return _digest(str(path), st.st_size, st.st_mtime_ns)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return ", ".join(_fmt(x) for x in v)
    if v is None:
        return "none"
    return str(v)


def _coerce(value: str, kind: type, key: str):
    value = value.strip()
    try:
        if kind is bool:
            low = value.lower()
            if low not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError
            return low in ("true", "yes", "1")
        if kind is int:
            return int(value)
        if kind is float:
            return float(value)
        return value
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {kind.__name__}") from None


_MODEL_TYPES = {f.name: f.type for f in dataclasses.fields(ModelConfig)}
_TYPES = {
    "model": {k: {"int": int, "bool": bool, "float": float}[_MODEL_TYPES[k]] for k in SHARED_MODEL_KEYS},
    "train": {
        "steps": int, "batch_size": int, "lr": float, "weight_decay": float, "eps": float,
        "warmup_steps": int, "eval_every": int, "clip_norm": float, "steady_state_skip": int,
        "divergence_loss": float, "divergence_patience": int, "beta1": float, "beta2": float,
    },
    "ar": {"length": int, "top_p": float, "temperature": float},
    "mdlm": {"length": int, "steps": int, "tau_start": float, "tau_end": float, "repetition_penalty": float},
    "experiment": {
        "corpus": str, "output": str, "seed": int, "split_fraction": float,
        "num_samples": int, "refs_per_sample": int,
    },
}


def parse_config(text: str, base_dir: str | Path = ".") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    unknown_sections = set(cp.sections()) - set(_TYPES)
    if unknown_sections:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown_sections))}")
    values: dict[str, dict] = {}
    for section, types in _TYPES.items():
        values[section] = {}
        if not cp.has_section(section):
            continue
        for key, raw in cp.items(section):
            if key not in types:
                where = "a paradigm block" if section in PARADIGMS else f"[{section}]"
                raise ConfigError(f"unknown key {key!r} in {where}")
            values[section][key] = _coerce(raw, types[key], f"{section}.{key}")
    exp = values["experiment"]
    if "corpus" not in exp or "output" not in exp:
        raise ConfigError("[experiment] needs corpus and output")
    base = Path(base_dir)
    for key in ("corpus", "output"):
        p = Path(exp[key])
        exp[key] = str(p if p.is_absolute() else (base / p))
    return ExperimentConfig(
        model=values["model"],
        train=values["train"],
        generate={"ar": values["ar"], "mdlm": values["mdlm"]},
        **exp,
    )


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, path.parent)


def diff_resolved(a: str, b: str) -> set[str]:
    """Keys whose values differ between two :meth:`ExperimentConfig.resolved` texts."""

    def parse(text):
        return dict(line.split(" = ", 1) for line in text.splitlines() if line)

    da, db = parse(a), parse(b)
    return {k for k in da.keys() | db.keys() if da.get(k) != db.get(k)}

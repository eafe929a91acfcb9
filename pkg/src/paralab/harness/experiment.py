"""Matched AR / MDLM runs from one config, and reports rebuilt from disk.

Run directory layout::

    config.snapshot
    ar/   config.snapshot log.csv ckpt_best ckpt_last samples.txt
    mdlm/ (same)
    report.csv report.md
    figures/ loss.csv loss.svg throughput.csv throughput.svg

``report.csv`` holds only values that are a pure function of (config, seed):
diversity metrics and validation-loss summaries.  Timings live in
``report.md`` and the throughput figure.
"""

from __future__ import annotations

import csv
import io
import logging
import shutil
from dataclasses import dataclass, field
from pathlib import Path

from .. import checkpoint as ckpt
from ..corpus import load_corpus
from ..errors import ConfigError, MeasurementError, ValidationError
from ..metrics import TOKEN_LEVEL_NOTE, PairedReport, SampleSet, compile_report
from ..model import count_params
from ..samplefile import read_samples, write_samples
from ..sampler import ar_generate, mdlm_generate
from ..train import PARADIGMS, ConvergenceLog, load_model, step_time_ms, train
from .config import PARADIGM_SPECIFIC, ExperimentConfig, diff_resolved
from .figures import emit_figures

log = logging.getLogger(__name__)

SNAPSHOT = "config.snapshot"
REQUIRED = ("log.csv", "samples.txt")


# --- report ------------------------------------------------------------------


@dataclass
class RunSummary:
    steps: int
    best_step: int
    best_val_loss: float
    final_val_loss: float
    step_ms: float | None

    def __post_init__(self):
        if not 0 < self.best_step <= self.steps:
            raise ValidationError(f"best step {self.best_step} outside (0, {self.steps}]")

    @classmethod
    def from_log(cls, clog: ConvergenceLog, skip: int = 50) -> "RunSummary":
        val = clog.split("val")
        if not val:
            raise ValidationError("log has no validation records")
        best_step, best_val = clog.best()
        try:
            ms = step_time_ms(clog, skip)
        except MeasurementError:
            ms = None
        return cls(clog.records[-1].step, best_step, best_val, val[-1].loss, ms)


@dataclass
class ComparisonReport:
    names: tuple[str, str]
    summaries: tuple[RunSummary, RunSummary]
    diversity: PairedReport
    config_hash: str
    notes: list[str] = field(default_factory=list)

    @property
    def throughput_ratio(self) -> float | None:
        """Steady-state step time of the second run over the first."""
        a, b = (s.step_ms for s in self.summaries)
        if a is None or b is None:
            return None
        return b / a

    def summary_rows(self) -> list[tuple[str, object, object]]:
        a, b = self.summaries
        return [
            ("total_steps", a.steps, b.steps),
            ("best_step", a.best_step, b.best_step),
            ("best_val_loss", a.best_val_loss, b.best_val_loss),
            ("final_val_loss", a.final_val_loss, b.final_val_loss),
        ]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# config_hash={self.config_hash}\n")
        buf.write(f"# {TOKEN_LEVEL_NOTE}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", self.names[0], self.names[1], "verdict"])
        for metric, va, vb, verdict in self.diversity.table():
            w.writerow([metric, _num(va), _num(vb), verdict])
        for metric, va, vb in self.summary_rows():
            w.writerow([metric, _num(va), _num(vb), ""])
        return buf.getvalue()

    def to_markdown(self) -> str:
        a, b = self.names
        lines = [f"# {a} vs {b}", "", f"config hash: `{self.config_hash}`", "", "## Training", ""]
        lines += [f"| | {a} | {b} |", "|---|---|---|"]
        for metric, va, vb in self.summary_rows():
            lines.append(f"| {metric} | {_num(va, 4)} | {_num(vb, 4)} |")
        sa, sb = self.summaries
        lines.append(f"| step_ms (steady state) | {_num(sa.step_ms, 1)} | {_num(sb.step_ms, 1)} |")
        ratio = self.throughput_ratio
        lines += ["", f"step-time ratio {b}/{a}: {_num(ratio, 3)}", "", "## Diversity", ""]
        lines.append(self.diversity.to_markdown())
        lines += ["", "## Notes", ""] + [f"- {n}" for n in self.notes]
        return "\n".join(lines) + "\n"


def _num(x, digits: int | None = None) -> str:
    if x is None:
        return "absent"
    if isinstance(x, int):
        return str(x)
    return f"{x:.{digits}f}" if digits is not None else repr(float(x))


# --- compare -----------------------------------------------------------------


def _hash_of(path: Path, found: str) -> str:
    if not found:
        raise ValidationError(f"{path} carries no config hash")
    return found


def _load_run(run_dir: Path) -> tuple[ConvergenceLog, SampleSet, str]:
    if not run_dir.is_dir():
        raise ValidationError(f"run directory {run_dir} does not exist")
    for name in REQUIRED:
        if not (run_dir / name).is_file():
            raise ValidationError(f"missing artifact: {run_dir / name}")
    clog = ConvergenceLog.load(run_dir / "log.csv")
    samples = read_samples(run_dir / "samples.txt")
    h_log = _hash_of(run_dir / "log.csv", clog.config_hash)
    h_samples = _hash_of(run_dir / "samples.txt", samples.provenance.get("config_hash", ""))
    if h_log != h_samples:
        raise ValidationError(f"{run_dir}: log hash {h_log} != samples hash {h_samples}")
    return clog, samples, h_log


def check_single_sourcing(dir_a: Path, dir_b: Path) -> None:
    """Resolved configs of the two runs may differ only in paradigm-specific keys."""
    snaps = [d / SNAPSHOT for d in (dir_a, dir_b)]
    if not all(p.is_file() for p in snaps):
        return
    stray = diff_resolved(*(p.read_text() for p in snaps)) - PARADIGM_SPECIFIC
    if stray:
        raise ValidationError(f"runs differ in shared settings: {', '.join(sorted(stray))}")


def compare(
    dir_a: str | Path,
    dir_b: str | Path,
    allow_mixed: bool = False,
    refs_per_sample: int | None = None,
    seed: int | None = None,
) -> ComparisonReport:
    """Rebuild the comparison report from two persisted run directories."""
    dir_a, dir_b = Path(dir_a), Path(dir_b)
    log_a, ss_a, hash_a = _load_run(dir_a)
    log_b, ss_b, hash_b = _load_run(dir_b)
    notes = []
    if hash_a != hash_b:
        if not allow_mixed:
            raise ValidationError(f"config hashes differ ({hash_a} vs {hash_b}); pass --allow-mixed to compare anyway")
        notes.append(f"mixed configs: {hash_a} vs {hash_b}")
    else:
        check_single_sourcing(dir_a, dir_b)
    prov = ss_a.provenance
    refs = refs_per_sample if refs_per_sample is not None else int(prov.get("refs_per_sample", 50))
    seed = seed if seed is not None else int(prov.get("experiment_seed", 0))
    names = (prov.get("paradigm", dir_a.name), ss_b.provenance.get("paradigm", dir_b.name))
    if names[0] == names[1]:
        names = (f"{names[0]}:{dir_a.name}", f"{names[1]}:{dir_b.name}") if dir_a != dir_b else (f"{names[0]}_a", f"{names[1]}_b")
    paired = compile_report(ss_a, ss_b, names, refs, seed)
    notes += [
        TOKEN_LEVEL_NOTE,
        f"self-BLEU uses {min(refs, len(ss_a) - 1, len(ss_b) - 1)} references per sample, seed {seed}",
        "validation losses measure different objectives and are not comparable across paradigms",
        "samples are generated from the best-validation checkpoint",
        "harness conventions: linear warmup then constant lr, global-norm clipping at 1.0, no lr decay, no dropout",
        "MDLM validation loss is averaged over fixed timestep strata t = 0.1..0.9",
    ]
    return ComparisonReport(
        names,
        (RunSummary.from_log(log_a), RunSummary.from_log(log_b)),
        paired,
        hash_a if hash_a == hash_b else f"{hash_a},{hash_b}",
        notes,
    )


# --- run ---------------------------------------------------------------------


def describe(cfg: ExperimentConfig) -> str:
    lines = [f"config hash {cfg.config_hash()}"]
    for p in PARADIGMS:
        mc = cfg.model_config(p)
        lines.append(f"{p}: {count_params(mc):,} parameters ({mc.attention_mode}, timestep={mc.timestep_conditioning})")
    tc = cfg.train_config()
    lines.append(f"train: {tc.steps} steps, batch {tc.batch_size}, lr {tc.lr}, eval every {tc.eval_every}")
    return "\n".join(lines)


def _snapshot_text(cfg: ExperimentConfig) -> str:
    return f"# config_hash={cfg.config_hash()}\n" + cfg.snapshot()


def _snapshot_hash(text: str) -> str:
    first = text.split("\n", 1)[0]
    return first.partition("config_hash=")[2].strip()


def prepare_output(cfg: ExperimentConfig, resume: bool = False, force: bool = False) -> Path:
    """Create the run directory, refusing to clobber earlier outputs by accident."""
    out = Path(cfg.output)
    snap = out / SNAPSHOT
    if out.exists() and any(out.iterdir()):
        if force:
            if not snap.is_file():
                raise ConfigError(f"refusing to delete {out}: it does not look like a run directory")
            shutil.rmtree(out)
        elif resume:
            if not snap.is_file() or _snapshot_hash(snap.read_text()) != cfg.config_hash():
                raise ConfigError(f"{out} was produced by a different config; cannot resume")
        else:
            raise ConfigError(f"{out} already has outputs; pass --resume or --force")
    out.mkdir(parents=True, exist_ok=True)
    snap.write_text(_snapshot_text(cfg))
    return out


def train_paradigm(cfg: ExperimentConfig, paradigm: str, data=None, resume: bool = False, progress=None):
    out = Path(cfg.output) / paradigm
    out.mkdir(parents=True, exist_ok=True)
    mc = cfg.model_config(paradigm)
    tc = cfg.train_config()
    (out / SNAPSHOT).write_text(cfg.resolved(paradigm))
    if resume and (out / "ckpt_last").exists():
        last = ckpt.load(out / "ckpt_last")
        if last.step >= tc.steps:
            log.info("%s already trained, skipping", paradigm)
            return ConvergenceLog.load(out / "log.csv")
    else:
        resume = False
    if data is None:
        data = load_corpus(cfg.corpus, mc.seq_len, cfg.split_fraction)
    result = train(mc, tc, data, paradigm, out_dir=out, resume=resume, config_hash=cfg.config_hash(), progress=progress)
    return result.log


def generate_paradigm(cfg: ExperimentConfig, paradigm: str, num_samples: int | None = None) -> Path:
    out = Path(cfg.output) / paradigm
    best = out / "ckpt_best"
    if not best.is_file():
        raise ValidationError(f"missing artifact: {best}")
    model, c = load_model(best)
    if c.metadata.get("config_hash") != cfg.config_hash():
        raise ValidationError(f"{best} was written under a different config")
    gcfg = cfg.generation_config(paradigm)
    n = num_samples if num_samples is not None else cfg.num_samples
    if paradigm == "ar":
        tokens = ar_generate(model, gcfg, n)
    else:
        tokens = mdlm_generate(model, gcfg, n)
    header = {
        "config_hash": cfg.config_hash(),
        "paradigm": paradigm,
        "checkpoint": "ckpt_best",
        "checkpoint_step": c.step,
        "checkpoint_params_sha256": ckpt.params_hash(model.params),
        "generation": gcfg.to_dict(),
        "experiment_seed": cfg.seed,
        "refs_per_sample": cfg.refs_per_sample,
        "num_samples": n,
    }
    path = out / "samples.txt"
    write_samples(path, tokens.tolist(), header)
    return path


def write_report(report: ComparisonReport, out: Path) -> None:
    (out / "report.csv").write_text(report.to_csv())
    (out / "report.md").write_text(report.to_markdown())


def run_experiment(
    cfg: ExperimentConfig,
    only: str | None = None,
    resume: bool = False,
    force: bool = False,
    progress=None,
) -> ComparisonReport | None:
    """Train, sample and report.  With ``only`` set, one paradigm is run and no report is written."""
    if only is not None and only not in PARADIGMS:
        raise ConfigError(f"--only must be one of {PARADIGMS}")
    out = prepare_output(cfg, resume, force)
    shared_data = None
    if len({cfg.model_config(p).seq_len for p in PARADIGMS}) == 1:
        shared_data = load_corpus(cfg.corpus, cfg.model_config("ar").seq_len, cfg.split_fraction)
    logs = {}
    for p in PARADIGMS if only is None else (only,):
        logs[p] = train_paradigm(cfg, p, shared_data, resume, progress)
        samples = out / p / "samples.txt"
        if not (resume and samples.is_file()):
            generate_paradigm(cfg, p)
    if only is not None:
        return None
    report = compare(out / "ar", out / "mdlm", refs_per_sample=cfg.refs_per_sample, seed=cfg.seed)
    write_report(report, out)
    emit_figures(logs, out / "figures", cfg.config_hash(), skip=cfg.train_config().steady_state_skip)
    return report

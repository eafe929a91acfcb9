"""Command-line entry point: ``paralab <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 runtime error, 4 artifact
validation error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..errors import ConfigError, ParalabError, ValidationError
from ..metrics import diversity_report
from ..samplefile import read_samples
from ..train import PARADIGMS, ConvergenceLog
from .config import load_config
from .experiment import (
    compare,
    describe,
    generate_paradigm,
    prepare_output,
    run_experiment,
    train_paradigm,
    write_report,
)
from .figures import emit_figures

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_VALIDATION = 0, 2, 3, 4


def _config(args):
    cfg = load_config(args.config)
    overrides = {k: getattr(args, k, None) for k in ("seed", "num_samples", "length")}
    return cfg.with_overrides(**overrides)


def _paradigms(args):
    return PARADIGMS if args.only is None else (args.only,)


def _print_progress(rec):
    print(f"step {rec.step:>6}  val {rec.loss:.4f}", flush=True)


def cmd_run(args) -> int:
    cfg = _config(args)
    if args.dry_run:
        print(describe(cfg))
        return EXIT_OK
    report = run_experiment(cfg, only=args.only, resume=args.resume, force=args.force, progress=_print_progress)
    if report is not None:
        print(report.to_markdown())
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    if args.dry_run:
        print(describe(cfg))
        return EXIT_OK
    prepare_output(cfg, args.resume, args.force)
    for p in _paradigms(args):
        train_paradigm(cfg, p, resume=args.resume, progress=_print_progress)
    return EXIT_OK


def cmd_generate(args) -> int:
    cfg = _config(args)
    for p in _paradigms(args):
        path = generate_paradigm(cfg, p)
        print(f"wrote {path}")
    return EXIT_OK


def cmd_eval_diversity(args) -> int:
    ss = read_samples(args.samples)
    report = diversity_report(ss, args.refs, args.seed)
    for metric, value in report.rows():
        print(f"{metric}\t{'absent' if value is None else value}")
    return EXIT_OK


def cmd_compare(args) -> int:
    report = compare(args.dir_a, args.dir_b, allow_mixed=args.allow_mixed, refs_per_sample=args.refs, seed=args.seed)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_report(report, out)
    print(report.to_markdown())
    return EXIT_OK


def cmd_plot(args) -> int:
    run = Path(args.run_dir)
    logs = {}
    for p in PARADIGMS:
        path = run / p / "log.csv"
        if path.is_file():
            logs[p] = ConvergenceLog.load(path)
    if not logs:
        raise ValidationError(f"missing artifact: no {run}/<paradigm>/log.csv found")
    hashes = {c.config_hash for c in logs.values()}
    emit_figures(logs, run / "figures", ",".join(sorted(hashes)))
    print(f"wrote figures to {run / 'figures'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="paralab", description="Matched AR vs masked-diffusion experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p, training: bool):
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int)
        p.add_argument("--only", choices=PARADIGMS)
        p.add_argument("--num-samples", type=int)
        p.add_argument("--length", type=int)
        if training:
            p.add_argument("--resume", action="store_true")
            p.add_argument("--force", action="store_true")
            p.add_argument("--dry-run", action="store_true")

    p = sub.add_parser("run", help="train both paradigms, sample, report")
    with_config(p, True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("train", help="train without sampling")
    with_config(p, True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample from each run's best checkpoint")
    with_config(p, False)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval-diversity", help="diversity metrics for one samples file")
    p.add_argument("samples")
    p.add_argument("--refs", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval_diversity)

    p = sub.add_parser("compare", help="rebuild a report from two run directories")
    p.add_argument("dir_a")
    p.add_argument("dir_b")
    p.add_argument("--allow-mixed", action="store_true")
    p.add_argument("--refs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("plot", help="loss and throughput figures from a run directory")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ParalabError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

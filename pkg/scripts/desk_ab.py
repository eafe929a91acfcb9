"""Build the corpora the bundled configs expect, then run one A/B experiment.

    python scripts/desk_ab.py                     # configs/desk.ini
    python scripts/desk_ab.py configs/prefix.ini --resume
"""

from __future__ import annotations

import argparse
import logging
import time
from pathlib import Path

from paralab.harness import load_config, run_experiment
from paralab.storygen import ensure_corpus

ROOT = Path(__file__).resolve().parent.parent


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("config", nargs="?", default=str(ROOT / "configs" / "desk.ini"))
    ap.add_argument("--resume", action="store_true")
    ap.add_argument("--force", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")

    cfg = load_config(args.config)
    if ensure_corpus(cfg.corpus):
        print(f"built {cfg.corpus}")
    start = time.perf_counter()
    report = run_experiment(
        cfg, resume=args.resume, force=args.force, progress=lambda r: print(f"step {r.step:>5}  val {r.loss:.4f}", flush=True)
    )
    print(report.to_markdown())
    print(f"total wall time {(time.perf_counter() - start) / 60:.1f} min")


if __name__ == "__main__":
    main()

"""Write a synthetic story corpus (blank-line separated documents)."""

from __future__ import annotations

import argparse
from pathlib import Path

from paralab.storygen import make_corpus


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out", type=Path)
    ap.add_argument("--bytes", type=int, default=1_100_000, help="minimum corpus size")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--fixed-prefix-fraction", type=float, default=0.0)
    args = ap.parse_args()
    text = make_corpus(args.bytes, seed=args.seed, fixed_prefix_fraction=args.fixed_prefix_fraction)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(text)
    print(f"wrote {len(text.encode()):,} bytes to {args.out}")


if __name__ == "__main__":
    main()

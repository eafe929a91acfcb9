"""Diversity metrics over a set of generated samples.

Distinct-n, Self-BLEU and vocabulary size work on token ids; opening
statistics work on whitespace-delimited words of the decoded text.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .corpus import detokenize

log = logging.getLogger(__name__)

BLEU_EPSILON = 1e-9
TOKEN_LEVEL_NOTE = "distinct-n, self-BLEU and vocabulary are computed over byte-level token ids"


def decode(ids) -> str:
    return detokenize(ids).decode("utf-8", errors="replace")


@dataclass
class SampleSet:
    samples: list[str]
    token_samples: list[list[int]]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.samples) != len(self.token_samples):
            raise ValueError("samples and token_samples must be parallel")

    @classmethod
    def from_tokens(cls, token_samples, provenance: dict | None = None) -> "SampleSet":
        toks = [[int(i) for i in s] for s in token_samples]
        return cls([decode(s) for s in toks], toks, dict(provenance or {}))

    def __len__(self) -> int:
        return len(self.samples)


def ngrams(seq, n: int) -> list[tuple]:
    return [tuple(seq[i : i + n]) for i in range(len(seq) - n + 1)]


def distinct_n(ss: SampleSet, n: int) -> float | None:
    """Unique n-grams over total n-gram slots, pooled over all samples.

    Returns None when no sample has ``n`` tokens.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    seen = set()
    total = 0
    for s in ss.token_samples:
        grams = ngrams(s, n)
        seen.update(grams)
        total += len(grams)
    return len(seen) / total if total else None


def vocab_used(ss: SampleSet) -> int:
    return len({tok for s in ss.token_samples for tok in s})


def openings(text: str, k: int) -> tuple[str, ...]:
    return tuple(text.split()[:k])


def unique_openings(ss: SampleSet, k: int) -> float:
    """Fraction of samples whose first ``k`` words open no other sample.

    A sample with fewer than ``k`` words is non-unique when another sample
    starts with those same words.
    """
    if not len(ss):
        raise ValueError("empty sample set")
    heads = [openings(s, k) for s in ss.samples]
    full = Counter(h for h in heads)
    unique = 0
    for i, h in enumerate(heads):
        if len(h) == k:
            unique += full[h] == 1
        else:
            m = len(h)
            unique += not any(j != i and other[:m] == h for j, other in enumerate(heads))
    return unique / len(heads)


def _bleu(hyp: list[int], refs: list[list[int]], max_n: int = 4) -> float:
    """Multi-reference BLEU, uniform weights, clipped counts, closest-length brevity penalty."""
    log_p = 0.0
    for n in range(1, max_n + 1):
        hyp_counts = Counter(ngrams(hyp, n))
        total = sum(hyp_counts.values())
        max_ref: Counter = Counter()
        for r in refs:
            for g, c in Counter(ngrams(r, n)).items():
                if c > max_ref[g]:
                    max_ref[g] = c
        matched = sum(min(c, max_ref[g]) for g, c in hyp_counts.items())
        p = matched / total if matched else BLEU_EPSILON
        log_p += math.log(p) / max_n
    c = len(hyp)
    r = min((abs(len(ref) - c), len(ref)) for ref in refs)[1]
    bp = 1.0 if c > r else (math.exp(1.0 - r / c) if c else 0.0)
    return bp * math.exp(log_p)


def self_bleu(ss: SampleSet, refs_per_sample: int = 50, seed: int = 0) -> float:
    """Mean BLEU of each sample against ``refs_per_sample`` random other samples.

    References for sample ``i`` are drawn without replacement from
    ``default_rng([seed, i])`` and used jointly (multi-reference BLEU).
    """
    n = len(ss)
    if n < 2:
        raise ValueError("self-BLEU needs at least two samples")
    if refs_per_sample >= n:
        log.warning("only %d samples; using %d references instead of %d", n, n - 1, refs_per_sample)
        refs_per_sample = n - 1
    scores = []
    for i, hyp in enumerate(ss.token_samples):
        others = np.array([j for j in range(n) if j != i])
        picks = np.random.default_rng([seed, i]).choice(others, size=refs_per_sample, replace=False)
        scores.append(_bleu(hyp, [ss.token_samples[j] for j in np.sort(picks)]))
    return math.fsum(scores) / n


@dataclass
class DiversityReport:
    distinct: dict[int, float | None]
    self_bleu: float
    vocab_used: int
    unique_first_word_fraction: float
    unique_first_5gram_fraction: float
    sample_count: int

    def rows(self) -> list[tuple[str, float | int | None]]:
        out: list[tuple[str, float | int | None]] = [(f"distinct_{n}", v) for n, v in sorted(self.distinct.items())]
        out += [
            ("self_bleu", self.self_bleu),
            ("vocab_used", self.vocab_used),
            ("unique_first_word", self.unique_first_word_fraction),
            ("unique_first_5gram", self.unique_first_5gram_fraction),
            ("sample_count", self.sample_count),
        ]
        return out


def diversity_report(ss: SampleSet, refs_per_sample: int = 50, seed: int = 0) -> DiversityReport:
    return DiversityReport(
        distinct={n: distinct_n(ss, n) for n in (1, 2, 3, 4)},
        self_bleu=self_bleu(ss, refs_per_sample, seed),
        vocab_used=vocab_used(ss),
        unique_first_word_fraction=unique_openings(ss, 1),
        unique_first_5gram_fraction=unique_openings(ss, 5),
        sample_count=len(ss),
    )


LOWER_IS_MORE_DIVERSE = {"self_bleu"}
NO_VERDICT = {"sample_count"}


def verdict(metric: str, a, b, names: tuple[str, str]) -> str:
    if metric in NO_VERDICT:
        return ""
    if a is None or b is None or a == b:
        return "tie"
    a_wins = a < b if metric in LOWER_IS_MORE_DIVERSE else a > b
    return names[0] if a_wins else names[1]


@dataclass
class PairedReport:
    names: tuple[str, str]
    a: DiversityReport
    b: DiversityReport

    def table(self) -> list[tuple[str, object, object, str]]:
        return [
            (metric, va, vb, verdict(metric, va, vb, self.names))
            for (metric, va), (_, vb) in zip(self.a.rows(), self.b.rows())
        ]

    def verdicts(self) -> dict[str, str]:
        return {m: v for m, _, _, v in self.table() if m not in NO_VERDICT}

    def to_csv(self, header_comment: str = "") -> str:
        buf = io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", self.names[0], self.names[1], "verdict"])
        for metric, va, vb, v in self.table():
            w.writerow([metric, _fmt(va), _fmt(vb), v])
        return buf.getvalue()

    def to_markdown(self) -> str:
        lines = [
            f"| Metric | {self.names[0]} | {self.names[1]} | More diverse |",
            "|---|---|---|---|",
        ]
        for metric, va, vb, v in self.table():
            lines.append(f"| {metric} | {_fmt(va, 4)} | {_fmt(vb, 4)} | {v} |")
        return "\n".join(lines)


def _fmt(x, digits: int | None = None) -> str:
    if x is None:
        return "absent"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{x:.{digits}f}" if digits is not None else repr(float(x))


def compile_report(
    set_a: SampleSet, set_b: SampleSet, names: tuple[str, str] = ("a", "b"), refs_per_sample: int = 50, seed: int = 0
) -> PairedReport:
    if not len(set_a) or not len(set_b):
        raise ValueError("both sample sets must be non-empty")
    return PairedReport(
        names,
        diversity_report(set_a, refs_per_sample, seed),
        diversity_report(set_b, refs_per_sample, seed),
    )

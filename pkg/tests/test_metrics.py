import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from paralab.metrics import (
    BLEU_EPSILON,
    SampleSet,
    _bleu,
    compile_report,
    distinct_n,
    self_bleu,
    unique_openings,
    verdict,
    vocab_used,
)


def texts(*words_lists):
    return SampleSet([" ".join(w) if isinstance(w, list) else w for w in words_lists], [[0]] * len(words_lists))


# -- independent oracles: written from the definitions, sharing no code with the package


def oracle_distinct(samples, n):
    grams, total = [], 0
    for s in samples:
        for i in range(len(s) - n + 1):
            g = tuple(s[i : i + n])
            if g not in grams:
                grams.append(g)
            total += 1
    return None if total == 0 else Fraction(len(grams), total)


def oracle_unique_openings(texts_, k):
    heads = [t.split()[:k] for t in texts_]
    count = 0
    for i, h in enumerate(heads):
        shared = False
        for j, o in enumerate(heads):
            if i != j and o[: len(h)] == h and (len(h) < k or len(o) == len(h)):
                shared = True
        count += not shared
    return Fraction(count, len(heads))


def oracle_bleu(hyp, refs, eps=1e-9):
    logs = []
    for n in (1, 2, 3, 4):
        hg = [tuple(hyp[i : i + n]) for i in range(len(hyp) - n + 1)]
        matched = 0
        for g in set(hg):
            in_hyp = hg.count(g)
            best = 0
            for r in refs:
                rg = [tuple(r[i : i + n]) for i in range(len(r) - n + 1)]
                best = max(best, rg.count(g))
            matched += min(in_hyp, best)
        prec = matched / len(hg) if matched > 0 else eps
        logs.append(math.log(prec))
    c = len(hyp)
    # closest reference length, shorter wins ties
    r = sorted((abs(len(x) - c), len(x)) for x in refs)[0][1]
    bp = 1.0 if c > r else math.exp(1 - r / c)
    return bp * math.exp(sum(logs) / 4)


def random_samples(seed, count=20, vocab=6):
    rng = np.random.default_rng(seed)
    return [rng.integers(0, vocab, rng.integers(1, 12)).tolist() for _ in range(count)]


def test_distinct_examples():
    ss = SampleSet.from_tokens([[1, 2, 1, 2]])
    assert distinct_n(ss, 1) == 0.5
    assert distinct_n(ss, 2) == pytest.approx(2 / 3)
    assert distinct_n(ss, 5) is None
    with pytest.raises(ValueError):
        distinct_n(ss, 0)


def test_distinct_identical_sets_decrease_with_n():
    s = [3, 1, 4, 1, 5, 9, 2, 6]
    prev = 2.0
    for count in range(1, 8):
        ss = SampleSet.from_tokens([s] * count)
        want = oracle_distinct([s] * count, 2)
        assert distinct_n(ss, 2) == float(want)
        assert distinct_n(ss, 2) < prev
        prev = distinct_n(ss, 2)


def test_vocab_examples():
    assert vocab_used(SampleSet.from_tokens([[7, 7, 7]])) == 1
    assert vocab_used(SampleSet.from_tokens([list(range(1, 11)), list(range(5, 16))])) == 15


def test_openings_examples():
    assert unique_openings(texts("once upon", "once more", "mom said"), 1) == pytest.approx(1 / 3)
    assert unique_openings(texts("a", "b", "c"), 1) == 1.0
    assert unique_openings(texts(*(["Once"] * 998 + ["Mom", "Tim"])), 1) == pytest.approx(0.002)
    # case-sensitive, leading whitespace ignored
    assert unique_openings(texts("  Once x", "once x"), 1) == 1.0
    # a short sample is unique only if nobody else starts with its words
    assert unique_openings(texts("a b", "a b c d e", "x y z w v"), 5) == pytest.approx(2 / 3)
    assert unique_openings(texts("a b", "c d e f g"), 5) == 1.0


@pytest.mark.parametrize("seed", range(5))
def test_count_metrics_match_oracle(seed):
    toks = random_samples(seed)
    ss = SampleSet.from_tokens(toks)
    for n in (1, 2, 3, 4):
        want = oracle_distinct(toks, n)
        assert distinct_n(ss, n) == (None if want is None else float(want))
    assert vocab_used(ss) == len(set(t for s in toks for t in s))
    rng = np.random.default_rng(seed)
    words = ["Once", "once", "Mom", "the", "a"]
    txt = [" ".join(rng.choice(words, rng.integers(0, 7))) for _ in range(20)]
    for k in (1, 2, 5):
        assert unique_openings(texts(*txt), k) == float(oracle_unique_openings(txt, k))


@pytest.mark.parametrize("seed", range(5))
def test_bleu_matches_oracle(seed):
    toks = random_samples(seed + 100, vocab=4)
    for i in range(len(toks)):
        refs = toks[:i] + toks[i + 1 :]
        assert _bleu(toks[i], refs[:7]) == pytest.approx(oracle_bleu(toks[i], refs[:7]), abs=1e-9)


def test_bleu_hand_case():
    a, b, c = [1, 2, 3, 4, 5, 6], [1, 2, 3, 9, 9, 6], [7, 2, 3, 4, 8, 8]
    ss = SampleSet.from_tokens([a, b, c])
    want = np.mean([oracle_bleu(a, [b, c]), oracle_bleu(b, [a, c]), oracle_bleu(c, [a, b])])
    assert self_bleu(ss, refs_per_sample=2) == pytest.approx(want, abs=1e-9)
    assert 0.0 < want < 1.0


def test_self_bleu_identical_and_disjoint():
    assert self_bleu(SampleSet.from_tokens([[1, 2, 3, 4, 5]] * 6), refs_per_sample=3) == pytest.approx(1.0)
    disjoint = [[10 * i + j for j in range(6)] for i in range(6)]
    assert self_bleu(SampleSet.from_tokens(disjoint), refs_per_sample=3) < 1e-6
    assert BLEU_EPSILON == 1e-9


def test_self_bleu_reduces_refs_with_warning(caplog):
    ss = SampleSet.from_tokens(random_samples(1, count=5))
    with caplog.at_level("WARNING"):
        x = self_bleu(ss, refs_per_sample=50, seed=0)
    assert "using 4 references" in caplog.text
    assert x == self_bleu(ss, refs_per_sample=4, seed=0)


def test_self_bleu_seeded():
    ss = SampleSet.from_tokens(random_samples(2, count=30))
    assert self_bleu(ss, 5, seed=1) == self_bleu(ss, 5, seed=1)


def test_self_bleu_permutation_invariance_over_seeds():
    toks = random_samples(3, count=40, vocab=5)
    perm = [toks[i] for i in np.random.default_rng(0).permutation(len(toks))]
    a = np.mean([self_bleu(SampleSet.from_tokens(toks), 10, seed=s) for s in range(5)])
    b = np.mean([self_bleu(SampleSet.from_tokens(perm), 10, seed=s) for s in range(5)])
    assert abs(a - b) < 0.01


@given(st.lists(st.lists(st.integers(0, 4), min_size=4, max_size=9), min_size=2, max_size=10), st.data())
def test_order_and_duplicate_properties(toks, data):
    ss = SampleSet.from_tokens(toks)
    perm = data.draw(st.permutations(toks))
    ps = SampleSet.from_tokens(perm)
    for n in (1, 2, 3):
        assert distinct_n(ss, n) == distinct_n(ps, n)
    assert unique_openings(ss, 1) == unique_openings(ps, 1)
    dup = SampleSet.from_tokens(toks + [data.draw(st.sampled_from(toks))])
    for n in (1, 2, 3):
        before, after = distinct_n(ss, n), distinct_n(dup, n)
        if before is not None:
            assert after <= before
    # all references used, so self-BLEU is order-free; a duplicate of a sample with
    # a 4-gram scores 1.0 and lifts its twin to 1.0 without moving any closest length
    full = len(toks) - 1
    assert self_bleu(dup, full + 1) >= self_bleu(ss, full) - 1e-12


def test_duplicate_of_short_sample_can_lower_self_bleu():
    # under four tokens there are no 4-grams, so the duplicate itself scores ~epsilon
    toks = [[0], [0, 0], [0, 0]]
    assert self_bleu(SampleSet.from_tokens(toks + [[0]]), 3) < self_bleu(SampleSet.from_tokens(toks), 2)


def test_verdicts():
    names = ("ar", "mdlm")
    assert verdict("distinct_1", 0.2, 0.3, names) == "mdlm"
    assert verdict("self_bleu", 0.2, 0.3, names) == "ar"
    assert verdict("unique_first_5gram", 0.5, 0.5, names) == "tie"
    assert verdict("distinct_4", None, 0.5, names) == "tie"
    assert verdict("sample_count", 10, 20, names) == ""


def test_compile_report_identical_is_all_tie():
    ss = SampleSet.from_tokens(random_samples(4, count=12))
    rep = compile_report(ss, ss, names=("x", "y"), refs_per_sample=5)
    assert set(rep.verdicts().values()) == {"tie"}
    lines = rep.to_csv("config_hash=abc").splitlines()
    assert lines[0] == "# config_hash=abc"
    assert lines[1] == "metric,x,y,verdict"
    assert len(lines) == 2 + 9
    md = rep.to_markdown().splitlines()
    assert md[0] == "| Metric | x | y | More diverse |"


def test_compile_report_novel_sample_vocab_monotone():
    toks = random_samples(5, count=12)
    a = SampleSet.from_tokens(toks)
    b = SampleSet.from_tokens(toks + [[200, 201, 202]])
    rep = compile_report(a, b, refs_per_sample=5)
    assert rep.b.vocab_used >= rep.a.vocab_used
    with pytest.raises(ValueError):
        compile_report(a, SampleSet([], []))


def test_report_ratios_in_range():
    ss = SampleSet.from_tokens(random_samples(6, count=20))
    rep = compile_report(ss, ss, refs_per_sample=5).a
    for metric, v in rep.rows():
        if metric not in ("vocab_used", "sample_count") and v is not None:
            assert 0.0 <= v <= 1.0
    assert rep.vocab_used <= 259

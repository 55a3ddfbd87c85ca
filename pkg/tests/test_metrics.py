import math
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kb2text.harvest import KBTriple
from kb2text.metrics import STOPWORDS, EvalReport, bleu, overgen_ngrams, rouge_l


# -- BLEU ---------------------------------------------------------------------


def test_bleu_identity():
    seqs = [["the", "cat", "sat"], ["a", "dog"]]
    assert bleu(seqs, seqs) == pytest.approx(1.0)


def test_bleu_disjoint_is_zero():
    assert bleu([["aa", "bb", "cc", "dd"]], [["ww", "xx", "yy", "zz"]]) == 0.0


def _oracle_bleu(hyps, refs):
    # From-scratch clipped-count corpus BLEU, straight off the definition.
    # Orders with no n-grams anywhere are skipped; a zero match at a
    # populated order zeroes the score.
    pairs = []
    for n in range(1, 5):
        match = total = 0
        for hyp, ref in zip(hyps, refs):
            h = Counter(tuple(hyp[i:i + n]) for i in range(len(hyp) - n + 1))
            r = Counter(tuple(ref[i:i + n]) for i in range(len(ref) - n + 1))
            match += sum(min(c, r[g]) for g, c in h.items())
            total += max(len(hyp) - n + 1, 0)
        if total > 0:
            pairs.append((match, total))
    if not pairs or any(m == 0 for m, _ in pairs):
        return 0.0
    log_sum = sum(math.log(m / t) for m, t in pairs) / len(pairs)
    c = sum(len(h) for h in hyps)
    r = sum(len(r_) for r_ in refs)
    bp = 1.0 if c > r else math.exp(1 - r / c)
    return bp * math.exp(log_sum)


def test_bleu_two_sentence_hand_case():
    hyps = [["the", "cat", "sat", "on", "the", "mat"], ["a", "dog", "barked"]]
    refs = [["the", "cat", "sat", "on", "a", "mat"], ["the", "dog", "barked"]]
    # Clipped counts by hand: p1=7/9, p2=4/7, p3=2/5, p4=1/3, BP=1.
    expected = (7 / 9 * 4 / 7 * 2 / 5 * 1 / 3) ** 0.25
    assert bleu(hyps, refs) == pytest.approx(expected, abs=1e-12)
    assert _oracle_bleu(hyps, refs) == pytest.approx(expected, abs=1e-12)


@given(st.data())
@settings(max_examples=40, deadline=None)
def test_bleu_matches_oracle_on_random_pairs(data):
    word = st.sampled_from(["a", "b", "c", "d", "e"])
    hyps = data.draw(st.lists(st.lists(word, min_size=1, max_size=8), min_size=1, max_size=4))
    refs = data.draw(st.lists(st.lists(word, min_size=1, max_size=8),
                              min_size=len(hyps), max_size=len(hyps)))
    assert bleu(hyps, refs) == pytest.approx(_oracle_bleu(hyps, refs), abs=1e-12)


def test_bleu_brevity_penalty():
    # Shorter hypothesis than reference triggers exp(1 - r/c).
    hyps = [["the", "cat", "sat", "on"]]
    refs = [["the", "cat", "sat", "on", "a", "mat"]]
    got = bleu(hyps, refs)
    assert got == pytest.approx(_oracle_bleu(hyps, refs), abs=1e-12)
    assert got < 1.0


def test_bleu_empty_input_raises():
    with pytest.raises(ValueError):
        bleu([], [])
    with pytest.raises(ValueError):
        bleu([["a"]], [])


# -- ROUGE_L ------------------------------------------------------------------


def test_rouge_identity():
    seqs = [["x", "y", "z"]]
    assert rouge_l(seqs, seqs) == pytest.approx(1.0)


def test_rouge_disjoint():
    assert rouge_l([["aa", "bb"]], [["cc", "dd"]]) == 0.0


def test_rouge_hand_case():
    # hyp "a b c" vs ref "a c": LCS=2, P=2/3, R=1, beta=1.2:
    # F = (1+1.44) * (2/3) * 1 / (1 + 1.44 * 2/3) = 4.88/5.88.
    assert rouge_l([["a", "b", "c"]], [["a", "c"]]) == pytest.approx(4.88 / 5.88, abs=1e-12)


def test_rouge_mean_over_pairs():
    hyps = [["a", "b", "c"], ["q", "q"]]
    refs = [["a", "c"], ["z", "z"]]
    assert rouge_l(hyps, refs) == pytest.approx((4.88 / 5.88 + 0.0) / 2, abs=1e-12)


# -- over-generation audit ----------------------------------------------------


def _triples():
    return [KBTriple("Alba Corin", "works at", "Mirex")]


def test_overgen_fully_supported_is_zero():
    hyp = "Alba Corin works at Mirex".split()
    counts = overgen_ngrams([hyp], [_triples()])
    assert all(c == 0 for c in counts.values())


def test_overgen_single_word_window_counts():
    # No stopwords here, so the filtered sequence is the hypothesis itself
    # and the single over-generated word sits at position 3 of 5.  Windows
    # enumerated by hand: one 1-gram, two 2-grams, three 3-grams touch it.
    hyp = ["Alba", "Corin", "zzz", "works", "Mirex"]
    counts = overgen_ngrams([hyp], [_triples()], n_max=3)
    assert counts[1] == 1
    assert counts[2] == 2
    assert counts[3] == 3


def test_overgen_stopwords_never_flagged():
    hyp = ["the", "very", "Alba"]
    counts = overgen_ngrams([hyp], [_triples()])
    assert counts[1] == 0


def test_overgen_windows_over_unfiltered_flag():
    hyp = ["Alba", "the", "zzz"]
    after = overgen_ngrams([hyp], [_triples()], n_max=2)
    before = overgen_ngrams([hyp], [_triples()], n_max=2,
                            windows_after_stopword_removal=False)
    # Filtered sequence is [Alba, zzz]: one flagged 1-gram, one flagged 2-gram.
    assert after == {1: 1, 2: 1}
    # Unfiltered keeps "the" inside windows: (the,zzz) and (Alba,the) windows.
    assert before == {1: 1, 2: 1}


def test_overgen_monotone_in_added_word():
    base = ["Alba", "Corin", "works"]
    more = base + ["qqq"]
    a = overgen_ngrams([base], [_triples()])
    b = overgen_ngrams([more], [_triples()])
    assert all(b[n] >= a[n] for n in a)


def test_stopword_list_is_fixed_size():
    assert len(STOPWORDS) == 150


def test_report_serialization():
    rep = EvalReport(bleu=0.5, rouge_l=0.6, entity_recall_mean=0.7,
                     overgen_counts={1: 3, 2: 4})
    d = rep.as_dict()
    assert d["overgen_counts"] == {"1": 3, "2": 4}
    assert "BLEU" in rep.render_table()

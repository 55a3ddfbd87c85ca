"""Generation quality metrics and the over-generation n-gram audit.

BLEU is corpus-level with uniform 4-gram weights, clipped counts, a brevity
penalty, and no smoothing: a zero count at any order yields 0.  ROUGE_L is
the LCS F-measure averaged over pairs.  The audit strips a fixed 150-word
stopword list, flags every remaining word that appears in no input-triple
field, and counts n-gram windows containing at least one flagged word.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field

from .harvest import KBTriple

# Exactly 150 entries; the audit depends on this list staying fixed.
STOPWORDS = frozenset("""
a about above after again against all also am among an and any are around as
at away back be because been before being below between both but by can
cannot could did do does doing down during each even ever every few for from
further had has have having he her here hers herself him himself his how
however i if in into is it its itself just may me might more most much must
my myself never no nor not now of off often on once only or other our ours
ourselves out over own per same she should since so some still such than that
the their theirs them themselves then there these they this those through to
too under until up upon very via was we were what when where which while who
whom why will with within without would yet you your yours yourself
yourselves
""".split())


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(hyps: list[list[str]], refs: list[list[str]], max_order: int = 4) -> float:
    """Corpus BLEU over paired token sequences, one reference per hypothesis."""
    if not hyps or len(hyps) != len(refs):
        raise ValueError("need equally many non-empty hypothesis and reference lists")
    matched = [0] * max_order
    total = [0] * max_order
    hyp_len = ref_len = 0
    for hyp, ref in zip(hyps, refs):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_order + 1):
            hyp_counts = _ngrams(hyp, n)
            ref_counts = _ngrams(ref, n)
            matched[n - 1] += sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
            total[n - 1] += max(len(hyp) - n + 1, 0)
    # Orders with no n-grams at all (inputs shorter than n) are skipped so
    # that identical inputs always score 1; a zero match at any populated
    # order still zeroes the whole score.
    populated = [(m, t) for m, t in zip(matched, total) if t > 0]
    if not populated or any(m == 0 for m, _ in populated):
        return 0.0
    log_precision = sum(math.log(m / t) for m, t in populated) / len(populated)
    brevity = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / max(hyp_len, 1))
    return brevity * math.exp(log_precision)


def _lcs_length(a: list[str], b: list[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(hyps: list[list[str]], refs: list[list[str]], beta: float = 1.2) -> float:
    """Mean LCS-based F-measure, (1 + beta^2) P R / (R + beta^2 P)."""
    if not hyps or len(hyps) != len(refs):
        raise ValueError("need equally many non-empty hypothesis and reference lists")
    scores = []
    for hyp, ref in zip(hyps, refs):
        lcs = _lcs_length(hyp, ref) if hyp and ref else 0
        if lcs == 0:
            scores.append(0.0)
            continue
        p = lcs / len(hyp)
        r = lcs / len(ref)
        scores.append((1 + beta**2) * p * r / (r + beta**2 * p))
    return sum(scores) / len(scores)


def overgen_ngrams(
    hyps: list[list[str]],
    triples_per_hyp: list[list[KBTriple]],
    stopwords: frozenset[str] = STOPWORDS,
    n_max: int = 5,
    windows_after_stopword_removal: bool = True,
) -> dict[int, int]:
    """Count n-gram windows containing at least one over-generated word.

    A word is over-generated when, after stopword removal, its case-folded
    form appears in no head/relation/tail word set of the paired triples.
    With the flag off, windows slide over the unfiltered sequence instead
    (stopwords then never count as over-generated but do fill windows).
    """
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    if len(hyps) != len(triples_per_hyp):
        raise ValueError("need one triple list per hypothesis")
    counts = {n: 0 for n in range(1, n_max + 1)}
    for hyp, triples in zip(hyps, triples_per_hyp):
        covered = set()
        for t in triples:
            covered.update(w.casefold() for w in t.words())
        if windows_after_stopword_removal:
            seq = [w for w in hyp if w.casefold() not in stopwords]
            flags = [w.casefold() not in covered for w in seq]
        else:
            seq = hyp
            flags = [
                w.casefold() not in stopwords and w.casefold() not in covered for w in seq
            ]
        for n in range(1, n_max + 1):
            counts[n] += sum(
                1 for i in range(len(seq) - n + 1) if any(flags[i : i + n])
            )
    return counts


@dataclass
class EvalReport:
    bleu: float
    rouge_l: float
    entity_recall_mean: float
    overgen_counts: dict[int, int] = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = {
            "bleu": self.bleu,
            "rouge_l": self.rouge_l,
            "entity_recall_mean": self.entity_recall_mean,
            "overgen_counts": {str(k): v for k, v in sorted(self.overgen_counts.items())},
        }
        out.update(self.extra)
        return out

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True, indent=2)

    def render_table(self) -> str:
        lines = [
            f"{'BLEU':<20}{self.bleu:.4f}",
            f"{'ROUGE_L':<20}{self.rouge_l:.4f}",
            f"{'entity recall':<20}{self.entity_recall_mean:.4f}",
        ]
        for n, c in sorted(self.overgen_counts.items()):
            lines.append(f"{f'overgen {n}-gram':<20}{c}")
        return "\n".join(lines)

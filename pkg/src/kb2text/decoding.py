"""Beam search and its supportiveness-rebalanced variant.

Both searches share one core: per step, every live hypothesis is expanded
over the whole vocabulary, the top `beam` candidates by cumulative log-score
survive (ties broken by token id), EOS finishes a hypothesis, and final
ranking is by length-normalized score.  Rebalancing adds alpha * log
sigma(s_p) to each token's per-step log-probability and keeps it in the
cumulative score; the five specials are exempt so termination can never be
blocked.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .bpe import SPECIALS
from .estimator import SupportEstimator, support_matrix, support_vector


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]
    score: float
    finished: bool

    @property
    def normalized_score(self) -> float:
        return self.score / max(len(self.tokens), 1)


def vocab_supportiveness(k_ids: list[int], se_model: SupportEstimator) -> torch.Tensor:
    """sigma(s) for every vocabulary id against the given source, specials pinned to 1.

    The estimator is per-position, so scoring the pseudo-target [0..|V|-1]
    once covers every candidate token the search could propose.
    """
    with torch.no_grad():
        f_k = se_model.extract_features(k_ids, "src")
        f_all = se_model.extract_features(list(range(se_model.vocab_size)), "tgt")
        sig = support_vector(support_matrix(f_k, f_all)).sigma.clone()
    sig[: len(SPECIALS)] = 1.0
    return sig


def _expand(model, k_ids: list[int], beam: int, max_len: int,
            bonus: torch.Tensor | None) -> list[Hypothesis]:
    if beam < 1:
        raise ValueError("beam must be at least 1")
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    forbidden = tuple(getattr(model, "forbidden_ids", ()))
    with torch.no_grad():
        memory = model.encode(k_ids)
    live = [Hypothesis((), 0.0, False)]
    finished: list[Hypothesis] = []
    for _ in range(max_len):
        prefixes = [[model.start_id] + list(h.tokens) for h in live]
        scores = model.next_log_probs(memory, prefixes)
        if bonus is not None:
            scores = scores + bonus
        candidates = []
        for b, hyp in enumerate(live):
            row = scores[b]
            for v in range(model.vocab_size):
                if v in forbidden:
                    continue
                candidates.append((hyp.score + float(row[v]), v, b))
        candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
        next_live = []
        for score, v, b in candidates[:beam]:
            tokens = live[b].tokens + (v,)
            if v == model.eos_id:
                finished.append(Hypothesis(tokens, score, True))
            else:
                next_live.append(Hypothesis(tokens, score, False))
        live = next_live
        if not live:
            break
    finished.extend(Hypothesis(h.tokens, h.score, True) for h in live)
    finished.sort(key=lambda h: (-h.normalized_score, h.tokens))
    return finished


def beam_search(model, k_ids: list[int], beam: int, max_len: int) -> list[Hypothesis]:
    """Length-normalized beam search; beam=1 is greedy decoding."""
    return _expand(model, k_ids, beam, max_len, bonus=None)


def rebalanced_beam_search(
    model,
    k_ids: list[int],
    se_model: SupportEstimator,
    beam: int,
    max_len: int,
    alpha: float = 0.1,
) -> list[Hypothesis]:
    """Beam search whose per-step scores carry an alpha-weighted support bonus.

    alpha=0 reproduces `beam_search` output exactly.
    """
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    sup = vocab_supportiveness(k_ids, se_model)
    bonus = alpha * torch.log(sup)
    return _expand(model, k_ids, beam, max_len, bonus=bonus)


def strip_eos(tokens: tuple[int, ...], eos_id: int) -> list[int]:
    return [t for t in tokens if t != eos_id]


def write_decodes(path, rows: list[tuple[int, str, float]]) -> None:
    """Tab-separated decode dump: record id, detokenized text, model score."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec_id, text, score in rows:
            fh.write(f"{rec_id}\t{text}\t{score:.6f}\n")

"""Three ways of injecting supportiveness into the generator's training signal.

All three are pure functions; the hard adaptor takes its randomness as an
explicit generator and is meant to be re-drawn every epoch rather than
fixing one filtered target.
"""

from __future__ import annotations

import numpy as np
import torch


def hard_adapt(tokens: list[int], sigma: np.ndarray, rng: np.random.Generator) -> list[int]:
    """Keep token i iff a fresh uniform draw r_i <= sigma[i]; may return []."""
    if len(sigma) != len(tokens):
        raise ValueError("sigma length must match token count")
    draws = rng.random(len(tokens))
    return [tok for tok, r, sig in zip(tokens, draws, sigma) if r <= sig]


def soft_adapt(ell: torch.Tensor, sigma: torch.Tensor) -> torch.Tensor:
    """Supportiveness-weighted total loss: sum_i ell_i * sigma_i, no renormalization."""
    if ell.shape != sigma.shape:
        raise ValueError("ell and sigma lengths differ")
    return (ell * sigma).sum()


def attention_supportiveness(attention: torch.Tensor) -> torch.Tensor:
    """Per-target-position max attention over heads and source positions.

    `attention` has shape (heads, |T|, |K'|) with rows summing to 1; the max
    is used so that mass split across duplicate source words does not drag
    the score down.
    """
    if attention.dim() != 3:
        raise ValueError("expected a (heads, target, source) tensor")
    return attention.amax(dim=(0, 2))

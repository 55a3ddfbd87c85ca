"""Supportiveness estimator: how strongly the input triples convey each target word.

Two per-position feature extractors (one for the linearized source, one for
the target text) embed tokens, normalize, pass a two-layer feedforward, and
normalize again; no information flows between positions.  The support matrix
is the inner-product table between source and target features; a target
word's raw supportiveness is the log-sum-exp of its column, squashed through
a sigmoid for every downstream consumer.

Training is self-supervised: a margin loss pushes real target words above
negative-sampled ones, a word-consistency loss sharpens the alignment for
tokens shared verbatim between source and target, and a concentration loss
penalizes any single source token that supports too much of the target.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch

from .bpe import BPEModel
from .errors import NumericalError
from .harvest import Record, linearize
from .nncore import ParamSet, TrainConfig, adam_step, init_params

logger = logging.getLogger(__name__)

NORM_EPS = 1e-5


class DegenerateDistributionError(ValueError):
    """No token outside the target has positive sampling mass."""


@dataclass
class SupportVector:
    """Raw log-sum-exp scores `s` and their sigmoid squash, one per target position."""

    s: torch.Tensor
    sigma: torch.Tensor


def _extractor_spec(side: str, vocab_size: int, dim: int, hidden: int):
    return [
        (f"{side}.emb", (vocab_size, dim)),
        (f"{side}.nl1.gamma", (dim,)),
        (f"{side}.nl1.beta", (dim,)),
        (f"{side}.fw1.weight", (hidden, dim)),
        (f"{side}.fw1.bias", (hidden,)),
        (f"{side}.fw2.weight", (dim, hidden)),
        (f"{side}.fw2.bias", (dim,)),
        (f"{side}.nl2.gamma", (dim,)),
        (f"{side}.nl2.beta", (dim,)),
    ]


def _normalize(x: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor) -> torch.Tensor:
    """Per-position normalization over the feature dimension (population variance)."""
    mean = x.mean(dim=-1, keepdim=True)
    var = x.var(dim=-1, unbiased=False, keepdim=True)
    return gamma * (x - mean) / torch.sqrt(var + NORM_EPS) + beta


class SupportEstimator:
    """Parameter container plus forward passes for both feature extractors."""

    def __init__(self, params: ParamSet, vocab_size: int, dim: int, hidden: int):
        self.params = params
        self.vocab_size = vocab_size
        self.dim = dim
        self.hidden = hidden

    @classmethod
    def create(cls, vocab_size: int, dim: int = 64, hidden: int = 256, seed: int = 0):
        spec = _extractor_spec("src", vocab_size, dim, hidden) + _extractor_spec(
            "tgt", vocab_size, dim, hidden
        )
        return cls(init_params(spec, seed), vocab_size, dim, hidden)

    def config(self) -> dict:
        return {"vocab_size": self.vocab_size, "dim": self.dim, "hidden": self.hidden}

    def extract_features(self, ids: list[int], side: str) -> torch.Tensor:
        """Feature matrix of shape (dim, len); columns correspond to positions."""
        if side not in ("src", "tgt"):
            raise ValueError(f"side must be 'src' or 'tgt', got {side!r}")
        if len(ids) == 0:
            raise ValueError("empty token sequence")
        if any(not 0 <= i < self.vocab_size for i in ids):
            raise ValueError("token id out of vocabulary range")
        p = self.params
        x = p[f"{side}.emb"][list(ids)]
        x = _normalize(x, p[f"{side}.nl1.gamma"], p[f"{side}.nl1.beta"])
        x = torch.relu(x @ p[f"{side}.fw1.weight"].T + p[f"{side}.fw1.bias"])
        x = x @ p[f"{side}.fw2.weight"].T + p[f"{side}.fw2.bias"]
        x = _normalize(x, p[f"{side}.nl2.gamma"], p[f"{side}.nl2.beta"])
        return x.T


def support_matrix(f_src: torch.Tensor, f_tgt: torch.Tensor) -> torch.Tensor:
    """Inner products between source and target feature columns: (|K'|, m)."""
    if f_src.shape[0] != f_tgt.shape[0]:
        raise ValueError(f"feature dims differ: {f_src.shape[0]} vs {f_tgt.shape[0]}")
    return f_src.T @ f_tgt


def support_vector(m: torch.Tensor) -> SupportVector:
    """Column-wise log-sum-exp (max-shifted) with the sigmoid squash attached."""
    s = torch.logsumexp(m, dim=0)
    return SupportVector(s=s, sigma=torch.sigmoid(s))


def sample_negative(
    t_ids: list[int], dist: np.ndarray, rng: np.random.Generator
) -> list[int]:
    """Draw len(t_ids) ids i.i.d. from `dist` renormalized to exclude t_ids."""
    if len(t_ids) == 0:
        raise ValueError("cannot sample a negative for an empty target")
    weights = np.asarray(dist, dtype=np.float64).copy()
    weights[list(set(t_ids))] = 0.0
    total = weights.sum()
    if total <= 0.0:
        raise DegenerateDistributionError("no positive mass outside the target")
    return [int(i) for i in rng.choice(len(weights), size=len(t_ids), p=weights / total)]


def loss_margin(pos: SupportVector, neg: SupportVector) -> torch.Tensor:
    return neg.sigma.sum() - pos.sigma.sum()


def loss_word_consistent(
    m: torch.Tensor, k_tokens: list[int], t_tokens: list[int], axis: str = "source"
) -> torch.Tensor:
    """Negative log-softmax mass on (source, target) pairs sharing the same token.

    `axis` picks which dimension the softmax normalizes over: "source"
    (default) treats each target word's column as a distribution over source
    words; "target" is the transposed reading.
    """
    if m.shape != (len(k_tokens), len(t_tokens)):
        raise ValueError("matrix shape does not match token sequences")
    if axis not in ("source", "target"):
        raise ValueError(f"unknown axis {axis!r}")
    pairs = [
        (i, j)
        for i, k in enumerate(k_tokens)
        for j, t in enumerate(t_tokens)
        if k == t
    ]
    if not pairs:
        return torch.zeros((), dtype=m.dtype)
    if axis == "source":
        log_z = torch.logsumexp(m, dim=0)
        return -sum(m[i, j] - log_z[j] for i, j in pairs)
    log_z = torch.logsumexp(m, dim=1)
    return -sum(m[i, j] - log_z[i] for i, j in pairs)


def loss_concentration(m: torch.Tensor) -> torch.Tensor:
    """Largest row sum; ties resolve to the first maximal row."""
    row_sums = m.sum(dim=1)
    idx = int(np.argmax(row_sums.detach().numpy()))
    return row_sums[idx]


def combined_loss(
    model: SupportEstimator,
    k_ids: list[int],
    t_ids: list[int],
    neg_ids: list[int],
    weight_word: float,
    weight_conc: float,
    lw_axis: str = "source",
) -> torch.Tensor:
    f_k = model.extract_features(k_ids, "src")
    f_t = model.extract_features(t_ids, "tgt")
    f_n = model.extract_features(neg_ids, "tgt")
    m_pos = support_matrix(f_k, f_t)
    m_neg = support_matrix(f_k, f_n)
    total = loss_margin(support_vector(m_pos), support_vector(m_neg))
    if weight_word:
        total = total + weight_word * loss_word_consistent(m_pos, k_ids, t_ids, lw_axis)
    if weight_conc:
        total = total + weight_conc * loss_concentration(m_pos)
    return total


def encode_record(record: Record, bpe: BPEModel) -> tuple[list[int], list[int]]:
    k_ids = bpe.encode(" ".join(linearize(record.triples)))
    t_ids = bpe.encode(" ".join(record.text))
    return k_ids, t_ids


def target_unigram_counts(encoded_targets: list[list[int]], vocab_size: int) -> np.ndarray:
    counts = np.zeros(vocab_size, dtype=np.float64)
    for ids in encoded_targets:
        for i in ids:
            counts[i] += 1.0
    return counts


def train_se(
    corpus: list[Record],
    model: SupportEstimator,
    cfg: TrainConfig,
    bpe: BPEModel,
    weight_word: float = 0.05,
    weight_conc: float = 1.0,
    lw_axis: str = "source",
) -> SupportEstimator:
    """Minimize the combined loss over mini-batches; deterministic per cfg.seed.

    Per-epoch mean losses are kept on `model.loss_history`.
    """
    if not corpus:
        raise ValueError("empty training corpus")
    encoded = [encode_record(r, bpe) for r in corpus]
    counts = target_unigram_counts([t for _, t in encoded], model.vocab_size)
    rng = np.random.default_rng(cfg.seed)
    history: list[float] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(encoded))
        epoch_loss, n_batches = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            model.params.zero_grads()
            total = torch.zeros((), dtype=torch.float64)
            for idx in batch:
                k_ids, t_ids = encoded[idx]
                neg_ids = sample_negative(t_ids, counts, rng)
                total = total + combined_loss(
                    model, k_ids, t_ids, neg_ids, weight_word, weight_conc, lw_axis
                )
            loss = total / len(batch)
            if not torch.isfinite(loss):
                raise NumericalError("non-finite estimator loss")
            loss.backward()
            adam_step(model.params, model.params.collect_grads(), cfg)
            epoch_loss += float(loss.detach())
            n_batches += 1
        history.append(epoch_loss / n_batches)
        logger.info("se epoch %d mean loss %.4f", epoch + 1, history[-1])
    model.loss_history = history
    return model


def supportiveness(model: SupportEstimator, k_ids: list[int], t_ids: list[int]) -> np.ndarray:
    """sigma(s) per target position, detached."""
    with torch.no_grad():
        f_k = model.extract_features(k_ids, "src")
        f_t = model.extract_features(t_ids, "tgt")
        vec = support_vector(support_matrix(f_k, f_t))
    return vec.sigma.numpy()


def write_support_dump(path, model: SupportEstimator, corpus: list[Record], bpe: BPEModel) -> None:
    """One line per record: space-separated sigma(s_j), aligned to target subwords."""
    with open(path, "w", encoding="utf-8") as fh:
        for record in corpus:
            k_ids, t_ids = encode_record(record, bpe)
            sig = supportiveness(model, k_ids, t_ids)
            fh.write(" ".join(f"{x:.6f}" for x in sig) + "\n")

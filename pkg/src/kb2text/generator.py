"""Small encoder-decoder sequence generator over linearized triples.

A pre-norm transformer at desk scale: shared source/target embeddings with
sinusoidal positions, a couple of layers each side, multi-head attention,
and a vocabulary projection.  The decoder input follows the convention of
moving the terminal EOS to the front, so EOS doubles as the start symbol.
The final decoder layer's cross-attention weights are exposed because one
training adaptor consumes them.

All forward code is functional over a ParamSet of float64 tensors; training
uses the hand-rolled Adam step from nncore.
"""

from __future__ import annotations

import logging
import math

import numpy as np
import torch

from . import bpe as bpe_mod
from .adaptors import attention_supportiveness, hard_adapt
from .bpe import BPEModel, EOS, KBSEP_ID, PAD, UNK
from .errors import NumericalError
from .estimator import SupportEstimator, encode_record, supportiveness
from .harvest import Record, linearize
from .nncore import ParamSet, TrainConfig, adam_step, init_params

logger = logging.getLogger(__name__)

_NEG = -1e30


class MissingEstimatorError(ValueError):
    """The chosen adaptor needs a trained supportiveness estimator."""


def _attn_spec(prefix: str, dim: int):
    spec = []
    for part in ("wq", "wk", "wv", "wo"):
        spec.append((f"{prefix}.{part}.weight", (dim, dim)))
        spec.append((f"{prefix}.{part}.bias", (dim,)))
    return spec


def _ffn_spec(prefix: str, dim: int, ffn_dim: int):
    return [
        (f"{prefix}.fc1.weight", (ffn_dim, dim)),
        (f"{prefix}.fc1.bias", (ffn_dim,)),
        (f"{prefix}.fc2.weight", (dim, ffn_dim)),
        (f"{prefix}.fc2.bias", (dim,)),
    ]


def _ln_spec(prefix: str, dim: int):
    return [(f"{prefix}.gamma", (dim,)), (f"{prefix}.beta", (dim,))]


def _model_spec(vocab_size, dim, heads, enc_layers, dec_layers, ffn_dim):
    spec = [("emb", (vocab_size, dim))]
    for i in range(enc_layers):
        spec += _ln_spec(f"enc.{i}.ln1", dim) + _attn_spec(f"enc.{i}.attn", dim)
        spec += _ln_spec(f"enc.{i}.ln2", dim) + _ffn_spec(f"enc.{i}.ffn", dim, ffn_dim)
    spec += _ln_spec("enc.final", dim)
    for i in range(dec_layers):
        spec += _ln_spec(f"dec.{i}.ln1", dim) + _attn_spec(f"dec.{i}.self", dim)
        spec += _ln_spec(f"dec.{i}.ln2", dim) + _attn_spec(f"dec.{i}.cross", dim)
        spec += _ln_spec(f"dec.{i}.ln3", dim) + _ffn_spec(f"dec.{i}.ffn", dim, ffn_dim)
    spec += _ln_spec("dec.final", dim)
    spec += [("out.weight", (vocab_size, dim)), ("out.bias", (vocab_size,))]
    return spec


def _layer_norm(x, gamma, beta, eps=1e-5):
    mean = x.mean(dim=-1, keepdim=True)
    var = x.var(dim=-1, unbiased=False, keepdim=True)
    return gamma * (x - mean) / torch.sqrt(var + eps) + beta


_pe_cache: dict[tuple[int, int], torch.Tensor] = {}


def sinusoidal_positions(length: int, dim: int) -> torch.Tensor:
    key = (length, dim)
    pe = _pe_cache.get(key)
    if pe is None:
        pos = torch.arange(length, dtype=torch.float64).unsqueeze(1)
        div = torch.exp(
            torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim)
        )
        pe = torch.zeros(length, dim, dtype=torch.float64)
        pe[:, 0::2] = torch.sin(pos * div)
        pe[:, 1::2] = torch.cos(pos * div)
        _pe_cache[key] = pe
    return pe


class GenModel:
    """Encoder-decoder parameters plus functional forward passes."""

    forbidden_ids = (PAD, bpe_mod.BOS, UNK, KBSEP_ID)
    start_id = EOS
    eos_id = EOS

    def __init__(self, params: ParamSet, vocab_size: int, dim: int = 64, heads: int = 4,
                 enc_layers: int = 2, dec_layers: int = 2, ffn_dim: int = 256):
        if dim % heads:
            raise ValueError("dim must be divisible by heads")
        self.params = params
        self.vocab_size = vocab_size
        self.dim = dim
        self.heads = heads
        self.enc_layers = enc_layers
        self.dec_layers = dec_layers
        self.ffn_dim = ffn_dim

    @classmethod
    def create(cls, vocab_size, dim=64, heads=4, enc_layers=2, dec_layers=2,
               ffn_dim=256, seed=0):
        params = init_params(
            _model_spec(vocab_size, dim, heads, enc_layers, dec_layers, ffn_dim), seed
        )
        return cls(params, vocab_size, dim, heads, enc_layers, dec_layers, ffn_dim)

    def config(self) -> dict:
        return {
            "vocab_size": self.vocab_size, "dim": self.dim, "heads": self.heads,
            "enc_layers": self.enc_layers, "dec_layers": self.dec_layers,
            "ffn_dim": self.ffn_dim,
        }

    # -- attention ----------------------------------------------------------

    def _mha(self, prefix, q_in, kv_in, mask):
        """Multi-head attention; returns (output, per-head weights).

        q_in: (B, Lq, d); kv_in: (B, Lk, d); mask: additive, broadcastable to
        (B, heads, Lq, Lk).
        """
        p = self.params
        b, lq, d = q_in.shape
        lk = kv_in.shape[1]
        dk = d // self.heads

        def proj(part, x):
            return x @ p[f"{prefix}.{part}.weight"].T + p[f"{prefix}.{part}.bias"]

        q = proj("wq", q_in).view(b, lq, self.heads, dk).transpose(1, 2)
        k = proj("wk", kv_in).view(b, lk, self.heads, dk).transpose(1, 2)
        v = proj("wv", kv_in).view(b, lk, self.heads, dk).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(dk)
        if mask is not None:
            scores = scores + mask
        weights = torch.softmax(scores, dim=-1)
        out = (weights @ v).transpose(1, 2).reshape(b, lq, d)
        return proj("wo", out), weights

    def _encode_batch(self, src: torch.Tensor, src_mask: torch.Tensor) -> torch.Tensor:
        p = self.params
        x = p["emb"][src] * math.sqrt(self.dim) + sinusoidal_positions(src.shape[1], self.dim)
        add_mask = (1.0 - src_mask).view(src.shape[0], 1, 1, -1) * _NEG
        for i in range(self.enc_layers):
            q = _layer_norm(x, p[f"enc.{i}.ln1.gamma"], p[f"enc.{i}.ln1.beta"])
            h, _ = self._mha(f"enc.{i}.attn", q, q, add_mask)
            x = x + h
            y = _layer_norm(x, p[f"enc.{i}.ln2.gamma"], p[f"enc.{i}.ln2.beta"])
            y = torch.relu(y @ p[f"enc.{i}.ffn.fc1.weight"].T + p[f"enc.{i}.ffn.fc1.bias"])
            y = y @ p[f"enc.{i}.ffn.fc2.weight"].T + p[f"enc.{i}.ffn.fc2.bias"]
            x = x + y
        return _layer_norm(x, p["enc.final.gamma"], p["enc.final.beta"])

    def _decode_batch(self, tgt_in: torch.Tensor, tgt_mask: torch.Tensor,
                      memory: torch.Tensor, src_mask: torch.Tensor):
        """Returns (log-probs (B, Lt, V), final-layer cross-attention (B, h, Lt, Ls))."""
        p = self.params
        b, lt = tgt_in.shape
        x = p["emb"][tgt_in] * math.sqrt(self.dim) + sinusoidal_positions(lt, self.dim)
        causal = torch.triu(torch.ones(lt, lt, dtype=torch.float64), diagonal=1) * _NEG
        self_mask = causal.view(1, 1, lt, lt) + (1.0 - tgt_mask).view(b, 1, 1, lt) * _NEG
        cross_mask = (1.0 - src_mask).view(b, 1, 1, -1) * _NEG
        cross_weights = None
        for i in range(self.dec_layers):
            q = _layer_norm(x, p[f"dec.{i}.ln1.gamma"], p[f"dec.{i}.ln1.beta"])
            h, _ = self._mha(f"dec.{i}.self", q, q, self_mask)
            x = x + h
            q = _layer_norm(x, p[f"dec.{i}.ln2.gamma"], p[f"dec.{i}.ln2.beta"])
            h, cross_weights = self._mha(f"dec.{i}.cross", q, memory, cross_mask)
            x = x + h
            y = _layer_norm(x, p[f"dec.{i}.ln3.gamma"], p[f"dec.{i}.ln3.beta"])
            y = torch.relu(y @ p[f"dec.{i}.ffn.fc1.weight"].T + p[f"dec.{i}.ffn.fc1.bias"])
            y = y @ p[f"dec.{i}.ffn.fc2.weight"].T + p[f"dec.{i}.ffn.fc2.bias"]
            x = x + y
        x = _layer_norm(x, p["dec.final.gamma"], p["dec.final.beta"])
        logits = x @ p["out.weight"].T + p["out.bias"]
        return torch.log_softmax(logits, dim=-1), cross_weights

    # -- public single-sequence API ------------------------------------------

    def _check_ids(self, ids):
        if len(ids) == 0:
            raise ValueError("empty token sequence")
        if any(not 0 <= i < self.vocab_size for i in ids):
            raise ValueError("token id out of vocabulary range")

    def encode(self, k_ids: list[int]) -> torch.Tensor:
        """Source memory of shape (dim, |K'|); column i belongs to source position i."""
        self._check_ids(k_ids)
        src = torch.tensor([k_ids], dtype=torch.long)
        mask = torch.ones(1, len(k_ids), dtype=torch.float64)
        return self._encode_batch(src, mask)[0].T

    def decode_nll(self, t_shifted: list[int], memory: torch.Tensor):
        """Per-position negative log-likelihood and final-layer cross-attention.

        `t_shifted` must start with EOS acting as the start symbol; the scored
        target is t_shifted[1:] + [EOS], so ell has length len(t_shifted).
        """
        self._check_ids(t_shifted)
        if t_shifted[0] != self.eos_id:
            raise ValueError("shifted target must begin with EOS")
        target = list(t_shifted[1:]) + [self.eos_id]
        tgt_in = torch.tensor([t_shifted], dtype=torch.long)
        tgt_mask = torch.ones(1, len(t_shifted), dtype=torch.float64)
        mem = memory.T.unsqueeze(0)
        src_mask = torch.ones(1, mem.shape[1], dtype=torch.float64)
        log_probs, cross = self._decode_batch(tgt_in, tgt_mask, mem, src_mask)
        ell = -log_probs[0, torch.arange(len(target)), torch.tensor(target)]
        return ell, cross[0]

    def next_log_probs(self, memory: torch.Tensor, prefixes: list[list[int]]) -> torch.Tensor:
        """Log-probabilities over the vocabulary for the next token of each prefix.

        All prefixes must share one length and already start with EOS.
        """
        lens = {len(p) for p in prefixes}
        if len(lens) != 1:
            raise ValueError("prefixes must share one length")
        with torch.no_grad():
            tgt_in = torch.tensor(prefixes, dtype=torch.long)
            tgt_mask = torch.ones(tgt_in.shape, dtype=torch.float64)
            mem = memory.T.unsqueeze(0).expand(len(prefixes), -1, -1)
            src_mask = torch.ones(len(prefixes), mem.shape[1], dtype=torch.float64)
            log_probs, _ = self._decode_batch(tgt_in, tgt_mask, mem, src_mask)
        return log_probs[:, -1, :]


# ---------------------------------------------------------------------------
# Training


def _pad_batch(seqs: list[list[int]]) -> tuple[torch.Tensor, torch.Tensor]:
    width = max(len(s) for s in seqs)
    ids = torch.full((len(seqs), width), PAD, dtype=torch.long)
    mask = torch.zeros(len(seqs), width, dtype=torch.float64)
    for r, s in enumerate(seqs):
        ids[r, : len(s)] = torch.tensor(s, dtype=torch.long)
        mask[r, : len(s)] = 1.0
    return ids, mask


def train_gen(
    corpus: list[Record],
    model: GenModel,
    cfg: TrainConfig,
    bpe: BPEModel,
    adaptor: str = "none",
    se_model: SupportEstimator | None = None,
) -> GenModel:
    """Teacher-forced training with the chosen supportiveness adaptor.

    adaptor "none" minimizes plain mean NLL; "soft" scales each position's
    NLL by sigma(s); "hard" drops low-support target tokens afresh every
    epoch; "attention" reuses the model's own cross-attention maxima as the
    weights.  The EOS slot always carries weight 1.
    """
    if adaptor not in ("none", "hard", "soft", "attention"):
        raise ValueError(f"unknown adaptor {adaptor!r}")
    if adaptor in ("hard", "soft") and se_model is None:
        raise MissingEstimatorError(f"adaptor {adaptor!r} requires a trained estimator")
    if not corpus:
        raise ValueError("empty training corpus")

    encoded = [encode_record(r, bpe) for r in corpus]
    sigmas: list[np.ndarray] = []
    if adaptor in ("hard", "soft"):
        for k_ids, t_ids in encoded:
            sigmas.append(supportiveness(se_model, k_ids, t_ids))

    rng = np.random.default_rng(cfg.seed)
    history: list[float] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(encoded))
        epoch_loss, n_batches = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            batch = [int(i) for i in order[start : start + cfg.batch_size]]
            src_seqs, tgt_in_seqs, tgt_out_seqs, weight_seqs = [], [], [], []
            for idx in batch:
                k_ids, t_ids = encoded[idx]
                if adaptor == "hard":
                    t_used = hard_adapt(t_ids, sigmas[idx], rng)
                    weights = [1.0] * (len(t_used) + 1)
                elif adaptor == "soft":
                    t_used = t_ids
                    weights = [float(w) for w in sigmas[idx]] + [1.0]
                else:
                    t_used = t_ids
                    weights = [1.0] * (len(t_used) + 1)
                src_seqs.append(k_ids)
                tgt_in_seqs.append([EOS] + t_used)
                tgt_out_seqs.append(t_used + [EOS])
                weight_seqs.append(weights)

            src, src_mask = _pad_batch(src_seqs)
            tgt_in, tgt_mask = _pad_batch(tgt_in_seqs)
            tgt_out, _ = _pad_batch(tgt_out_seqs)
            weights = torch.zeros(tgt_in.shape, dtype=torch.float64)
            for r, w in enumerate(weight_seqs):
                weights[r, : len(w)] = torch.tensor(w, dtype=torch.float64)

            model.params.zero_grads()
            memory = model._encode_batch(src, src_mask)
            log_probs, cross = model._decode_batch(tgt_in, tgt_mask, memory, src_mask)
            nll = -log_probs.gather(-1, tgt_out.unsqueeze(-1)).squeeze(-1)
            if adaptor == "attention":
                attn_w = cross.detach().amax(dim=1).amax(dim=-1)
                weights = weights * attn_w
                # EOS slot stays at full weight, mirroring the soft path.
                for r, s in enumerate(tgt_out_seqs):
                    weights[r, len(s) - 1] = 1.0
            loss = (nll * weights * tgt_mask).sum() / tgt_mask.sum()
            if not torch.isfinite(loss):
                raise NumericalError("non-finite generator loss")
            loss.backward()
            adam_step(model.params, model.params.collect_grads(), cfg)
            epoch_loss += float(loss.detach())
            n_batches += 1
        history.append(epoch_loss / n_batches)
        logger.info("gen[%s] epoch %d mean loss %.4f", adaptor, epoch + 1, history[-1])
    model.loss_history = history
    return model

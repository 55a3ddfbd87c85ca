"""Triple-to-text generation on partially-aligned corpora.

The package trains a per-word supportiveness estimator over (triples, text)
pairs, uses it to reshape a small encoder-decoder generator's training loss,
and rebalances beam search with vocabulary-wide supportiveness at decode
time.  A synthetic corpus generator and a local triple-store harvester stand
in for large-scale data sources.
"""

from .harvest import KBTriple, EntitySpan, Record, TripleStore
from .bpe import BPEModel, Vocab, train_bpe
from .nncore import ParamSet, TrainConfig
from .estimator import SupportEstimator
from .generator import GenModel
from .decoding import Hypothesis, beam_search, rebalanced_beam_search
from .config import RunConfig

__all__ = [
    "KBTriple", "EntitySpan", "Record", "TripleStore",
    "BPEModel", "Vocab", "train_bpe",
    "ParamSet", "TrainConfig",
    "SupportEstimator", "GenModel",
    "Hypothesis", "beam_search", "rebalanced_beam_search",
    "RunConfig",
]

__version__ = "0.1.0"

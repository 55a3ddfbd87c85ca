"""Byte-pair-encoding subword tokenizer shared by every text-consuming module.

Training follows the classic greedy procedure: start from characters plus an
end-of-word marker, repeatedly merge the most frequent adjacent symbol pair
(lexicographically smallest pair on ties), and stop early once no pair occurs
at least twice.  Five special tokens occupy the reserved ids 0..4 and are
never produced by merges.
"""

from __future__ import annotations

from dataclasses import dataclass

PAD, BOS, EOS, UNK, KBSEP_ID = 0, 1, 2, 3, 4
SPECIALS = ("<pad>", "<bos>", "<eos>", "<unk>", "KBSEP")
_EOW = "</w>"


class EmptyCorpusError(ValueError):
    pass


@dataclass
class Vocab:
    token_of: list[str]

    def __post_init__(self):
        if tuple(self.token_of[:5]) != SPECIALS:
            raise ValueError("vocab must start with the five reserved specials")
        self.id_of = {tok: i for i, tok in enumerate(self.token_of)}
        if len(self.id_of) != len(self.token_of):
            raise ValueError("duplicate token in vocab")

    def __len__(self) -> int:
        return len(self.token_of)


class BPEModel:
    def __init__(self, merges: list[tuple[str, str]], vocab: Vocab):
        self.merges = list(merges)
        self.vocab = vocab
        self._rank = {pair: i for i, pair in enumerate(self.merges)}
        self._word_cache: dict[str, tuple[str, ...]] = {}

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def _segment(self, word: str) -> tuple[str, ...]:
        cached = self._word_cache.get(word)
        if cached is not None:
            return cached
        symbols = list(word) + [_EOW]
        while len(symbols) > 1:
            ranked = [
                (self._rank[p], i)
                for i, p in enumerate(zip(symbols, symbols[1:]))
                if p in self._rank
            ]
            if not ranked:
                break
            best_rank, _ = min(ranked)
            left, right = self.merges[best_rank]
            out, i = [], 0
            while i < len(symbols):
                if i + 1 < len(symbols) and symbols[i] == left and symbols[i + 1] == right:
                    out.append(left + right)
                    i += 2
                else:
                    out.append(symbols[i])
                    i += 1
            symbols = out
        result = tuple(symbols)
        self._word_cache[word] = result
        return result

    def encode_word(self, word: str) -> list[int]:
        if word == "KBSEP":
            return [KBSEP_ID]
        return [self.vocab.id_of.get(sym, UNK) for sym in self._segment(word)]

    def encode(self, text: str) -> list[int]:
        ids: list[int] = []
        for word in text.split():
            ids.extend(self.encode_word(word))
        return ids

    def decode(self, ids: list[int]) -> str:
        pieces: list[str] = []
        for i in ids:
            tok = self.vocab.token_of[i]
            if i in (PAD, BOS, EOS):
                continue
            if i == KBSEP_ID:
                pieces.append("KBSEP" + _EOW)
            elif i == UNK:
                pieces.append("<unk>" + _EOW)
            else:
                pieces.append(tok)
        return "".join(pieces).replace(_EOW, " ").strip()


def train_bpe(corpus: list[list[str]], num_merges: int = 4000) -> BPEModel:
    """Train merges on pre-tokenized sentences; deterministic for a fixed corpus order."""
    if num_merges < 0:
        raise ValueError("num_merges must be non-negative")
    word_freq: dict[str, int] = {}
    for sent in corpus:
        for word in sent:
            if word in SPECIALS:
                continue
            word_freq[word] = word_freq.get(word, 0) + 1
    if not word_freq:
        raise EmptyCorpusError("no trainable words in corpus")

    segmented = {w: list(w) + [_EOW] for w in word_freq}
    alphabet = {sym for syms in segmented.values() for sym in syms}
    merges: list[tuple[str, str]] = []
    for _ in range(num_merges):
        pair_freq: dict[tuple[str, str], int] = {}
        for word, syms in segmented.items():
            f = word_freq[word]
            for pair in zip(syms, syms[1:]):
                pair_freq[pair] = pair_freq.get(pair, 0) + f
        if not pair_freq:
            break
        best = min(pair_freq.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        if pair_freq[best] < 2:
            break
        merges.append(best)
        left, right = best
        for word, syms in segmented.items():
            out, i = [], 0
            while i < len(syms):
                if i + 1 < len(syms) and syms[i] == left and syms[i + 1] == right:
                    out.append(left + right)
                    i += 2
                else:
                    out.append(syms[i])
                    i += 1
            segmented[word] = out

    symbols = set(alphabet)
    for syms in segmented.values():
        symbols.update(syms)
    symbols -= set(SPECIALS)
    vocab = Vocab(list(SPECIALS) + sorted(symbols))
    return BPEModel(merges, vocab)


def save_bpe(model: BPEModel, merges_path, vocab_path) -> None:
    with open(merges_path, "w", encoding="utf-8") as fh:
        for left, right in model.merges:
            fh.write(f"{left} {right}\n")
    with open(vocab_path, "w", encoding="utf-8") as fh:
        for tok in model.vocab.token_of:
            fh.write(tok + "\n")


def load_bpe(merges_path, vocab_path) -> BPEModel:
    merges = []
    with open(merges_path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line:
                left, right = line.split(" ")
                merges.append((left, right))
    with open(vocab_path, encoding="utf-8") as fh:
        tokens = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
    return BPEModel(merges, Vocab(tokens))

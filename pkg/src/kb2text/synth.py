"""Synthetic partially-aligned corpora with controllable noise.

Each record verbalizes its triples with a plain template (head words,
relation words, tail words, clause after clause), then injects
ceil(rho * m) distractor tokens at random positions, where m is the clean
text length.  Distractors are drawn from a noise vocabulary disjoint from
every template word and are tied to the relations present in the record,
so a model trained on the corpus can (wrongly) learn to produce them.
The sidecar noise mask records which tokens were injected; it is for
evaluation only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .harvest import KBTriple, Record, entity_recall

_SYLLABLES = [
    "ba", "ren", "vo", "ka", "li", "dor", "mi", "sa", "tu", "gel",
    "na", "rok", "pel", "shi", "mar", "ol", "den", "fa", "ru", "qui",
]

RELATION_PHRASES = [
    "is located in", "was founded by", "is part of", "plays for",
    "works at", "is married to", "is the capital of", "was written by",
    "is a member of", "borders", "studied at", "was directed by",
    "is owned by", "was designed by", "flows through", "orbits",
    "was built in", "is adjacent to", "trades with", "succeeded",
    "manufactures", "publishes", "governs", "sponsors",
]

NOISE_WORDS = [
    "reportedly", "allegedly", "formerly", "briefly", "apparently",
    "supposedly", "eventually", "originally", "famously", "notably",
    "curiously", "presumably", "seemingly", "ostensibly", "arguably",
    "remarkably", "inevitably", "unexpectedly", "controversially", "quietly",
    "abruptly", "gradually", "repeatedly", "occasionally", "frequently",
    "rarely", "ultimately", "initially", "subsequently", "previously",
    "currently", "traditionally", "historically", "locally", "globally",
    "regionally", "nationally", "informally", "officially", "unofficially",
    "partially", "entirely", "largely", "narrowly", "widely",
    "barely", "nearly", "roughly", "approximately", "precisely",
    "allegorically", "ironically", "coincidentally", "surprisingly", "predictably",
    "mysteriously", "suddenly", "slowly", "steadily", "sporadically",
    "intermittently", "consistently", "persistently", "temporarily", "permanently",
    "marginally", "substantially", "moderately", "severely", "mildly",
    "jointly", "separately",
]


@dataclass
class SynthConfig:
    n_records: int = 2300
    n_entities: int = 60
    n_relations: int = 12
    triples_min: int = 1
    triples_max: int = 3
    noise_rate: float = 0.3
    noise_pool_size: int = 6  # distractor word choices per relation

    def validate(self) -> None:
        if not 0.0 <= self.noise_rate < 1.0:
            raise ConfigError(f"noise_rate must lie in [0, 1), got {self.noise_rate}")
        for name in ("n_records", "n_entities", "n_relations", "triples_min",
                     "triples_max", "noise_pool_size"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.triples_min > self.triples_max:
            raise ConfigError("triples_min exceeds triples_max")
        if self.n_relations > len(RELATION_PHRASES):
            raise ConfigError(f"at most {len(RELATION_PHRASES)} relations available")
        if self.n_relations * self.noise_pool_size > len(NOISE_WORDS):
            raise ConfigError("not enough noise words for the requested pools")


def _entity_names(rng: np.random.Generator, count: int) -> list[str]:
    """Unique invented proper names, one or two capitalized words each."""
    combos = [a + b for a in _SYLLABLES for b in _SYLLABLES]
    order = rng.permutation(len(combos))
    words = [combos[i].capitalize() for i in order]
    names = []
    pos = 0
    while len(names) < count:
        if pos + 1 < len(words) and rng.random() < 0.5:
            names.append(words[pos] + " " + words[pos + 1])
            pos += 2
        else:
            names.append(words[pos])
            pos += 1
        if pos >= len(words) - 1:
            raise ConfigError("n_entities too large for the name inventory")
    return names


def synth_corpus(config: SynthConfig, seed: int) -> list[Record]:
    """Generate a deterministic corpus for the given config and seed."""
    config.validate()
    rng = np.random.default_rng(seed)
    entities = _entity_names(rng, config.n_entities)
    relations = RELATION_PHRASES[: config.n_relations]

    template_vocab = set()
    for name in entities:
        template_vocab.update(name.split())
    for rel in relations:
        template_vocab.update(rel.split())
    pools = {
        rel: [NOISE_WORDS[i * config.noise_pool_size + j] for j in range(config.noise_pool_size)]
        for i, rel in enumerate(relations)
    }
    for pool in pools.values():
        clash = template_vocab.intersection(pool)
        if clash:
            raise ConfigError(f"noise vocabulary overlaps templates: {sorted(clash)}")

    records: list[Record] = []
    for _ in range(config.n_records):
        n_triples = int(rng.integers(config.triples_min, config.triples_max + 1))
        subject = entities[int(rng.integers(len(entities)))]
        rel_idx = rng.choice(len(relations), size=min(n_triples, len(relations)), replace=False)
        triples = []
        for ri in rel_idx:
            tail = subject
            while tail == subject:
                tail = entities[int(rng.integers(len(entities)))]
            triples.append(KBTriple(subject, relations[int(ri)], tail))

        text: list[str] = []
        for t in triples:
            text.extend(t.words())
        mask = [0] * len(text)

        n_noise = math.ceil(config.noise_rate * len(text))
        for _ in range(n_noise):
            t = triples[int(rng.integers(len(triples)))]
            word = pools[t.relation][int(rng.integers(config.noise_pool_size))]
            pos = int(rng.integers(len(text) + 1))
            text.insert(pos, word)
            mask.insert(pos, 1)

        records.append(Record(triples, text, entity_recall(triples, text), noise_mask=mask))
    return records

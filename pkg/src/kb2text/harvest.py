"""Build partially-aligned (triples, text) corpora from a local triple store.

The pipeline is: detect entity mentions in a sentence, pair them, retrieve
the best-matching stored triple per pair, score the sentence against the
retrieved triples with entity recall, and keep sentences above a recall
threshold.  Everything here is a pure function of its inputs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .errors import ConfigError

KBSEP = "KBSEP"


@dataclass(frozen=True)
class KBTriple:
    """A head/relation/tail string triple, whitespace-normalized and non-empty."""

    head: str
    relation: str
    tail: str

    def __post_init__(self):
        for name in ("head", "relation", "tail"):
            value = " ".join(getattr(self, name).split())
            if not value:
                raise ValueError(f"triple field {name!r} empty after normalization")
            object.__setattr__(self, name, value)

    def words(self) -> list[str]:
        return self.head.split() + self.relation.split() + self.tail.split()


@dataclass(frozen=True)
class EntitySpan:
    """A token span [start, end) in a sentence whose joined tokens equal `surface`."""

    surface: str
    start: int
    end: int

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError(f"bad span bounds [{self.start}, {self.end})")


@dataclass(frozen=True)
class ScoredTriple:
    triple: KBTriple
    orientation: int  # 1: pair is (head, tail); 0: pair is (tail, head)
    score: float


@dataclass
class Record:
    """One training example: deduplicated triples, a tokenized text, its recall.

    `noise_mask` exists only for synthetic corpora and marks injected
    distractor tokens (1 = noise).  It is evaluation-side metadata and must
    never reach a model.
    """

    triples: list[KBTriple]
    text: list[str]
    entity_recall: float
    noise_mask: list[int] | None = None

    def __post_init__(self):
        if not self.triples:
            raise ValueError("record needs at least one triple")
        if not self.text:
            raise ValueError("record needs a non-empty text")
        seen, deduped = set(), []
        for t in self.triples:
            key = (t.head, t.relation, t.tail)
            if key not in seen:
                seen.add(key)
                deduped.append(t)
        self.triples = deduped
        if self.noise_mask is not None and len(self.noise_mask) != len(self.text):
            raise ValueError("noise_mask length must match text length")


class TripleStore:
    """An in-memory triple collection with an entity alias table.

    The alias table maps a canonical entity name to its alias strings.
    Inverse-document frequencies over entity names back the tf-idf term
    match score used by retrieval.
    """

    def __init__(self, triples: list[KBTriple], alias_table: dict[str, list[str]] | None = None):
        if not triples:
            raise ValueError("empty triple store")
        self.triples = list(triples)
        self.alias_table = {k: list(v) for k, v in (alias_table or {}).items()}
        entity_names = {t.head for t in self.triples} | {t.tail for t in self.triples}
        for canonical in self.alias_table:
            if canonical not in entity_names:
                raise ValueError(f"alias for unknown entity {canonical!r}")
        # One "document" per stored entity: its name plus all aliases.
        self._entity_tokens: dict[str, frozenset[str]] = {}
        for name in sorted(entity_names):
            toks = set(_fold_tokens(name))
            for alias in self.alias_table.get(name, []):
                toks.update(_fold_tokens(alias))
            self._entity_tokens[name] = frozenset(toks)
        n_docs = len(self._entity_tokens)
        doc_freq: dict[str, int] = {}
        for toks in self._entity_tokens.values():
            for tok in toks:
                doc_freq[tok] = doc_freq.get(tok, 0) + 1
        self._idf = {
            tok: math.log((1.0 + n_docs) / (1.0 + df)) + 1.0 for tok, df in doc_freq.items()
        }

    def names_of(self, entity: str) -> list[str]:
        """Canonical name plus aliases; used for string-similarity matching."""
        return [entity] + self.alias_table.get(entity, [])

    def term_match(self, query: str, entity: str) -> float:
        """tf-idf-weighted token overlap between a query string and a stored entity."""
        ent_tokens = self._entity_tokens.get(entity)
        if ent_tokens is None:
            return 0.0
        return sum(self._idf[tok] for tok in set(_fold_tokens(query)) if tok in ent_tokens)

    def all_entities(self) -> list[str]:
        return sorted(self._entity_tokens)


def _fold_tokens(s: str) -> list[str]:
    return s.casefold().split()


def detect_entities(text: list[str], gazetteer: set[str]) -> list[EntitySpan]:
    """Find non-overlapping entity mentions, leftmost-longest match winning.

    Gazetteer entries are matched case-insensitively on whole tokens.  As a
    fallback, any uncovered run of two or more capitalized tokens becomes a
    span (single capitalized tokens are too ambiguous without a gazetteer
    hit).
    """
    if not text:
        raise ValueError("empty text")
    gaz_tokens = sorted((tuple(_fold_tokens(g)) for g in gazetteer if g.strip()),
                        key=len, reverse=True)
    folded = [w.casefold() for w in text]
    spans: list[EntitySpan] = []
    covered = [False] * len(text)
    i = 0
    while i < len(text):
        hit = None
        for cand in gaz_tokens:
            if tuple(folded[i:i + len(cand)]) == cand:
                hit = len(cand)
                break
        if hit:
            spans.append(EntitySpan(" ".join(text[i:i + hit]), i, i + hit))
            for j in range(i, i + hit):
                covered[j] = True
            i += hit
        else:
            i += 1
    # Capitalized-run fallback over uncovered stretches.
    i = 0
    while i < len(text):
        if covered[i] or not text[i][:1].isupper():
            i += 1
            continue
        j = i
        while j < len(text) and not covered[j] and text[j][:1].isupper():
            j += 1
        if j - i >= 2:
            spans.append(EntitySpan(" ".join(text[i:j]), i, j))
        i = j
    return sorted(spans, key=lambda s: s.start)


def pair_entities(entities: list[EntitySpan]) -> list[tuple[EntitySpan, EntitySpan]]:
    """All ordered pairs of distinct detected entities (Cartesian product minus diagonal)."""
    return [(a, b) for ia, a in enumerate(entities) for ib, b in enumerate(entities) if ia != ib]


def string_similarity(a: str, b: str) -> float:
    """1 - normalized Levenshtein distance over case-folded strings, in [0, 1]."""
    a, b = a.casefold(), b.casefold()
    if a == b:
        return 1.0
    if not a or not b:
        return 0.0
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return 1.0 - prev[-1] / max(len(a), len(b))


def _name_similarity(query: str, entity: str, store: TripleStore) -> float:
    return max(string_similarity(query, name) for name in store.names_of(entity))


def retrieve_triple(
    pair: tuple[EntitySpan, EntitySpan] | tuple[str, str],
    store: TripleStore,
    kappa: float = 0.75,
) -> ScoredTriple | None:
    """Best stored triple matching an (e_i, e_j) mention pair, or None.

    A candidate (triple, orientation) is admissible when both of its binding
    name similarities reach `kappa`: orientation 1 requires head~e_i and
    tail~e_j, orientation 0 requires head~e_j and tail~e_i.  Among admissible
    candidates the term-match objective is maximized; ties keep the earliest
    store entry, orientation 1 first.
    """
    if not 0.0 <= kappa <= 1.0:
        raise ConfigError(f"kappa must lie in [0, 1], got {kappa}")
    e_i = pair[0].surface if isinstance(pair[0], EntitySpan) else pair[0]
    e_j = pair[1].surface if isinstance(pair[1], EntitySpan) else pair[1]
    best: ScoredTriple | None = None
    for triple in store.triples:
        for orientation in (1, 0):
            if orientation == 1:
                ok = (_name_similarity(e_i, triple.head, store) >= kappa
                      and _name_similarity(e_j, triple.tail, store) >= kappa)
                score = store.term_match(e_i, triple.head) + store.term_match(e_j, triple.tail)
            else:
                ok = (_name_similarity(e_j, triple.head, store) >= kappa
                      and _name_similarity(e_i, triple.tail, store) >= kappa)
                score = store.term_match(e_j, triple.head) + store.term_match(e_i, triple.tail)
            if ok and (best is None or score > best.score):
                best = ScoredTriple(triple, orientation, score)
    return best


def entity_recall(triples: list[KBTriple], text: list[str]) -> float:
    """Fraction of text tokens found (case-folded) in any triple field's word set."""
    if not text:
        raise ValueError("entity recall needs a non-empty text")
    covered = set()
    for t in triples:
        covered.update(w.casefold() for w in t.words())
    return sum(1 for w in text if w.casefold() in covered) / len(text)


def filter_records(records: list[Record], min_recall: float) -> list[Record]:
    """Keep records whose entity recall reaches `min_recall`, preserving order."""
    if not 0.0 <= min_recall <= 1.0:
        raise ConfigError(f"min_recall must lie in [0, 1], got {min_recall}")
    return [r for r in records if r.entity_recall >= min_recall]


def linearize(triples: list[KBTriple]) -> list[str]:
    """Concatenate triple words with a KBSEP token between consecutive triples."""
    if not triples:
        raise ValueError("cannot linearize an empty triple list")
    out: list[str] = []
    for k, t in enumerate(triples):
        if k:
            out.append(KBSEP)
        out.extend(t.words())
    return out


def harvest_sentence(
    text: list[str],
    store: TripleStore,
    kappa: float = 0.75,
    gazetteer: set[str] | None = None,
) -> Record | None:
    """Run the full extraction pipeline on one tokenized sentence.

    Returns None when no triple can be retrieved for any entity pair.
    """
    if gazetteer is None:
        gazetteer = set()
        for name in store.all_entities():
            gazetteer.update(store.names_of(name))
    entities = detect_entities(text, gazetteer)
    retrieved: list[KBTriple] = []
    for pair in pair_entities(entities):
        hit = retrieve_triple(pair, store, kappa)
        if hit is not None and hit.triple not in retrieved:
            retrieved.append(hit.triple)
    if not retrieved:
        return None
    return Record(retrieved, list(text), entity_recall(retrieved, text))


# ---------------------------------------------------------------------------
# File formats


def load_store(triples_path, alias_path=None) -> TripleStore:
    """Read a tab-separated triple file and optional tab-separated alias file."""
    triples = []
    with open(triples_path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"expected 3 tab-separated fields, got {line!r}")
            triples.append(KBTriple(*parts))
    alias_table: dict[str, list[str]] = {}
    if alias_path is not None:
        with open(alias_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line.strip():
                    continue
                canonical, alias = line.split("\t")
                alias_table.setdefault(canonical, []).append(alias)
    return TripleStore(triples, alias_table)


def record_to_json(record: Record) -> str:
    obj = {
        "triples": [[t.head, t.relation, t.tail] for t in record.triples],
        "text": " ".join(record.text),
        "entity_recall": record.entity_recall,
    }
    if record.noise_mask is not None:
        obj["noise_mask"] = record.noise_mask
    return json.dumps(obj, sort_keys=True, ensure_ascii=False)


def record_from_json(line: str) -> Record:
    obj = json.loads(line)
    return Record(
        triples=[KBTriple(*t) for t in obj["triples"]],
        text=obj["text"].split(),
        entity_recall=obj["entity_recall"],
        noise_mask=obj.get("noise_mask"),
    )


def write_corpus(path, records: list[Record]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(record_to_json(r) + "\n")


def read_corpus(path) -> list[Record]:
    with open(path, encoding="utf-8") as fh:
        return [record_from_json(line) for line in fh if line.strip()]

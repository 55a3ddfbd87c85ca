import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kb2text.bpe import (
    BOS,
    EOS,
    KBSEP_ID,
    PAD,
    SPECIALS,
    UNK,
    EmptyCorpusError,
    load_bpe,
    save_bpe,
    train_bpe,
)


def small_corpus():
    return [
        "Alba Corin founded Mirex".split(),
        "Fenn works at Mirex".split(),
        "Alba Corin borders Lumen".split(),
    ]


def test_zero_merges_is_character_level():
    model = train_bpe([["abc", "cab"]], num_merges=0)
    assert model.merges == []
    # specials + {a, b, c, </w>}
    assert model.vocab_size == 5 + 4
    assert model.encode("abc") == [
        model.vocab.id_of["a"], model.vocab.id_of["b"], model.vocab.id_of["c"],
        model.vocab.id_of["</w>"],
    ]


def test_first_merge_by_hand():
    # "a a a b </w>" twice: pair (a,a) occurs 4 times, (a,b) and (b,</w>) twice.
    model = train_bpe([["aaab"], ["aaab"]], num_merges=1)
    assert model.merges == [("a", "a")]


def test_tie_break_lexicographic():
    # "ab" and "cd" both occur twice; (a,b) wins the tie alphabetically.
    model = train_bpe([["ab", "cd"], ["ab", "cd"]], num_merges=1)
    assert model.merges[0] == ("a", "b")


def test_training_deterministic():
    a = train_bpe(small_corpus(), num_merges=50)
    b = train_bpe(small_corpus(), num_merges=50)
    assert a.merges == b.merges
    assert a.vocab.token_of == b.vocab.token_of


def test_roundtrip_on_training_sentences():
    model = train_bpe(small_corpus(), num_merges=100)
    for sent in small_corpus():
        text = " ".join(sent)
        assert model.decode(model.encode(text)) == text


def test_empty_text_encodes_empty():
    model = train_bpe(small_corpus(), num_merges=10)
    assert model.encode("") == []


def test_unknown_symbol_maps_to_unk():
    model = train_bpe(small_corpus(), num_merges=10)
    ids = model.encode("Zq#")
    assert UNK in ids


def test_kbsep_uses_reserved_id():
    model = train_bpe(small_corpus(), num_merges=10)
    assert model.encode("KBSEP") == [KBSEP_ID]
    assert model.decode([KBSEP_ID]) == "KBSEP"


def test_specials_reserved_and_never_merged():
    model = train_bpe(small_corpus(), num_merges=200)
    assert tuple(model.vocab.token_of[:5]) == SPECIALS
    assert (PAD, BOS, EOS, UNK, KBSEP_ID) == (0, 1, 2, 3, 4)
    for left, right in model.merges:
        assert left + right not in SPECIALS


def test_empty_corpus_raises():
    with pytest.raises(EmptyCorpusError):
        train_bpe([], num_merges=5)
    with pytest.raises(EmptyCorpusError):
        train_bpe([[]], num_merges=5)


def test_save_load_roundtrip(tmp_path):
    model = train_bpe(small_corpus(), num_merges=60)
    save_bpe(model, tmp_path / "merges.txt", tmp_path / "vocab.txt")
    loaded = load_bpe(tmp_path / "merges.txt", tmp_path / "vocab.txt")
    assert loaded.merges == model.merges
    assert loaded.vocab.token_of == model.vocab.token_of
    text = " ".join(small_corpus()[0])
    assert loaded.encode(text) == model.encode(text)


@given(st.lists(st.text(alphabet="abcde", min_size=1, max_size=6), min_size=1, max_size=8))
@settings(max_examples=60, deadline=None)
def test_roundtrip_property(words):
    model = train_bpe([words], num_merges=30)
    assert model.decode(model.encode(" ".join(words))) == " ".join(words)

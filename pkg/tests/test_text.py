from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from petapter.text import SPECIALS, Vocabulary, VocabularyError, build_vocab, detokenize, normalize, tokenize

WORDS = st.text(alphabet="abcdefgh", min_size=1, max_size=6)


def test_specials_take_the_first_ids():
    v = build_vocab(["x"], 10)
    assert v.tokens[:5] == SPECIALS == ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]")
    assert (v.pad_id, v.unk_id, v.cls_id, v.sep_id, v.mask_id) == (0, 1, 2, 3, 4)


def test_frequency_ranking_with_lexicographic_ties():
    v = build_vocab(["a b", "b c"], 8)
    assert v.tokens[5:] == ("b", "a", "c")


def test_max_size_cuts_the_tail():
    v = build_vocab(["a b", "b c"], 6)
    assert v.tokens[5:] == ("b",)


def test_required_words_are_always_kept():
    v = build_vocab(["a a a b"], 7, required_words=["zebra"])
    assert "zebra" in v.index
    assert len(v) == 7


def test_required_words_are_normalised():
    v = build_vocab(["a"], 10, required_words=["Argument against"])
    assert {"argument", "against"} <= set(v.index)


def test_vocab_errors():
    with pytest.raises(VocabularyError):
        build_vocab([], 10)
    with pytest.raises(VocabularyError):
        build_vocab(["a b"], 6, required_words=["x", "y"])


def test_tokenize_examples():
    v = build_vocab(["arms deliveries !"], 20)
    assert tokenize(v, "") == []
    assert tokenize(v, "Arms deliveries!") == [v.index["arms"], v.index["deliveries"], v.index["!"]]
    assert tokenize(v, "unheard") == [v.unk_id]


def test_multiword_verbalizer_token_count():
    v = build_vocab(["argument against it"], 20)
    assert len(tokenize(v, "argument against")) == 2


def test_detokenize():
    v = build_vocab(["hello world"], 20)
    assert detokenize(v, []) == ""
    assert "[MASK]" in detokenize(v, [v.mask_id, v.index["hello"]])
    with pytest.raises(VocabularyError):
        detokenize(v, [len(v)])


@given(st.lists(WORDS, min_size=1, max_size=12), st.sampled_from(["", "!", ",", "?"]))
def test_round_trip(words, punct):
    sentence = " ".join(w.upper() if i % 2 else w for i, w in enumerate(words)) + punct
    v = build_vocab([sentence], 100)
    assert detokenize(v, tokenize(v, sentence)) == normalize(sentence)


@given(st.lists(st.lists(WORDS, max_size=6).map(" ".join), min_size=1, max_size=8), st.integers(5, 40))
def test_build_vocab_is_pure(corpus, size):
    if not any(c.strip() for c in corpus):
        return
    a = build_vocab(corpus, size)
    b = build_vocab(list(corpus), size)
    assert a.tokens == b.tokens
    assert all(a.index[t] == i for i, t in enumerate(a.tokens))


def test_vocab_file_round_trip(tmp_path):
    v = build_vocab(["z y x", "y x", "x"], 50, required_words=["Ünïcode"])
    path = tmp_path / "vocab.json"
    v.save(path)
    w = Vocabulary.load(path)
    assert w.tokens == v.tokens
    w.save(tmp_path / "again.json")
    assert (tmp_path / "again.json").read_bytes() == path.read_bytes()

import pytest
from hypothesis import given, strategies as st

from ltc.envs import grammar_words
from ltc.vocab import SPECIALS, VocabError, Vocabulary, build_vocab, decode, encode, normalize


def test_build_vocab_size_is_specials_plus_words():
    v = build_vocab(["go", "to", "table"])
    assert len(v) == len(SPECIALS) + 3
    assert v.word_of[: len(SPECIALS)] == SPECIALS


def test_build_vocab_rejects_empty_and_duplicates():
    with pytest.raises(VocabError):
        build_vocab([])
    with pytest.raises(VocabError, match="(?i)table"):
        build_vocab(["table", "Table"])


def test_full_grammar_fits(vocab):
    assert len(vocab) <= 512
    assert all(vocab.word_of[vocab.id_of[w]] == w for w in vocab.word_of)


def test_encode_examples():
    v = build_vocab(["go", "to", "table", "take", "apples"])
    assert encode(v, "go to table") == [v.id_of["go"], v.id_of["to"], v.id_of["table"]]
    assert encode(v, "") == []
    assert encode(v, "take 12 apples") == [v.id_of["take"], v.id_of["1"], v.id_of["2"], v.id_of["apples"]]
    assert decode(v, encode(v, "take 12 apples")) == "take 12 apples"


def test_encode_oov_names_word():
    v = build_vocab(["look"])
    with pytest.raises(VocabError, match="banana"):
        encode(v, "look banana")


def test_decode_errors():
    v = build_vocab(["look"])
    assert decode(v, encode(v, "look")) == "look"
    assert decode(v, []) == ""
    with pytest.raises(VocabError):
        decode(v, [len(v)])


def test_save_load_round_trip(tmp_path, vocab):
    vocab.save(tmp_path / "v.txt")
    assert Vocabulary.load(tmp_path / "v.txt") == vocab


words = st.sampled_from(grammar_words() + [str(d) for d in range(100)])


@given(st.lists(words, max_size=30))
def test_round_trip_on_grammar_text(ws):
    from ltc.envs import env_vocab

    v = env_vocab()
    text = " ".join(ws)
    assert decode(v, encode(v, text)) == normalize(text)


@given(st.lists(words, max_size=20), st.lists(words, max_size=20))
def test_encode_injective_on_normalized(a, b):
    from ltc.envs import env_vocab

    v = env_vocab()
    x, y = normalize(" ".join(a)), normalize(" ".join(b))
    if x != y:
        assert encode(v, x) != encode(v, y)

"""Closed word-level vocabulary shared by the environments and the policy.

Special tokens occupy the lowest ids in this fixed order::

    0 <pad>   1 <bos>   2 <eos>   3 think:   4 act:   5 answer:   6..15 digits 0-9

Grammar words follow in the order they were registered. Numbers are split
into digit tokens on encode and re-joined on decode.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

PAD, BOS, EOS = "<pad>", "<bos>", "<eos>"
ROLE_TAGS = ("think:", "act:", "answer:")
DIGITS = tuple(str(d) for d in range(10))
SPECIALS = (PAD, BOS, EOS) + ROLE_TAGS + DIGITS

MAX_VOCAB_SIZE = 512


class VocabError(ValueError):
    """Raised for out-of-vocabulary words, bad ids and malformed grammars."""


def normalize(text: str) -> str:
    """Lowercase, collapse whitespace and merge adjacent digit runs.

    This is the canonical form that ``decode(encode(text))`` returns.
    """
    out: list[str] = []
    for word in text.lower().split():
        if word.isdigit() and out and out[-1].isdigit():
            out[-1] += word
        else:
            out.append(word)
    return " ".join(out)


@dataclass(frozen=True)
class Vocabulary:
    words: tuple[str, ...]
    id_of: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        id_of = {w: i for i, w in enumerate(self.words)}
        if len(id_of) != len(self.words):
            raise VocabError("vocabulary words are not unique")
        if self.words[: len(SPECIALS)] != SPECIALS:
            raise VocabError("special tokens must occupy the lowest ids")
        if len(self.words) > MAX_VOCAB_SIZE:
            raise VocabError(f"vocabulary size {len(self.words)} exceeds {MAX_VOCAB_SIZE}")
        object.__setattr__(self, "id_of", id_of)

    def __len__(self) -> int:
        return len(self.words)

    @property
    def word_of(self) -> tuple[str, ...]:
        return self.words

    @property
    def pad_id(self) -> int:
        return self.id_of[PAD]

    @property
    def bos_id(self) -> int:
        return self.id_of[BOS]

    @property
    def eos_id(self) -> int:
        return self.id_of[EOS]

    def encode(self, text: str) -> list[int]:
        ids: list[int] = []
        for word in text.lower().split():
            if word.isdigit():
                ids.extend(self.id_of[d] for d in word)
                continue
            try:
                ids.append(self.id_of[word])
            except KeyError:
                raise VocabError(f"out-of-vocabulary word: {word!r}") from None
        return ids

    def decode(self, ids) -> str:
        n = len(self.words)
        out: list[str] = []
        for offset, i in enumerate(ids):
            i = int(i)
            if not 0 <= i < n:
                raise VocabError(f"token id {i} out of range [0, {n}) at offset {offset}")
            word = self.words[i]
            if word.isdigit() and out and out[-1].isdigit():
                out[-1] += word
            else:
                out.append(word)
        return " ".join(out)

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.words) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        words = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(tuple(words))


def build_vocab(grammar_words) -> Vocabulary:
    """Build a vocabulary from environment grammar words (order preserved)."""
    grammar_words = list(grammar_words)
    if not grammar_words:
        raise VocabError("grammar_words must be non-empty")
    seen = set(SPECIALS)
    words = list(SPECIALS)
    for raw in grammar_words:
        word = raw.strip().lower()
        if not word or len(word.split()) != 1:
            raise VocabError(f"grammar word must be a single non-empty token: {raw!r}")
        if word.isdigit():
            raise VocabError(f"numbers are encoded digit by digit, not as words: {raw!r}")
        if word in seen:
            raise VocabError(f"duplicate word after normalization: {raw!r}")
        seen.add(word)
        words.append(word)
    return Vocabulary(tuple(words))


def encode(v: Vocabulary, text: str) -> list[int]:
    return v.encode(text)


def decode(v: Vocabulary, ids) -> str:
    return v.decode(ids)

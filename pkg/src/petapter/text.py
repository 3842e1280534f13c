"""Word-level vocabulary and tokenizer with the reserved specials."""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIALS = (PAD, UNK, CLS, SEP, MASK)

_WORD = re.compile(r"\w+|[^\w\s]")


class VocabularyError(ValueError):
    pass


def split_words(text: str) -> list[str]:
    """Lowercase, then split into word runs and single punctuation marks."""
    return _WORD.findall(text.lower())


def normalize(text: str) -> str:
    return " ".join(split_words(text))


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    index: dict[str, int] = field(compare=False, repr=False)

    @classmethod
    def from_tokens(cls, tokens: Iterable[str]) -> "Vocabulary":
        tokens = tuple(tokens)
        if tokens[: len(SPECIALS)] != SPECIALS:
            raise VocabularyError(f"vocabulary must start with {SPECIALS}")
        index = {tok: i for i, tok in enumerate(tokens)}
        if len(index) != len(tokens):
            raise VocabularyError("duplicate tokens in vocabulary")
        return cls(tokens, index)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    pad_id = property(lambda self: 0)
    unk_id = property(lambda self: 1)
    cls_id = property(lambda self: 2)
    sep_id = property(lambda self: 3)
    mask_id = property(lambda self: 4)

    def id(self, token: str) -> int:
        return self.index.get(token, 1)

    def save(self, path: str | Path) -> None:
        payload = {"specials": list(SPECIALS), "tokens": list(self.tokens[len(SPECIALS):])}
        Path(path).write_text(json.dumps(payload, ensure_ascii=False, indent=0) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if tuple(payload.get("specials", ())) != SPECIALS:
            raise VocabularyError(f"{path}: header must name specials {list(SPECIALS)}")
        return cls.from_tokens(SPECIALS + tuple(payload["tokens"]))


def build_vocab(corpus: Iterable[str], max_size: int, required_words: Iterable[str] = ()) -> Vocabulary:
    """Frequency-ranked vocabulary; required words are always kept.

    Ties in frequency are broken lexicographically. Multi-word or punctuated
    required entries contribute each of their tokens.
    """
    counts: Counter[str] = Counter()
    for line in corpus:
        counts.update(split_words(line))
    required: list[str] = []
    for word in required_words:
        for tok in split_words(word):
            if tok not in required:
                required.append(tok)
    if not counts and not required:
        raise VocabularyError("empty corpus and no required words")
    if max_size < len(SPECIALS) + len(required):
        raise VocabularyError(
            f"max_size {max_size} cannot hold {len(SPECIALS)} specials + {len(required)} required tokens"
        )
    for tok in SPECIALS:
        counts.pop(tok, None)
    rank = lambda tok: (-counts.get(tok, 0), tok)  # noqa: E731
    room = max_size - len(SPECIALS) - len(required)
    req = set(required)
    extra = sorted((t for t in counts if t not in req), key=rank)[:room]
    chosen = sorted(req | set(extra), key=rank)
    return Vocabulary.from_tokens(SPECIALS + tuple(chosen))


def tokenize(vocab: Vocabulary, text: str) -> list[int]:
    return [vocab.index.get(tok, 1) for tok in split_words(text)]


def detokenize(vocab: Vocabulary, ids: Iterable[int]) -> str:
    out = []
    for i in ids:
        if not 0 <= i < len(vocab):
            raise VocabularyError(f"token id {i} out of range for vocabulary of size {len(vocab)}")
        out.append(vocab.tokens[i])
    return " ".join(out)

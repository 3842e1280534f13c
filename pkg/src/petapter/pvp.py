"""Pattern templates, verbalizers and the sub-vocabulary they induce.

Template grammar::

    [MASK], [SEP]      special tokens
    [name]             a field of the input record (names may contain spaces)
    [name]*            the field is the truncation region
    {...}*             a group of elements forming the truncation region
    anything else      literal text

Every template has exactly one truncation region. When a compiled instance is
too long, field tokens inside the region are deleted from the end of the
region backwards: the last field's tail goes first, then the field before it.
Literals and separators are never deleted.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence, Union

import numpy as np

from .text import Vocabulary, split_words

log = logging.getLogger(__name__)


class TemplateError(ValueError):
    pass


class PVPError(ValueError):
    pass


class CapacityError(ValueError):
    pass


@dataclass(frozen=True)
class Literal:
    text: str


@dataclass(frozen=True)
class Special:
    kind: str  # "MASK" | "SEP"


@dataclass(frozen=True)
class Field:
    name: str
    truncate: bool = False


@dataclass(frozen=True)
class TruncGroup:
    elements: tuple


Element = Union[Literal, Special, Field, TruncGroup]


@dataclass(frozen=True)
class PatternTemplate:
    source: str
    elements: tuple

    @property
    def m(self) -> int:
        return _count_masks(self.elements)

    @property
    def fields(self) -> list[str]:
        out: list[str] = []
        for el in _flatten(self.elements):
            if isinstance(el, Field) and el.name not in out:
                out.append(el.name)
        return out


def _flatten(elements):
    for el in elements:
        if isinstance(el, TruncGroup):
            yield from el.elements
        else:
            yield el


def _count_masks(elements) -> int:
    return sum(1 for el in _flatten(elements) if isinstance(el, Special) and el.kind == "MASK")


def parse_template(source: str) -> PatternTemplate:
    top: list = []
    group: list | None = None
    literal: list[str] = []
    regions = 0
    i, n = 0, len(source)

    def flush():
        if literal:
            text = "".join(literal)
            literal.clear()
            if text.strip():
                (group if group is not None else top).append(Literal(text))

    while i < n:
        ch = source[i]
        if ch == "[":
            close = source.find("]", i + 1)
            if close < 0:
                raise TemplateError(f"unclosed '[' at offset {i} in {source!r}")
            flush()
            name = source[i + 1 : close]
            i = close + 1
            if name in ("MASK", "SEP"):
                el = Special(name)
                if name == "MASK" and group is not None:
                    raise TemplateError(f"[MASK] inside a truncation group in {source!r}")
            else:
                starred = i < n and source[i] == "*"
                if starred:
                    i += 1
                    if group is not None:
                        raise TemplateError(f"field [{name}]* inside a truncation group in {source!r}")
                    regions += 1
                el = Field(name, truncate=starred)
            (group if group is not None else top).append(el)
            continue
        if ch == "{":
            if group is not None:
                raise TemplateError(f"nested '{{' at offset {i} in {source!r}")
            flush()
            group = []
            i += 1
            continue
        if ch == "}":
            if group is None:
                raise TemplateError(f"unbalanced '}}' at offset {i} in {source!r}")
            flush()
            if i + 1 >= n or source[i + 1] != "*":
                raise TemplateError(f"brace group without '*' truncation marker in {source!r}")
            top.append(TruncGroup(tuple(group)))
            group = None
            regions += 1
            i += 2
            continue
        literal.append(ch)
        i += 1
    if group is not None:
        raise TemplateError(f"unclosed '{{' in {source!r}")
    flush()
    if regions != 1:
        raise TemplateError(f"expected exactly one truncation region, found {regions} in {source!r}")
    return PatternTemplate(source, tuple(top))


@dataclass
class ClozeInstance:
    ids: list[int]
    mask_positions: list[int]
    label: int | None = None


def _segments(template: PatternTemplate, record: Mapping[str, str], vocab: Vocabulary):
    """(ids, truncatable) chunks in template order."""
    segs: list[tuple[list[int], bool]] = []

    def field_ids(name: str) -> list[int]:
        if name not in record:
            log.warning("record has no field %r; treating it as empty", name)
        return [vocab.id(t) for t in split_words(str(record.get(name, "")))]

    def emit(el, in_region: bool):
        if isinstance(el, Literal):
            segs.append(([vocab.id(t) for t in split_words(el.text)], False))
        elif isinstance(el, Special):
            segs.append(([vocab.mask_id if el.kind == "MASK" else vocab.sep_id], False))
        elif isinstance(el, Field):
            segs.append((field_ids(el.name), in_region or el.truncate))

    for el in template.elements:
        if isinstance(el, TruncGroup):
            for inner in el.elements:
                emit(inner, True)
        else:
            emit(el, False)
    return segs


def apply_pattern(
    template: PatternTemplate,
    record: Mapping[str, str],
    vocab: Vocabulary,
    max_len: int,
    label: int | None = None,
) -> ClozeInstance:
    segs = _segments(template, record, vocab)
    fixed = sum(len(ids) for ids, trunc in segs if not trunc)
    if fixed > max_len:
        raise CapacityError(f"pattern needs {fixed} fixed tokens but max_len is {max_len}")
    excess = sum(len(ids) for ids, _ in segs) - max_len
    for ids, trunc in reversed(segs):
        if excess <= 0:
            break
        if trunc and ids:
            cut = min(excess, len(ids))
            del ids[len(ids) - cut :]
            excess -= cut
    out: list[int] = []
    for ids, _ in segs:
        out.extend(ids)
    masks = [i for i, tok in enumerate(out) if tok == vocab.mask_id]
    return ClozeInstance(out, masks, label)


def plain_instance(
    record: Mapping[str, str],
    fields: Sequence[str],
    vocab: Vocabulary,
    max_len: int,
    label: int | None = None,
) -> ClozeInstance:
    """[CLS] + fields joined by [SEP], tail-truncated; the linear-head input."""
    out = [vocab.cls_id]
    for k, name in enumerate(fields):
        if k:
            out.append(vocab.sep_id)
        out.extend(vocab.id(t) for t in split_words(str(record.get(name, ""))))
    return ClozeInstance(out[:max_len], [], label)


@dataclass(frozen=True)
class VerbalizerMap:
    labels: tuple[str, ...]
    words: dict[str, tuple[str, ...]] = field(compare=False)

    @classmethod
    def from_dict(cls, mapping: Mapping[str, Sequence[str] | str]) -> "VerbalizerMap":
        words = {}
        for label, w in mapping.items():
            words[str(label)] = (w,) if isinstance(w, str) else tuple(w)
        return cls(tuple(words), words)

    @property
    def c(self) -> int:
        return len(self.labels)

    def tokens(self, label: str) -> list[str]:
        return split_words(" ".join(self.words[label]))

    @property
    def m_v(self) -> int:
        """Tokens per label; raises if labels disagree."""
        lengths = {len(self.tokens(lab)) for lab in self.labels}
        if len(lengths) != 1:
            raise PVPError(f"verbalizers have differing token counts {sorted(lengths)}")
        return lengths.pop()

    def check_injective(self) -> None:
        seen: dict[tuple[str, ...], str] = {}
        for lab in self.labels:
            seq = tuple(self.tokens(lab))
            if seq in seen:
                raise PVPError(f"labels {seen[seq]!r} and {lab!r} share verbalizer {' '.join(seq)!r}")
            seen[seq] = lab

    def label_index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise PVPError(f"unknown label {label!r}; expected one of {list(self.labels)}") from None


@dataclass(frozen=True)
class SubVocabulary:
    token_ids: tuple[int, ...]
    index: np.ndarray = field(compare=False)  # [c, m], positions into token_ids

    @property
    def t(self) -> int:
        return len(self.token_ids)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, SubVocabulary)
            and self.token_ids == other.token_ids
            and np.array_equal(self.index, other.index)
        )


def build_sub_vocab(verbalizers: VerbalizerMap, vocab: Vocabulary) -> SubVocabulary:
    verbalizers.check_injective()
    m = verbalizers.m_v
    seqs = []
    for lab in verbalizers.labels:
        toks = verbalizers.tokens(lab)
        missing = [t for t in toks if t not in vocab]
        if missing:
            raise PVPError(f"verbalizer tokens {missing} for label {lab!r} map to [UNK]")
        seqs.append([vocab.index[t] for t in toks])
    token_ids = tuple(sorted({i for seq in seqs for i in seq}))
    pos = {tok: k for k, tok in enumerate(token_ids)}
    index = np.array([[pos[i] for i in seq] for seq in seqs], dtype=np.int64).reshape(len(seqs), m)
    return SubVocabulary(token_ids, index)


def validate_pvp(template: PatternTemplate, verbalizers: VerbalizerMap) -> None:
    verbalizers.check_injective()
    if template.m != verbalizers.m_v:
        raise PVPError(
            f"pattern has {template.m} [MASK] tokens but verbalizers have {verbalizers.m_v} tokens per label"
        )


@dataclass(frozen=True)
class PVP:
    template: PatternTemplate
    verbalizers: VerbalizerMap

    @property
    def labels(self) -> tuple[str, ...]:
        return self.verbalizers.labels

    def required_words(self) -> list[str]:
        words = [lit.text for lit in _flatten(self.template.elements) if isinstance(lit, Literal)]
        for lab in self.labels:
            words.extend(self.verbalizers.words[lab])
        return words

    def validate(self) -> None:
        validate_pvp(self.template, self.verbalizers)

    def to_dict(self) -> dict:
        return {
            "pattern": self.template.source,
            "verbalizers": {lab: list(self.verbalizers.words[lab]) for lab in self.labels},
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "PVP":
        try:
            pattern, verbs = payload["pattern"], payload["verbalizers"]
        except KeyError as exc:
            raise PVPError(f"PVP file is missing key {exc}") from None
        return cls(parse_template(pattern), VerbalizerMap.from_dict(verbs))


def load_pvp(path: str | Path) -> PVP:
    return PVP.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def save_pvp(pvp: PVP, path: str | Path) -> None:
    Path(path).write_text(json.dumps(pvp.to_dict(), ensure_ascii=False, indent=2) + "\n", encoding="utf-8")


def builtin_pvps() -> dict[str, PVP]:
    """The shipped pattern/verbalizer library, keyed by file stem."""
    root = Path(__file__).parent / "pvps"
    return {p.stem: load_pvp(p) for p in sorted(root.glob("*.json"))}


def one_vs_all_augment(
    records: Sequence[Mapping[str, str]],
    labels: Sequence[str],
    yesno_field: str = "Label",
    label_key: str = "label",
) -> list[dict[str, str]]:
    """Pair every record with every candidate label; gold becomes Yes/No."""
    if not labels:
        raise PVPError("one-vs-all augmentation needs at least one candidate label")
    out = []
    for rec in records:
        gold = rec[label_key]
        for cand in labels:
            new = dict(rec)
            new[yesno_field] = cand
            new[label_key] = "Yes" if cand == gold else "No"
            out.append(new)
    return out

"""Generated keyword-separable topic data for the desk-scale experiments.

Each class owns a disjoint set of keywords with long-tailed (Zipf)
frequencies; a text is filler with keywords of its class mixed in. Labelled
records carry a single keyword, so a few dozen shots cannot cover a class's
keyword set. The pretraining corpus is denser
(several keywords per sentence) and tags each sentence with its topic word,
by default in the same "<topic> news : <text>" shape the prompt pattern
produces. A cloze head can therefore reuse what the masked-LM learned about
every keyword, while a fresh classifier only knows the keywords it was shown.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import SplitMix64

TOPICS = ("world", "sports", "business", "tech")
LABELS = ("World", "Sports", "Business", "Sci/Tech")
_ONSETS = "b c d f g h j k l m n p r s t v w z br cr dr fl gr kl pr st tr".split()
_VOWELS = "a e i o u ai ei ou".split()
_CODAS = ["", "n", "r", "s", "l", "k", "m", "x"]


@dataclass(frozen=True)
class SyntheticTask:
    keywords: dict[str, list[str]]  # label -> keywords
    filler: list[str]
    labels: tuple[str, ...] = LABELS
    topics: tuple[str, ...] = TOPICS
    min_len: int = 8
    max_len: int = 16
    record_keywords: tuple[int, int] = (1, 1)
    corpus_keywords: tuple[int, int] = (2, 5)
    zipf: float = 1.0  # keyword k of a class is drawn with weight (k + 1) ** -zipf

    def keyword_cdf(self) -> np.ndarray:
        n = len(next(iter(self.keywords.values())))
        w = np.arange(1, n + 1, dtype=np.float64) ** -self.zipf
        return np.cumsum(w / w.sum())


def _pseudo_words(rng: SplitMix64, n: int, taken: set[str]) -> list[str]:
    out: list[str] = []
    while len(out) < n:
        syll = 2 + rng.below(2)
        w = "".join(
            _ONSETS[rng.below(len(_ONSETS))] + _VOWELS[rng.below(len(_VOWELS))] + _CODAS[rng.below(len(_CODAS))]
            for _ in range(syll)
        )
        if w not in taken:
            taken.add(w)
            out.append(w)
    return out


def make_task(
    seed: int = 0, keywords_per_class: int = 40, filler_words: int = 1800, zipf: float = 1.0
) -> SyntheticTask:
    rng = SplitMix64(seed)
    taken = set(TOPICS) | {"news"}
    words = _pseudo_words(rng, len(LABELS) * keywords_per_class + filler_words, taken)
    kw = {lab: words[i * keywords_per_class : (i + 1) * keywords_per_class] for i, lab in enumerate(LABELS)}
    return SyntheticTask(kw, words[len(LABELS) * keywords_per_class :], zipf=zipf)


def make_text(task: SyntheticTask, label: str, rng: SplitMix64, keywords: tuple[int, int] | None = None) -> str:
    lo, hi = task.record_keywords if keywords is None else keywords
    length = task.min_len + rng.below(task.max_len - task.min_len + 1)
    n_kw = min(length, lo + rng.below(hi - lo + 1))
    toks = [task.filler[i] for i in rng.integers(len(task.filler), length)]
    pool = task.keywords[label]
    cdf = task.keyword_cdf()
    for slot in rng.choice(length, n_kw):
        toks[slot] = pool[min(int(np.searchsorted(cdf, rng.uniform(1)[0], side="right")), len(pool) - 1)]
    return " ".join(toks)


def make_records(task: SyntheticTask, counts: dict[str, int], seed: int) -> list[dict[str, str]]:
    """Records with exact per-label counts, interleaved in a seeded order."""
    rng = SplitMix64(seed)
    labels = [lab for lab in task.labels for _ in range(counts.get(lab, 0))]
    order = rng.permutation(len(labels))
    return [{"text": make_text(task, labels[i], rng), "label": labels[i]} for i in order]


def make_corpus(task: SyntheticTask, n: int, seed: int, lead_fraction: float = 1.0) -> list[str]:
    """Pretraining sentences, each tagged with its topic word.

    A ``lead_fraction`` share reads "<topic> news : <text>", the rest
    "<text> . <topic> news".
    """
    rng = SplitMix64(seed)
    out = []
    for _ in range(n):
        k = rng.below(len(task.labels))
        text = make_text(task, task.labels[k], rng, task.corpus_keywords)
        if rng.uniform(1)[0] < lead_fraction:
            out.append(f"{task.topics[k]} news : {text}")
        else:
            out.append(f"{text} . {task.topics[k]} news")
    return out

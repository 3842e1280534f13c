"""Labeled JSONL datasets and few-shot training-set sampling."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

from .rng import SplitMix64

STRATEGIES = ("equal", "random", "stratified")


class DataError(ValueError):
    pass


class SamplingError(ValueError):
    pass


@dataclass
class LabeledDataset:
    records: list[dict[str, str]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def labels(self) -> list[str]:
        return [r["label"] for r in self.records]

    @property
    def label_counts(self) -> dict[str, int]:
        return dict(Counter(self.labels))


def load_jsonl(path: str | Path) -> LabeledDataset:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise DataError(f"{path}:{lineno}: expected an object")
            if "label" not in obj:
                raise DataError(f"{path}:{lineno}: missing 'label' key")
            records.append({str(k): "" if v is None else str(v) for k, v in obj.items()})
    return LabeledDataset(records)


def save_jsonl(data: LabeledDataset | Sequence[dict], path: str | Path) -> None:
    records = data.records if isinstance(data, LabeledDataset) else data
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def _frequency_order(counts: dict[str, int]) -> list[str]:
    return sorted(counts, key=lambda lab: (-counts[lab], lab))


def equal_allocation(counts: dict[str, int], n: int) -> dict[str, int]:
    """floor(n/c) per label; the remainder goes one each to the most frequent labels."""
    c = len(counts)
    base, rem = divmod(n, c)
    order = _frequency_order(counts)
    return {lab: base + (1 if k < rem else 0) for k, lab in enumerate(order)}


def hamilton_apportion(counts: dict[str, int], n: int) -> dict[str, int]:
    """Largest-remainder apportionment of n seats to labels by count.

    Remainder ties go to the larger label, then lexicographically.
    """
    total = sum(counts.values())
    quotas = {lab: Fraction(n * cnt, total) for lab, cnt in counts.items()}
    seats = {lab: int(q) for lab, q in quotas.items()}
    left = n - sum(seats.values())
    order = sorted(counts, key=lambda lab: (-(quotas[lab] - seats[lab]), -counts[lab], lab))
    for lab in order[:left]:
        seats[lab] += 1
    return seats


def stratified_allocation(counts: dict[str, int], n: int) -> dict[str, int]:
    """Hamilton apportionment with at least one record per label.

    A label left without a seat takes one from the label whose allocation most
    exceeds its quota; no seat moves when every label already has one.
    """
    seats = hamilton_apportion(counts, n)
    total = sum(counts.values())
    for lab in sorted(counts, key=lambda lab: (counts[lab], lab)):
        if seats[lab] > 0:
            continue
        donor = max(
            (d for d in counts if seats[d] > 1),
            key=lambda d: (seats[d] - Fraction(n * counts[d], total), -counts[d], d),
        )
        seats[donor] -= 1
        seats[lab] = 1
    return seats


def expected_counts(label_counts: Sequence[int], n: int) -> list[Fraction]:
    """Expected per-label counts of a simple random sample of size n."""
    total = sum(label_counts)
    if total <= 0:
        raise SamplingError("label counts must sum to a positive total")
    return [Fraction(n * cnt, total) for cnt in label_counts]


@dataclass(frozen=True)
class SamplingStrategy:
    variant: str
    n: int
    seed: int = 0


def sample(data: LabeledDataset, strategy: SamplingStrategy) -> LabeledDataset:
    """Draw a few-shot subset. Returned records are the input dict objects, shuffled."""
    variant, n = strategy.variant, strategy.n
    if variant not in STRATEGIES:
        raise SamplingError(f"unknown strategy {variant!r}; choose from {STRATEGIES}")
    if n < 1:
        raise SamplingError(f"n must be >= 1, got {n}")
    if n > len(data):
        raise SamplingError(f"cannot sample {n} records from {len(data)}")
    rng = SplitMix64(strategy.seed)
    records = data.records
    if variant == "random":
        chosen = [records[i] for i in rng.choice(len(records), n)]
    else:
        counts = data.label_counts
        if n < len(counts):
            raise SamplingError(f"{variant} sampling needs n >= number of labels ({len(counts)}), got {n}")
        alloc = equal_allocation(counts, n) if variant == "equal" else stratified_allocation(counts, n)
        by_label: dict[str, list[dict]] = {}
        for rec in records:
            by_label.setdefault(rec["label"], []).append(rec)
        chosen = []
        for lab in sorted(alloc):
            pool, k = by_label[lab], alloc[lab]
            if k > len(pool):
                raise SamplingError(f"label {lab!r} has {len(pool)} records, {k} requested")
            chosen.extend(pool[i] for i in rng.choice(len(pool), k))
    order = rng.permutation(len(chosen))
    return LabeledDataset([chosen[i] for i in order])

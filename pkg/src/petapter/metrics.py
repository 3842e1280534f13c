"""Accuracy, per-label precision/recall/F1, macro-F1, aggregation, majority vote."""

from __future__ import annotations

import json
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .tensor import ContractError


@dataclass
class MetricsReport:
    labels: list[str]
    accuracy: float
    precision: list[float]
    recall: list[float]
    f1: list[float]
    support: list[int]
    macro_f1: float
    confusion: list[list[int]]

    def per_label(self) -> dict[str, dict]:
        return {
            lab: {"precision": p, "recall": r, "f1": f, "support": s}
            for lab, p, r, f, s in zip(self.labels, self.precision, self.recall, self.f1, self.support)
        }

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "per_label": self.per_label(),
            "labels": self.labels,
            "confusion": self.confusion,
        }


def confusion_matrix(gold: Sequence[int], pred: Sequence[int], c: int) -> np.ndarray:
    cm = np.zeros((c, c), dtype=np.int64)
    np.add.at(cm, (np.asarray(gold, dtype=np.int64), np.asarray(pred, dtype=np.int64)), 1)
    return cm


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def compute_metrics(gold: Sequence, pred: Sequence, labels: Sequence[str]) -> MetricsReport:
    """Metrics over label names (or indices into ``labels``).

    Rows of the confusion matrix are gold labels, columns predictions, both in
    ``labels`` order. Zero denominators give 0 for precision, recall and F1.
    """
    if len(gold) != len(pred):
        raise ContractError(f"gold has {len(gold)} entries, pred has {len(pred)}")
    if len(gold) == 0:
        raise ContractError("cannot score an empty prediction set")
    labels = list(labels)
    pos = {lab: i for i, lab in enumerate(labels)}

    def idx(x):
        if isinstance(x, (int, np.integer)):
            return int(x)
        return pos[x]

    cm = confusion_matrix([idx(g) for g in gold], [idx(p) for p in pred], len(labels))
    tp = np.diag(cm)
    precision = [_ratio(int(tp[i]), int(cm[:, i].sum())) for i in range(len(labels))]
    recall = [_ratio(int(tp[i]), int(cm[i, :].sum())) for i in range(len(labels))]
    f1 = [_ratio(2 * p * r, p + r) for p, r in zip(precision, recall)]
    return MetricsReport(
        labels=labels,
        accuracy=float(tp.sum()) / len(gold),
        precision=precision,
        recall=recall,
        f1=f1,
        support=[int(x) for x in cm.sum(axis=1)],
        macro_f1=float(np.mean(f1)),
        confusion=cm.tolist(),
    )


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    values = list(values)
    if len(values) == 1:
        return float(values[0]), 0.0
    return statistics.fmean(values), statistics.stdev(values)


def aggregate(reports: Sequence[MetricsReport]) -> dict:
    """Mean and sample standard deviation of every scalar metric."""
    if not reports:
        raise ContractError("aggregate needs at least one report")
    out = {
        "n": len(reports),
        "accuracy": mean_std([r.accuracy for r in reports]),
        "macro_f1": mean_std([r.macro_f1 for r in reports]),
        "per_label": {},
    }
    for i, lab in enumerate(reports[0].labels):
        out["per_label"][lab] = {
            key: mean_std([getattr(r, key)[i] for r in reports]) for key in ("precision", "recall", "f1")
        }
    return out


def majority_vote(preds: Sequence[Sequence[int]], probs: Sequence[np.ndarray] | None = None) -> tuple[list[int], int]:
    """Per-record plurality over k runs.

    Ties go to the tied label with the highest mean pseudo-probability, then
    to the lowest label index. Returns (labels, number of tied records).
    """
    if not preds:
        raise ContractError("majority vote needs at least one run")
    n = len(preds[0])
    if any(len(p) != n for p in preds):
        raise ContractError("runs cover different record sets")
    votes = np.asarray(preds, dtype=np.int64)  # [k, N]
    if probs is not None:
        q = np.asarray(probs, dtype=np.float64)  # [k, N, c]
        if q.shape[:2] != votes.shape:
            raise ContractError(f"probability array {q.shape} does not match predictions {votes.shape}")
        c = q.shape[2]
        mean_q = q.mean(axis=0)
    else:
        c = int(votes.max()) + 1
        mean_q = None
    out, ties = [], 0
    for j in range(n):
        counts = np.bincount(votes[:, j], minlength=c)
        best = np.flatnonzero(counts == counts.max())
        if len(best) > 1:
            ties += 1
            if mean_q is not None:
                top = mean_q[j, best].max()
                best = best[mean_q[j, best] == top]
        out.append(int(best[0]))
    return out, ties


def write_report(path: str | Path, report: MetricsReport, k: int = 1, ties: int = 0) -> None:
    payload = report.to_dict()
    payload["k"] = k
    payload["tie_breaks"] = ties
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def report_from_dict(d: dict) -> MetricsReport:
    labels = d["labels"]
    pl = d["per_label"]
    return MetricsReport(
        labels=labels,
        accuracy=d["accuracy"],
        precision=[pl[lab]["precision"] for lab in labels],
        recall=[pl[lab]["recall"] for lab in labels],
        f1=[pl[lab]["f1"] for lab in labels],
        support=[pl[lab]["support"] for lab in labels],
        macro_f1=d["macro_f1"],
        confusion=d["confusion"],
    )


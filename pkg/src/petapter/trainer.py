"""Training and inference for PETapter, PET and the linear-head baseline."""

from __future__ import annotations

import json
import logging
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .encoder import ConfigError, EncoderModel, encode, mlm_logits, pad_batch
from .heads import (
    Head,
    LinearHead,
    PetapterHead,
    ce_loss,
    linear_head_logits,
    pet_score,
    petapter_mask_logits,
    pseudo_probs,
    score_labels,
)
from .optim import AdamState, Parameter, adam_step
from .peft import PeftConfig, inject, unfreeze_all
from .pvp import PVP, ClozeInstance, apply_pattern, build_sub_vocab, plain_instance
from .rng import SplitMix64
from .sampler import LabeledDataset
from .text import Vocabulary, tokenize

log = logging.getLogger(__name__)

METHODS = ("petapter", "pet", "linear")
DEFAULT_EPOCHS = {"petapter": 30, "linear": 30, "pet": 10}


@dataclass
class TrainConfig:
    method: str = "petapter"
    peft: PeftConfig = field(default_factory=PeftConfig)
    lr: float = 5e-5
    epochs: int | None = None
    batch_size: int = 2
    seed: int = 0
    max_len: int = 128
    dropout: float | None = None  # fine-tuning dropout; None keeps the encoder's rate
    eval_batch_size: int = 64

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.method == "pet" and self.peft.active:
            raise ConfigError("PET is full fine-tuning; it cannot be combined with a PEFT module")
        if self.batch_size < 1 or self.lr <= 0:
            raise ConfigError("batch_size must be >= 1 and lr > 0")
        if self.dropout is not None and not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        self.peft.validate()

    @property
    def n_epochs(self) -> int:
        return DEFAULT_EPOCHS[self.method] if self.epochs is None else self.epochs

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "peft": self.peft.to_dict(),
            "lr": self.lr,
            "epochs": self.n_epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "max_len": self.max_len,
            "dropout": self.dropout,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["peft"] = PeftConfig.from_dict(d.get("peft", {}))
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


def cloze_input(pvp: PVP, record: dict, vocab: Vocabulary, max_len: int, label: int | None = None) -> ClozeInstance:
    """The pattern instance behind a leading [CLS], as every encoder input starts."""
    inst = apply_pattern(pvp.template, record, vocab, max_len - 1, label)
    return ClozeInstance([vocab.cls_id] + inst.ids, [p + 1 for p in inst.mask_positions], label)


@dataclass
class Classifier:
    """An encoder plus the head and input compilation for one method."""

    model: EncoderModel
    head: Head | None
    method: str
    vocab: Vocabulary
    labels: tuple[str, ...]
    pvp: PVP | None = None
    fields: tuple[str, ...] = ("text",)
    max_len: int = 128

    def __post_init__(self):
        self.sub_vocab = build_sub_vocab(self.pvp.verbalizers, self.vocab) if self.pvp is not None else None
        self._label_pos = {lab: i for i, lab in enumerate(self.labels)}

    def compile(self, record: dict) -> ClozeInstance:
        gold = self._label_pos.get(record["label"]) if "label" in record else None
        if self.method == "linear":
            return plain_instance(record, self.fields, self.vocab, self.max_len, gold)
        return cloze_input(self.pvp, record, self.vocab, self.max_len, gold)

    def parameters(self) -> list[Parameter]:
        return self.model.parameters() + (self.head.parameters() if self.head is not None else [])

    def trainable(self) -> list[Parameter]:
        return [p for p in self.parameters() if p.trainable]

    def scores(self, batch: Sequence[ClozeInstance], rng=None) -> T.Tensor:
        """[B, c] label scores (pre-softmax)."""
        ids, mask = pad_batch([inst.ids for inst in batch], self.vocab.pad_id)
        hidden = encode(self.model, ids, mask, rng=rng)
        if self.method == "linear":
            return linear_head_logits(self.head, hidden)
        positions = np.array([inst.mask_positions for inst in batch], dtype=np.int64)
        if self.method == "pet":
            return pet_score(self.model, hidden, positions, self.sub_vocab)
        return score_labels(petapter_mask_logits(self.head, hidden, positions), self.sub_vocab)

    def predict_instances(self, instances: Sequence[ClozeInstance], batch_size: int = 64) -> tuple[list[int], np.ndarray]:
        probs = []
        for start in range(0, len(instances), batch_size):
            s = self.scores(instances[start : start + batch_size])
            probs.append(pseudo_probs(s.data))
        q = np.concatenate(probs) if probs else np.zeros((0, len(self.labels)))
        return [int(i) for i in q.argmax(axis=1)], q

    def predict(self, records: Sequence[dict], batch_size: int = 64) -> tuple[list[int], np.ndarray]:
        return self.predict_instances([self.compile(r) for r in records], batch_size)

    def meta(self) -> dict:
        return {
            "method": self.method,
            "labels": list(self.labels),
            "fields": list(self.fields),
            "max_len": self.max_len,
            "pvp": self.pvp.to_dict() if self.pvp is not None else None,
        }


@dataclass
class RunResult:
    seed: int
    train_pred: list[int]
    train_probs: np.ndarray
    epoch_losses: list[float]
    epoch_times: list[float]
    test_pred: list[int] | None = None
    test_probs: np.ndarray | None = None
    checkpoint: str | None = None


def build_classifier(
    base: EncoderModel,
    vocab: Vocabulary,
    cfg: TrainConfig,
    pvp: PVP | None,
    labels: Sequence[str] | None = None,
    fields: Sequence[str] | None = None,
) -> Classifier:
    """Copy the base and set it up for ``cfg.method``: adapters, freezing, fresh head."""
    cfg.validate()
    if cfg.method in ("petapter", "pet"):
        if pvp is None:
            raise ConfigError(f"method {cfg.method} needs a PVP")
        pvp.validate()
    if labels is None:
        if pvp is None:
            raise ConfigError("labels are required when no PVP is given")
        labels = pvp.labels
    if fields is None:
        fields = tuple(pvp.template.fields) if pvp is not None else ("text",)
    rng = SplitMix64(cfg.seed)
    peft_seed, head_seed = (int(x) for x in rng.next_u64(2) >> np.uint64(1))
    model = base.copy()
    model.peft = None
    if cfg.dropout is not None:
        model.config.dropout = cfg.dropout
    unfreeze_all(model)
    if cfg.peft.active:
        inject(model, cfg.peft, seed=peft_seed)
    h = model.config.hidden
    if cfg.method == "pet":
        head = None
    else:
        model.params["mlm.bias"].trainable = False  # the MLM decoder is unused by these heads
        if cfg.method == "petapter":
            head = PetapterHead(h, build_sub_vocab(pvp.verbalizers, vocab).t, seed=head_seed, dtype=model.dtype)
        else:
            head = LinearHead(h, len(labels), seed=head_seed, dtype=model.dtype)
    return Classifier(model, head, cfg.method, vocab, tuple(labels), pvp, tuple(fields), cfg.max_len)


def train(
    base: EncoderModel,
    vocab: Vocabulary,
    pvp: PVP | None,
    data: LabeledDataset,
    cfg: TrainConfig,
    test: LabeledDataset | None = None,
    out_dir: str | Path | None = None,
    labels: Sequence[str] | None = None,
    extra_config: dict | None = None,
) -> tuple[Classifier, RunResult]:
    """Fine-tune a copy of ``base``; the caller's model is left untouched."""
    if len(data) == 0:
        raise ConfigError("training data is empty")
    clf = build_classifier(base, vocab, cfg, pvp, labels)
    instances = [clf.compile(r) for r in data.records]
    if any(inst.label is None for inst in instances):
        bad = sorted({r["label"] for r in data.records if r["label"] not in clf.labels})
        raise ConfigError(f"training labels {bad} are not in the label set {list(clf.labels)}")
    params = clf.trainable()
    opt = AdamState(lr=cfg.lr)
    rng = SplitMix64(cfg.seed).spawn(1)
    drop_rng = rng.spawn(2) if clf.model.config.dropout > 0 else None
    losses, times = [], []
    for _ in range(cfg.n_epochs):
        t0 = time.perf_counter()
        order = rng.permutation(len(instances))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = [instances[i] for i in order[start : start + cfg.batch_size]]
            loss = ce_loss(clf.scores(batch, rng=drop_rng), [inst.label for inst in batch])
            if not np.isfinite(loss.data):
                raise T.NumericError(f"non-finite training loss {loss.data}")
            loss.backward()
            adam_step(opt, params)
            total += float(loss.data)
        losses.append(total)
        times.append(time.perf_counter() - t0)
    train_pred, train_q = clf.predict_instances(instances, cfg.eval_batch_size)
    result = RunResult(cfg.seed, train_pred, train_q, losses, times)
    if test is not None:
        result.test_pred, result.test_probs = clf.predict(test.records, cfg.eval_batch_size)
    if out_dir is not None:
        result.checkpoint = write_run(out_dir, clf, cfg, result, test, extra_config, data)
    return clf, result


def _write_predictions(path: Path, labels: Sequence[str], records, pred, probs) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, (p, q) in enumerate(zip(pred, probs)):
            gold = records[i].get("label") if records is not None else None
            fh.write(
                json.dumps({"index": i, "gold": gold, "predicted": labels[p], "q": [float(x) for x in q]}) + "\n"
            )


def write_run(
    out_dir: str | Path,
    clf: Classifier,
    cfg: TrainConfig,
    result: RunResult,
    test: LabeledDataset | None,
    extra_config: dict | None = None,
    data: LabeledDataset | None = None,
) -> str:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "checkpoint.peta"
    mode = "adapter_only" if clf.model.peft is not None else "full"
    meta = clf.meta()
    if mode == "full":
        meta["vocab"] = list(clf.vocab.tokens)
    save_checkpoint(ckpt, clf.model, clf.head, mode=mode, meta=meta)
    snapshot = {"train": cfg.to_dict(), **(extra_config or {})}
    (out / "config.json").write_text(json.dumps(snapshot, indent=2) + "\n", encoding="utf-8")
    (out / "timing.json").write_text(
        json.dumps({"epoch_seconds": result.epoch_times, "epoch_losses": result.epoch_losses}, indent=2) + "\n",
        encoding="utf-8",
    )
    if result.test_pred is not None:
        _write_predictions(out / "predictions.jsonl", clf.labels, test.records, result.test_pred, result.test_probs)
    if data is not None:
        _write_predictions(out / "train_predictions.jsonl", clf.labels, data.records, result.train_pred, result.train_probs)
    return str(ckpt)


def load_run(run_dir: str | Path) -> Classifier:
    """Reopen a run directory written by ``train``; adapter-only runs reload their base model."""
    run = Path(run_dir)
    snapshot = json.loads((run / "config.json").read_text(encoding="utf-8"))
    base_path = snapshot.get("model")
    base = vocab = None
    if base_path is not None:
        base, vocab = load_base(base_path)
    return load_classifier(run / "checkpoint.peta", base, vocab)


def load_base(path: str | Path, precision: str = "f32") -> tuple[EncoderModel, Vocabulary]:
    """A pretrained encoder checkpoint with its embedded vocabulary."""
    model, _, meta = load_checkpoint(path, precision=precision)
    if "vocab" not in meta:
        raise ValueError(f"{path} carries no vocabulary; it is not a base model file")
    return model, Vocabulary.from_tokens(meta["vocab"])


def save_base(path: str | Path, model: EncoderModel, vocab: Vocabulary) -> None:
    save_checkpoint(path, model, None, mode="full", meta={"vocab": list(vocab.tokens)})


def load_classifier(
    checkpoint: str | Path,
    base: EncoderModel | None = None,
    vocab: Vocabulary | None = None,
    pvp: PVP | None = None,
) -> Classifier:
    model, head, meta = load_checkpoint(checkpoint, base)
    if "vocab" in meta:
        saved = Vocabulary.from_tokens(meta["vocab"])
        if vocab is not None and vocab.tokens != saved.tokens:
            raise CheckpointError("vocabulary differs from the one the checkpoint was trained with")
        vocab = saved
    if vocab is None:
        raise CheckpointError(f"{checkpoint}: no vocabulary stored; pass the base model's vocabulary")
    if pvp is None and meta.get("pvp"):
        pvp = PVP.from_dict(meta["pvp"])
    if pvp is not None and meta.get("pvp") and json.dumps(pvp.to_dict()) != json.dumps(meta["pvp"]):
        raise CheckpointError("PVP differs from the one the checkpoint was trained with")
    return Classifier(
        model, head, meta["method"], vocab, tuple(meta["labels"]), pvp, tuple(meta["fields"]), meta["max_len"]
    )


def predict(clf: Classifier, test: LabeledDataset, batch_size: int = 64) -> RunResult:
    """Batched argmax-q inference on a test set."""
    pred, q = clf.predict(test.records, batch_size)
    empty = np.zeros((0, len(clf.labels)))
    return RunResult(seed=-1, train_pred=[], train_probs=empty, epoch_losses=[], epoch_times=[], test_pred=pred, test_probs=q)


# ---------------------------------------------------------------- pretraining


def pretrain_mlm(
    model: EncoderModel,
    vocab: Vocabulary,
    corpus: Sequence[str],
    epochs: int = 5,
    mask_rate: float = 0.15,
    seed: int = 0,
    lr: float = 1e-3,
    batch_size: int = 32,
) -> list[float]:
    """Masked-LM training in place; returns the mean masked-token loss per epoch.

    Each sentence is framed as [CLS] + tokens. Masked positions are replaced
    by [MASK]; specials are never masked.
    Batches without any masked token are skipped with a warning.
    """
    if not corpus:
        raise ConfigError("pretraining corpus is empty")
    unfreeze_all(model)
    params = model.parameters()
    opt = AdamState(lr=lr)
    rng = SplitMix64(seed)
    drop_rng = rng.spawn(1) if model.config.dropout > 0 else None
    max_len = model.config.max_len
    seqs = [[vocab.cls_id] + tokenize(vocab, line)[: max_len - 1] for line in corpus]
    special = set(range(5))
    history = []
    for _ in range(epochs):
        order = rng.permutation(len(seqs))
        total, count = 0.0, 0
        for start in range(0, len(order), batch_size):
            batch = [seqs[i] for i in order[start : start + batch_size]]
            ids, mask = pad_batch(batch, vocab.pad_id)
            draw = rng.uniform(ids.size).reshape(ids.shape) < mask_rate
            eligible = mask & ~np.isin(ids, list(special))
            chosen = draw & eligible
            if not chosen.any():
                log.warning("pretraining batch has no masked tokens; skipped")
                continue
            rows, cols = np.nonzero(chosen)
            targets = ids[rows, cols]
            inputs = ids.copy()
            inputs[rows, cols] = vocab.mask_id
            hidden = encode(model, inputs, mask, rng=drop_rng)
            logits = mlm_logits(model, T.take(hidden, (rows, cols)))
            picked = T.take(logits, (np.arange(len(targets)), targets))
            loss = T.sum(T.logsumexp(logits, axis=-1) - picked) * (1.0 / len(targets))
            loss.backward()
            for p in params:
                if p.grad is None:
                    p.tensor.grad = np.zeros_like(p.data)
            adam_step(opt, params)
            total += float(loss.data) * len(targets)
            count += len(targets)
        history.append(total / count if count else float("nan"))
    return history


# ---------------------------------------------------------------- timing


def measure_step_time(
    base: EncoderModel,
    vocab: Vocabulary,
    pvp: PVP,
    records: Sequence[dict],
    variants: dict[str, TrainConfig],
    steps: int = 50,
    warmup: int = 5,
) -> dict[str, float]:
    """Median seconds per optimizer step for each named config on one fixed batch.

    Every variant consumes the same token ids (the pattern-compiled batch);
    the linear head simply reads the first position.
    """
    out = {}
    for name, cfg in variants.items():
        clf = build_classifier(base, vocab, cfg, pvp)
        batch = [cloze_input(pvp, r, vocab, cfg.max_len, clf.labels.index(r["label"])) for r in records[: cfg.batch_size]]
        params = clf.trainable()
        opt = AdamState(lr=cfg.lr)
        samples = []
        for k in range(warmup + steps):
            t0 = time.perf_counter()
            loss = ce_loss(clf.scores(batch), [inst.label for inst in batch])
            loss.backward()
            adam_step(opt, params)
            if k >= warmup:
                samples.append(time.perf_counter() - t0)
        out[name] = statistics.median(samples)
    return out

"""The desk-scale few-shot experiment: pretrain a toy encoder, then compare heads.

Used by the acceptance suite and ``scripts/run_fewshot.py``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .encoder import EncoderConfig, EncoderModel, init_model
from .metrics import MetricsReport, compute_metrics, majority_vote
from .peft import PeftConfig
from .pvp import PVP, builtin_pvps
from .sampler import LabeledDataset, SamplingStrategy, sample
from .synthetic import SyntheticTask, make_corpus, make_records, make_task
from .text import Vocabulary, build_vocab
from .trainer import RunResult, TrainConfig, pretrain_mlm, train

POOL_COUNTS = (92, 152, 184, 354)


@dataclass
class FewShotConfig:
    task_seed: int = 0
    keywords_per_class: int = 40
    zipf: float = 1.0
    corpus_size: int = 5000
    pool_size_counts: tuple[int, ...] = POOL_COUNTS
    test_per_label: int = 500
    vocab_size: int = 4000
    pretrain_epochs: int = 5
    pretrain_lr: float = 1e-3
    pretrain_batch: int = 32
    encoder: dict = field(default_factory=dict)
    finetune_dropout: float = 0.1
    pvp_name: str = "ag_prompt"


@dataclass
class FewShotSetup:
    task: SyntheticTask
    vocab: Vocabulary
    model: EncoderModel
    pvp: PVP
    pool: LabeledDataset
    test: LabeledDataset
    pretrain_losses: list[float]
    finetune_dropout: float | None = None

    @property
    def gold(self) -> list[int]:
        return [self.pvp.labels.index(r["label"]) for r in self.test.records]

    def score(self, pred) -> MetricsReport:
        return compute_metrics(self.gold, pred, self.pvp.labels)


def prepare(cfg: FewShotConfig | None = None) -> FewShotSetup:
    cfg = cfg or FewShotConfig()
    task = make_task(cfg.task_seed, cfg.keywords_per_class, zipf=cfg.zipf)
    s = cfg.task_seed * 10
    corpus = make_corpus(task, cfg.corpus_size, seed=s + 1)
    pvp = builtin_pvps()[cfg.pvp_name]
    vocab = build_vocab(corpus, cfg.vocab_size, pvp.required_words())
    model = init_model(EncoderConfig(vocab_size=len(vocab), **cfg.encoder), seed=s)
    losses = pretrain_mlm(
        model, vocab, corpus, epochs=cfg.pretrain_epochs, seed=s, lr=cfg.pretrain_lr, batch_size=cfg.pretrain_batch
    )
    pool = LabeledDataset(make_records(task, dict(zip(task.labels, cfg.pool_size_counts)), seed=s + 2))
    test = LabeledDataset(make_records(task, {lab: cfg.test_per_label for lab in task.labels}, seed=s + 3))
    return FewShotSetup(task, vocab, model, pvp, pool, test, losses, cfg.finetune_dropout)


def run(
    setup: FewShotSetup,
    method: str,
    dataset_seed: int,
    train_seed: int,
    n: int = 40,
    strategy: str = "equal",
    peft: PeftConfig | None = None,
    **overrides,
) -> tuple[RunResult, MetricsReport]:
    data = sample(setup.pool, SamplingStrategy(strategy, n, dataset_seed))
    overrides.setdefault("dropout", setup.finetune_dropout)
    cfg = TrainConfig(method=method, peft=peft or PeftConfig("lora"), seed=train_seed, **overrides)
    _, result = train(setup.model, setup.vocab, setup.pvp, data, cfg, test=setup.test)
    return result, setup.score(result.test_pred)


def ensemble(setup: FewShotSetup, results: list[RunResult]) -> tuple[MetricsReport, int]:
    votes, ties = majority_vote([r.test_pred for r in results], [r.test_probs for r in results])
    return setup.score(votes), ties

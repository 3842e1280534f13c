from __future__ import annotations

from dataclasses import dataclass

import pytest

from petapter.encoder import EncoderConfig, EncoderModel, init_model
from petapter.pvp import PVP, builtin_pvps
from petapter.sampler import LabeledDataset
from petapter.synthetic import SyntheticTask, make_corpus, make_records, make_task
from petapter.text import Vocabulary, build_vocab


@dataclass
class Tiny:
    task: SyntheticTask
    vocab: Vocabulary
    model: EncoderModel
    pvp: PVP
    train: LabeledDataset
    test: LabeledDataset
    corpus: list[str]


def make_tiny(precision: str = "f32", hidden: int = 16) -> Tiny:
    task = make_task(0, keywords_per_class=6, filler_words=60)
    corpus = make_corpus(task, 200, seed=1)
    pvp = builtin_pvps()["ag_prompt"]
    vocab = build_vocab(corpus, 400, pvp.required_words())
    cfg = EncoderConfig(vocab_size=len(vocab), hidden=hidden, layers=1, heads=2, ffn_dim=2 * hidden, max_len=32)
    model = init_model(cfg, seed=0, precision=precision)
    train = LabeledDataset(make_records(task, {lab: 3 for lab in task.labels}, seed=2))
    test = LabeledDataset(make_records(task, {lab: 5 for lab in task.labels}, seed=3))
    return Tiny(task, vocab, model, pvp, train, test, corpus)


@pytest.fixture(scope="session")
def tiny() -> Tiny:
    return make_tiny()


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)

from __future__ import annotations

import json
import logging
import statistics

import numpy as np
import pytest
from conftest import make_tiny

from petapter.checkpoint import CheckpointError
from petapter.encoder import ConfigError, EncoderConfig, init_model
from petapter.heads import ce_loss
from petapter.peft import PeftConfig, base_names
from petapter.pvp import builtin_pvps
from petapter.sampler import LabeledDataset
from petapter.trainer import (
    TrainConfig,
    build_classifier,
    cloze_input,
    load_classifier,
    load_run,
    measure_step_time,
    predict,
    pretrain_mlm,
    save_base,
    train,
)

PEFTS = [PeftConfig("none"), PeftConfig("lora"), PeftConfig("ia3"), PeftConfig("pfeiffer")]


def quick(method="petapter", peft=None, **kw):
    kw.setdefault("epochs", 2)
    return TrainConfig(method=method, peft=peft or PeftConfig("lora"), **kw)


# ---------------------------------------------------------------- config


def test_config_defaults():
    assert TrainConfig().lr == 5e-5
    assert TrainConfig().batch_size == 2
    assert TrainConfig("petapter").n_epochs == 30
    assert TrainConfig("linear").n_epochs == 30
    assert TrainConfig("pet", PeftConfig("none")).n_epochs == 10


@pytest.mark.parametrize(
    "cfg",
    [
        TrainConfig("pet", PeftConfig("lora")),
        TrainConfig("prompt"),
        TrainConfig(lr=0.0),
        TrainConfig(batch_size=0),
        TrainConfig(dropout=1.5),
    ],
)
def test_config_errors(cfg):
    with pytest.raises(ConfigError):
        cfg.validate()


def test_config_round_trip():
    cfg = TrainConfig("linear", PeftConfig("pfeiffer", c_rate=8), lr=1e-3, seed=4, dropout=0.1)
    again = TrainConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again.to_dict() == cfg.to_dict()


# ---------------------------------------------------------------- inputs


def test_cloze_input_leads_with_cls(tiny):
    rec = tiny.train.records[0]
    inst = cloze_input(tiny.pvp, rec, tiny.vocab, 32)
    assert inst.ids[0] == tiny.vocab.cls_id
    assert inst.mask_positions == [1]
    assert inst.ids[1] == tiny.vocab.mask_id
    assert len(cloze_input(tiny.pvp, rec, tiny.vocab, 5).ids) == 5


def test_linear_input_is_pattern_free(tiny):
    clf = build_classifier(tiny.model, tiny.vocab, quick("linear"), tiny.pvp)
    inst = clf.compile(tiny.train.records[0])
    assert inst.ids[0] == tiny.vocab.cls_id
    assert tiny.vocab.mask_id not in inst.ids


# ---------------------------------------------------------------- training


def test_determinism(tiny, tmp_path):
    cfg = quick(dropout=0.1)
    train(tiny.model, tiny.vocab, tiny.pvp, tiny.train, cfg, test=tiny.test, out_dir=tmp_path / "a")
    train(tiny.model, tiny.vocab, tiny.pvp, tiny.train, cfg, test=tiny.test, out_dir=tmp_path / "b")
    for name in ("checkpoint.peta", "predictions.jsonl", "train_predictions.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


@pytest.mark.parametrize("peft", PEFTS[1:], ids=lambda p: p.variant)
@pytest.mark.parametrize("method", ["petapter", "linear"])
def test_freeze_invariant(tiny, method, peft):
    before = {n: p.data.copy() for n, p in tiny.model.params.items()}
    clf, _ = train(tiny.model, tiny.vocab, tiny.pvp, tiny.train, quick(method, peft, lr=1e-2))
    for name in base_names(clf.model):
        assert np.array_equal(clf.model.params[name].data, before[name]), name
    moved = [n for n in clf.model.peft.names if not np.array_equal(clf.model.params[n].data, 0 * clf.model.params[n].data)]
    assert moved
    assert all(np.array_equal(tiny.model.params[n].data, before[n]) for n in before)


def test_pet_updates_the_base(tiny):
    before = {n: p.data.copy() for n, p in tiny.model.params.items()}
    clf, _ = train(tiny.model, tiny.vocab, tiny.pvp, tiny.train, quick("pet", PeftConfig("none"), lr=1e-3))
    assert clf.head is None
    changed = sum(int((clf.model.params[n].data != before[n]).sum()) for n in before)
    # embedding rows of tokens that never occur receive no gradient; everything else moves
    assert changed > 0.5 * sum(v.size for v in before.values())


def test_loss_falls_over_thirty_epochs(tiny):
    drops = []
    for seed in range(5):
        _, res = train(tiny.model, tiny.vocab, tiny.pvp, tiny.train, quick(epochs=30, seed=seed, lr=1e-3))
        drops.append(res.epoch_losses[0] - res.epoch_losses[-1])
    assert statistics.median(drops) > 0


def test_run_result_shapes(tiny):
    _, res = train(tiny.model, tiny.vocab, tiny.pvp, tiny.train, quick(), test=tiny.test)
    assert len(res.test_pred) == len(tiny.test)
    assert np.allclose(res.test_probs.sum(axis=1), 1.0, atol=1e-6)
    assert len(res.train_pred) == len(tiny.train)
    assert len(res.epoch_losses) == len(res.epoch_times) == 2


def test_unknown_training_label(tiny):
    bad = LabeledDataset([{"text": "x", "label": "Weather"}])
    with pytest.raises(ConfigError):
        train(tiny.model, tiny.vocab, tiny.pvp, bad, quick())
    with pytest.raises(ConfigError):
        train(tiny.model, tiny.vocab, tiny.pvp, LabeledDataset([]), quick())


def test_batching_invariance_in_f64():
    t = make_tiny(precision="f64")
    clf = build_classifier(t.model, t.vocab, quick(), t.pvp)
    instances = [clf.compile(r) for r in t.train.records]
    gold = [inst.label for inst in instances]
    whole = float(ce_loss(clf.scores(instances), gold).data)
    for size in (1, 2, 5):
        parts = sum(
            float(ce_loss(clf.scores(instances[i : i + size]), gold[i : i + size]).data)
            for i in range(0, len(instances), size)
        )
        assert abs(parts - whole) < 1e-8


# ---------------------------------------------------------------- run directories and prediction


def test_run_directory(tiny, tmp_path):
    base = tmp_path / "base.peta"
    save_base(base, tiny.model, tiny.vocab)
    clf, res = train(
        tiny.model, tiny.vocab, tiny.pvp, tiny.train, quick(), test=tiny.test, out_dir=tmp_path / "run",
        extra_config={"model": str(base)},
    )
    run = tmp_path / "run"
    assert {p.name for p in run.iterdir()} == {
        "checkpoint.peta",
        "config.json",
        "timing.json",
        "predictions.jsonl",
        "train_predictions.jsonl",
    }
    lines = [json.loads(x) for x in (run / "predictions.jsonl").read_text().splitlines()]
    assert len(lines) == len(tiny.test)
    assert set(lines[0]) == {"index", "gold", "predicted", "q"}
    again = load_run(run)
    assert predict(again, tiny.test).test_pred == res.test_pred
    np.testing.assert_array_equal(predict(again, tiny.test).test_probs, res.test_probs)


def test_prediction_is_repeatable(tiny):
    clf, _ = train(tiny.model, tiny.vocab, tiny.pvp, tiny.train, quick())
    a, b = predict(clf, tiny.test), predict(clf, tiny.test, batch_size=3)
    assert a.test_pred == b.test_pred
    np.testing.assert_allclose(a.test_probs, b.test_probs, atol=1e-6)


def test_full_checkpoint_round_trip(tiny, tmp_path):
    clf, res = train(
        tiny.model, tiny.vocab, tiny.pvp, tiny.train, quick("pet", PeftConfig("none")), test=tiny.test,
        out_dir=tmp_path / "pet",
    )
    again = load_classifier(tmp_path / "pet" / "checkpoint.peta")
    assert predict(again, tiny.test).test_pred == res.test_pred


def test_incompatible_checkpoints(tiny, tmp_path):
    train(tiny.model, tiny.vocab, tiny.pvp, tiny.train, quick(), out_dir=tmp_path / "r")
    ckpt = tmp_path / "r" / "checkpoint.peta"
    with pytest.raises(CheckpointError):
        load_classifier(ckpt, tiny.model)  # no vocabulary supplied
    with pytest.raises(CheckpointError):
        load_classifier(ckpt, tiny.model, tiny.vocab, builtin_pvps()["ag_qa"])
    other = init_model(EncoderConfig(vocab_size=len(tiny.vocab), hidden=24, layers=1, heads=2, ffn_dim=48, max_len=32), 0)
    with pytest.raises(CheckpointError):
        load_classifier(ckpt, other, tiny.vocab)


# ---------------------------------------------------------------- pretraining


def test_pretraining_lowers_mlm_loss():
    t = make_tiny()
    corpus = t.corpus * 5  # 1,000 sentences
    finals = []
    for seed in range(3):
        model = init_model(t.model.config, seed=seed)
        hist = pretrain_mlm(model, t.vocab, corpus, epochs=3, seed=seed)
        finals.append(hist[0] - hist[-1])
    assert statistics.median(finals) > 0


def test_pretraining_is_deterministic(tiny):
    a, b = init_model(tiny.model.config, 1), init_model(tiny.model.config, 1)
    assert pretrain_mlm(a, tiny.vocab, tiny.corpus[:40], epochs=1) == pretrain_mlm(b, tiny.vocab, tiny.corpus[:40], epochs=1)
    assert all(np.array_equal(a.params[n].data, b.params[n].data) for n in a.params)


def test_zero_mask_rate_skips(tiny, caplog):
    model = init_model(tiny.model.config, 2)
    before = model.params["embed.tokens"].data.copy()
    with caplog.at_level(logging.WARNING):
        hist = pretrain_mlm(model, tiny.vocab, tiny.corpus[:10], epochs=1, mask_rate=0.0)
    assert "no masked tokens" in caplog.text
    assert np.isnan(hist[0])
    assert np.array_equal(model.params["embed.tokens"].data, before)


def test_empty_corpus(tiny):
    with pytest.raises(ConfigError):
        pretrain_mlm(init_model(tiny.model.config, 0), tiny.vocab, [])


# ---------------------------------------------------------------- timing


def test_measure_step_time(tiny):
    variants = {"petapter": quick(), "linear": quick("linear"), "pet": quick("pet", PeftConfig("none"))}
    times = measure_step_time(tiny.model, tiny.vocab, tiny.pvp, tiny.train.records, variants, steps=5, warmup=1)
    assert set(times) == set(variants)
    assert all(v > 0 for v in times.values())

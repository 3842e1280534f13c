"""Command-line entry point: ``petapter <subcommand> ...``.

Exit codes: 0 success, 1 usage/configuration error, 2 data or file error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

from .checkpoint import CheckpointError
from .encoder import ConfigError, EncoderConfig, init_model
from .gradcheck import PIPELINE_CASES, pipeline_check
from .heads import LinearHead, PetapterHead
from .metrics import compute_metrics, majority_vote, write_report
from .peft import PeftConfig, PeftError, inject, trainable_parameter_count
from .pvp import PVP, CapacityError, PVPError, TemplateError, builtin_pvps, load_pvp
from .sampler import STRATEGIES, DataError, LabeledDataset, SamplingError, SamplingStrategy, load_jsonl, sample
from .sampler import save_jsonl
from .synthetic import make_records, make_task
from .tensor import NumericError
from .text import Vocabulary, VocabularyError, build_vocab
from .trainer import METHODS, TrainConfig, build_classifier, load_base, load_run, measure_step_time
from .trainer import pretrain_mlm, save_base, train

log = logging.getLogger("petapter")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
GRADCHECK_TOL = 1e-4
GRADCHECK_CONFIGS = {"small": {"hidden": 16, "layers": 2}, "tiny": {"hidden": 8, "layers": 1}}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def read_corpus(path: str | Path) -> list[str]:
    """One sentence per line; for .jsonl files, the non-label fields of each record."""
    path = Path(path)
    if path.suffix == ".jsonl":
        return [" ".join(v for k, v in rec.items() if k != "label") for rec in load_jsonl(path).records]
    return [line.strip() for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def _pvp_arg(value: str | None) -> PVP | None:
    if value is None:
        return None
    if not Path(value).exists() and value in builtin_pvps():
        return builtin_pvps()[value]
    return load_pvp(value)


# ---------------------------------------------------------------- subcommands


def cmd_build_vocab(args) -> int:
    corpus = []
    for path in args.corpus:
        corpus.extend(read_corpus(path))
    required = []
    for spec in args.pvp or []:
        required.extend(_pvp_arg(spec).required_words())
    vocab = build_vocab(corpus, args.max_size, required)
    vocab.save(args.out)
    print(f"vocabulary: {len(vocab)} tokens -> {args.out}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    vocab = Vocabulary.load(args.vocab)
    cfg = EncoderConfig(
        vocab_size=len(vocab),
        hidden=args.hidden,
        layers=args.layers,
        heads=args.heads,
        ffn_dim=args.ffn_dim,
        max_len=args.max_len,
        dropout=args.dropout,
    )
    cfg.validate()
    model = init_model(cfg, seed=args.seed)
    if args.epochs > 0:
        corpus = read_corpus(args.corpus) if args.corpus else []
        if not corpus:
            raise UsageError("--corpus with at least one sentence is required when --epochs > 0")
        losses = pretrain_mlm(
            model, vocab, corpus, epochs=args.epochs, mask_rate=args.mask_rate, seed=args.seed,
            lr=args.lr, batch_size=args.batch,
        )
        for epoch, loss in enumerate(losses, 1):
            print(f"epoch {epoch}: masked-LM loss {loss:.4f}")
    save_base(args.out, model, vocab)
    print(f"model -> {args.out}")
    return EXIT_OK


def cmd_sample(args) -> int:
    data = load_jsonl(args.data)
    picked = sample(data, SamplingStrategy(args.strategy, args.n, args.seed))
    save_jsonl(picked, args.out)
    counts = ", ".join(f"{k}={v}" for k, v in sorted(picked.label_counts.items()))
    print(f"sampled {len(picked)} records ({counts}) -> {args.out}")
    return EXIT_OK


def _peft(args) -> PeftConfig:
    variant = args.peft or ("none" if getattr(args, "method", None) == "pet" else "lora")
    return PeftConfig(variant, r=args.r, alpha=args.alpha, c_rate=args.c_rate)


def _train_config(args, seed: int) -> TrainConfig:
    peft = _peft(args)
    cfg = TrainConfig(
        method=args.method, peft=peft, lr=args.lr, epochs=args.epochs, batch_size=args.batch,
        seed=seed, max_len=args.max_len, dropout=args.dropout,
    )
    cfg.validate()
    return cfg


def cmd_train(args) -> int:
    if args.reps < 1:
        raise UsageError("--reps must be >= 1")
    _train_config(args, args.seed)  # fail fast on configuration errors
    pvp = _pvp_arg(args.pvp)
    if args.method in ("petapter", "pet") and pvp is None:
        raise UsageError(f"--method {args.method} needs --pvp")
    data = load_jsonl(args.data)
    test = load_jsonl(args.test) if args.test else None
    base, vocab = load_base(args.model)
    labels = None
    if pvp is None:
        seen = set(data.labels) | (set(test.labels) if test is not None else set())
        labels = sorted(seen)
    inputs = {"data": [args.data, _sha256(args.data)], "model": [args.model, _sha256(args.model)]}
    if args.test:
        inputs["test"] = [args.test, _sha256(args.test)]
    for k in range(args.reps):
        seed = args.seed + k
        cfg = _train_config(args, seed)
        out = Path(args.out) if args.reps == 1 else Path(args.out) / f"seed-{seed}"
        extra = {"model": args.model, "inputs": inputs, "pvp": pvp.to_dict() if pvp else None, "labels": labels}
        clf, result = train(base, vocab, pvp, data, cfg, test=test, out_dir=out, labels=labels, extra_config=extra)
        gold_train = [clf.labels.index(r["label"]) for r in data.records]
        line = f"seed {seed}: train acc {compute_metrics(gold_train, result.train_pred, clf.labels).accuracy:.4f}"
        if test is not None and all(r["label"] in clf.labels for r in test.records):
            rep = compute_metrics([r["label"] for r in test.records], result.test_pred, clf.labels)
            line += f", test macro-F1 {rep.macro_f1:.4f}"
        print(f"{line} -> {out}")
    return EXIT_OK


def _gold(test: LabeledDataset, labels) -> list[str]:
    missing = sorted({r["label"] for r in test.records} - set(labels))
    if missing:
        raise DataError(f"test labels {missing} are not in the run's label set {list(labels)}")
    return test.labels


def cmd_eval(args) -> int:
    clf = load_run(args.run)
    test = load_jsonl(args.test)
    pred, _ = clf.predict(test.records)
    report = compute_metrics(_gold(test, clf.labels), pred, clf.labels)
    write_report(args.out, report, k=1, ties=0)
    print(f"accuracy {report.accuracy:.4f}  macro-F1 {report.macro_f1:.4f} -> {args.out}")
    return EXIT_OK


def cmd_ensemble(args) -> int:
    test = load_jsonl(args.test)
    preds, probs, labels = [], [], None
    for run in args.runs:
        clf = load_run(run)
        if labels is not None and clf.labels != labels:
            raise DataError(f"{run}: label set {list(clf.labels)} differs from {list(labels)}")
        labels = clf.labels
        p, q = clf.predict(test.records)
        preds.append(p)
        probs.append(q)
    votes, ties = majority_vote(preds, probs)
    report = compute_metrics(_gold(test, labels), votes, labels)
    write_report(args.out, report, k=len(args.runs), ties=ties)
    print(f"k={len(args.runs)} accuracy {report.accuracy:.4f}  macro-F1 {report.macro_f1:.4f}  ties {ties}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.config not in GRADCHECK_CONFIGS:
        raise UsageError(f"unknown --config {args.config!r}; choose from {sorted(GRADCHECK_CONFIGS)}")
    dims = GRADCHECK_CONFIGS[args.config]
    worst = 0.0
    for variant, head in PIPELINE_CASES:
        err = pipeline_check(variant, head, seed=args.seed, **dims)
        worst = max(worst, err)
        print(f"{variant:>9} + {head:<8} max rel err {err:.3e}")
    ok = worst < GRADCHECK_TOL
    print(f"max rel err {worst:.3e} ({'ok' if ok else 'FAILED'}, tolerance {GRADCHECK_TOL:g})")
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_params(args) -> int:
    base, vocab = load_base(args.model)
    pvp = _pvp_arg(args.pvp)
    peft = _peft(args)
    cfg = TrainConfig(method=args.method, peft=peft)
    cfg.validate()
    if pvp is not None:
        clf = build_classifier(base, vocab, cfg, pvp)
        model, head = clf.model, clf.head
    else:
        model = base.copy()
        if peft.active:
            inject(model, peft)
        h = model.config.hidden
        head = {"petapter": lambda: PetapterHead(h, args.classes), "linear": lambda: LinearHead(h, args.classes)}
        head = head.get(args.method, lambda: None)()
        if head is not None:
            model.params["mlm.bias"].trainable = False
    counts = trainable_parameter_count(model, head)
    print(f"trainable {counts['trainable']}")
    print(f"total {counts['total']}")
    print(f"fraction {counts['fraction']:.6f}")
    return EXIT_OK


BENCH_CONFIGS = {
    "small": {"hidden": 16, "layers": 2, "heads": 2, "ffn_dim": 64},
    "default": {},
}


def cmd_bench(args) -> int:
    if args.config not in BENCH_CONFIGS:
        raise UsageError(f"unknown --config {args.config!r}; choose from {sorted(BENCH_CONFIGS)}")
    task = make_task(args.seed)
    pvp = builtin_pvps()["ag_prompt"]
    records = make_records(task, {lab: 4 for lab in task.labels}, seed=args.seed)
    corpus = [r["text"] for r in records]
    vocab = build_vocab(corpus, 4000, pvp.required_words())
    base = init_model(EncoderConfig(vocab_size=len(vocab), **BENCH_CONFIGS[args.config]), seed=args.seed)
    peft = _peft(args)
    variants = {
        f"petapter+{peft.variant}": TrainConfig("petapter", peft, batch_size=args.batch),
        f"linear+{peft.variant}": TrainConfig("linear", peft, batch_size=args.batch),
        "pet (full fine-tuning)": TrainConfig("pet", PeftConfig("none"), batch_size=args.batch),
    }
    times = measure_step_time(base, vocab, pvp, records, variants, steps=args.steps, warmup=args.warmup)
    for name, sec in times.items():
        print(f"{name:<24} {sec * 1e3:9.3f} ms/step")
    if args.out:
        Path(args.out).write_text(json.dumps({"config": args.config, "seconds_per_step": times}, indent=2) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _add_peft_flags(p) -> None:
    p.add_argument("--peft", choices=("lora", "ia3", "pfeiffer", "none"), help="default: none for pet, lora otherwise")
    p.add_argument("--r", type=int, default=8)
    p.add_argument("--alpha", type=float, default=16.0)
    p.add_argument("--c-rate", dest="c_rate", type=int, default=16)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="petapter", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("build-vocab", help="build a vocabulary from a corpus")
    p.add_argument("--corpus", required=True, nargs="+")
    p.add_argument("--pvp", action="append", help="PVP file or built-in name whose verbalizer words are kept")
    p.add_argument("--max-size", dest="max_size", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("pretrain", help="initialise a toy encoder and optionally masked-LM pretrain it")
    p.add_argument("--vocab", required=True)
    p.add_argument("--corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--mask-rate", dest="mask_rate", type=float, default=0.15)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--ffn-dim", dest="ffn_dim", type=int, default=256)
    p.add_argument("--max-len", dest="max_len", type=int, default=128)
    p.add_argument("--dropout", type=float, default=0.0)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("sample", help="draw a few-shot training set")
    p.add_argument("--data", required=True)
    p.add_argument("--strategy", choices=STRATEGIES, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("train", help="fine-tune one or more seeded runs")
    p.add_argument("--data", required=True)
    p.add_argument("--test")
    p.add_argument("--pvp")
    p.add_argument("--method", choices=METHODS, default="petapter")
    p.add_argument("--model", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--lr", type=float, default=5e-5)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch", type=int, default=2)
    p.add_argument("--max-len", dest="max_len", type=int, default=128)
    p.add_argument("--dropout", type=float, default=None)
    p.add_argument("--reps", type=int, default=1)
    _add_peft_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a run directory on a test set")
    p.add_argument("--run", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ensemble", help="majority vote over several run directories")
    p.add_argument("--runs", required=True, nargs="+")
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("gradcheck", help="finite-difference check of every PEFT variant and head")
    p.add_argument("--config", default="small")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("params", help="trainable / total parameter counts")
    p.add_argument("--model", required=True)
    p.add_argument("--method", choices=METHODS, default="petapter")
    p.add_argument("--pvp")
    p.add_argument("--classes", type=int, default=4, help="head width when no --pvp is given")
    _add_peft_flags(p)
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("bench", help="median seconds per training step for each method")
    p.add_argument("--config", default="small")
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--batch", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    _add_peft_flags(p)
    p.set_defaults(func=cmd_bench)
    return parser


USAGE_ERRORS = (UsageError, ConfigError, SamplingError, PeftError, CapacityError)
DATA_ERRORS = (DataError, VocabularyError, TemplateError, PVPError, CheckpointError, OSError, KeyError, ValueError)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

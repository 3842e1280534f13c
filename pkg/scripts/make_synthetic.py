"""Write the synthetic topic task to disk: corpus.txt, pool.jsonl, test.jsonl.

    python scripts/make_synthetic.py --out data/ --seed 0
"""

from __future__ import annotations

import argparse
from pathlib import Path

from petapter.fewshot import POOL_COUNTS
from petapter.sampler import save_jsonl
from petapter.synthetic import make_corpus, make_records, make_task


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--corpus-size", type=int, default=5000)
    ap.add_argument("--test-per-label", type=int, default=500)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    task = make_task(args.seed)
    s = args.seed * 10
    corpus = make_corpus(task, args.corpus_size, seed=s + 1)
    (out / "corpus.txt").write_text("\n".join(corpus) + "\n", encoding="utf-8")
    save_jsonl(make_records(task, dict(zip(task.labels, POOL_COUNTS)), seed=s + 2), out / "pool.jsonl")
    save_jsonl(make_records(task, {lab: args.test_per_label for lab in task.labels}, seed=s + 3), out / "test.jsonl")
    print(f"wrote {len(corpus)} corpus lines, pool and test sets to {out}")


if __name__ == "__main__":
    main()

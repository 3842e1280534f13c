"""Run the desk-scale few-shot comparison and print per-grid macro-F1.

    python scripts/run_fewshot.py --grids 5 --reps 5 --n 40 --out fewshot.json

Grid g trains on the few-shot set drawn with seed g; its repetitions differ
only in the training seed. Each grid reports the mean single-run score, the
majority-vote score, and one linear-head run for comparison.
"""

from __future__ import annotations

import argparse
import json
import logging
import statistics
import time

from petapter import fewshot
from petapter.peft import PeftConfig


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--grids", type=int, default=5)
    ap.add_argument("--reps", type=int, default=5)
    ap.add_argument("--n", type=int, default=40)
    ap.add_argument("--strategy", default="equal", choices=["equal", "random", "stratified"])
    ap.add_argument("--peft", default="lora", choices=["lora", "ia3", "pfeiffer"])
    ap.add_argument("--task-seed", type=int, default=0)
    ap.add_argument("--out")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    t0 = time.perf_counter()
    setup = fewshot.prepare(fewshot.FewShotConfig(task_seed=args.task_seed))
    print(f"vocabulary {len(setup.vocab)}, pretraining losses {[round(x, 3) for x in setup.pretrain_losses]}")
    peft = PeftConfig(args.peft)
    rows = []
    for g in range(args.grids):
        runs = [fewshot.run(setup, "petapter", g, s, args.n, args.strategy, peft) for s in range(args.reps)]
        scores = [rep.macro_f1 for _, rep in runs]
        vote, ties = fewshot.ensemble(setup, [res for res, _ in runs])
        linear = fewshot.run(setup, "linear", g, 0, args.n, args.strategy, peft)[1].macro_f1
        rows.append({"grid": g, "runs": scores, "mean": statistics.fmean(scores), "vote": vote.macro_f1,
                     "ties": ties, "linear": linear})
        print(f"grid {g}: mean {rows[-1]['mean']:.4f}  vote {vote.macro_f1:.4f}  linear {linear:.4f}")
    print(f"median first-run PETapter {statistics.median(r['runs'][0] for r in rows):.4f}, "
          f"median linear {statistics.median(r['linear'] for r in rows):.4f}, "
          f"{time.perf_counter() - t0:.0f}s")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump({"args": vars(args), "grids": rows}, fh, indent=2)


if __name__ == "__main__":
    main()

"""Train the grounding stage on the default synthetic corpus and report R@1.

    python scripts/run_grounding.py --seeds 0 1 2
"""
import argparse
import statistics
import time

from vidground.harness.config import apply_overrides, desk_preset
from vidground.harness.evaluate import Model, grounding_recall
from vidground.harness.train import Trainer
from vidground.synthdata import CorpusConfig, generate_splits


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int, default=4)
    ap.add_argument("--max-batches", type=int, default=100)
    ap.add_argument("--set", action="append", help="config override, e.g. model.grounding_history=3")
    args = ap.parse_args()

    splits = generate_splits(CorpusConfig())
    results = []
    for seed in args.seeds:
        run = desk_preset()
        run.seed = seed
        run.model.vocab_size = len(splits.corpus.vocab)
        run.train.grounding_epochs = args.epochs
        run.train.max_batches_per_epoch = args.max_batches
        apply_overrides(run, args.set)
        t0 = time.time()
        trainer = Trainer(run, splits.corpus, splits.train)
        trainer.run_stage()
        rec = grounding_recall(Model.from_trainer(trainer), splits.corpus, splits.val)
        results.append(rec)
        print(f"seed {seed}: " + " ".join(f"R1@{mu}={r:.3f}" for mu, r in rec.items())
              + f" ({time.time() - t0:.0f}s)", flush=True)
    for mu in results[0]:
        print(f"median R1@{mu}: {statistics.median(r[mu] for r in results):.3f}")


if __name__ == "__main__":
    main()

"""Component ablation (baseline, TS, TS+VM, TS+VM+C) with medians over seeds.

    python scripts/run_ablation.py --seeds 5 --out runs/ablation
"""
import argparse
import json
import logging
from pathlib import Path

from vidground.harness.ablate import ablate
from vidground.harness.config import apply_overrides, desk_preset
from vidground.synthdata import CorpusConfig, generate_splits


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--revisit", type=float, default=0.3)
    ap.add_argument("--n-test", type=int, default=100)
    ap.add_argument("--out", default="runs/ablation")
    ap.add_argument("--set", action="append", help="config override, e.g. contrastive.delta=0.05")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    splits = generate_splits(CorpusConfig(revisit=args.revisit), n_test=args.n_test)
    run = desk_preset()
    run.model.vocab_size = len(splits.corpus.vocab)
    apply_overrides(run, args.set)
    out = Path(args.out)
    table = ablate(run, splits.corpus, splits.train, splits.test, list(range(args.seeds)), cache_dir=out / "stage1")
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.json").write_text(json.dumps(table.to_dict(), indent=2, sort_keys=True) + "\n")
    print(table.format())


if __name__ == "__main__":
    main()

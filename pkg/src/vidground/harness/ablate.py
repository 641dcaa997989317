"""Component ablation: baseline, +turn selection, +video mask, +contrastive.

Every row of a seed continues from the same grounding-stage weights, so rows
differ only in what the generation stage sees.
"""
from __future__ import annotations

import json
import logging
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from ..metrics import MetricReport
from ..synthdata import Corpus, SyntheticDialog
from . import checkpoint as ckpt_io
from .config import RunConfig, to_dict
from .evaluate import Model, evaluate
from .train import Trainer

log = logging.getLogger(__name__)

ROWS: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("baseline", ()),
    ("TS", ("ts",)),
    ("TS+VM", ("ts", "vm")),
    ("TS+VM+C", ("ts", "vm", "c")),
)
TABLE_METRICS = ("cider", "bleu4", "meteor_lite", "rouge_l")


@dataclass
class AblationTable:
    seeds: list[int]
    reports: dict[str, list[MetricReport]] = field(default_factory=dict)

    def median(self, row: str, metric: str) -> float:
        return statistics.median(getattr(r, metric) for r in self.reports[row])

    def medians(self) -> dict[str, dict[str, float]]:
        return {row: {m: self.median(row, m) for m in TABLE_METRICS} for row, _ in ROWS if row in self.reports}

    def format(self) -> str:
        head = f"{'row':<10}" + "".join(f"{m:>13}" for m in TABLE_METRICS)
        lines = [head]
        for row, vals in self.medians().items():
            lines.append(f"{row:<10}" + "".join(f"{vals[m]:>13.4f}" for m in TABLE_METRICS))
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "seeds": self.seeds,
            "medians": self.medians(),
            "per_seed": {row: [r.to_dict() for r in reps] for row, reps in self.reports.items()},
        }


def stage1_checkpoint(run: RunConfig, corpus: Corpus, train: Sequence[SyntheticDialog], cache_dir=None) -> ckpt_io.Checkpoint:
    """Grounding-stage weights for ``run.seed``, reused from ``cache_dir`` when present."""
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"stage1_seed{run.seed}.ckpt"
        if path.exists():
            ck = ckpt_io.load(path)
            if ck.meta.get("stage1_key") == _stage1_key(run):
                return ck
    trainer = Trainer(run.with_toggles(()), corpus, train)
    trainer.run_stage()
    ck = trainer.to_checkpoint()
    ck.meta["stage1_key"] = _stage1_key(run)
    if path is not None:
        ckpt_io.save(ck, path)
    return ck


def _stage1_key(run: RunConfig) -> str:
    """Everything the grounding stage depends on."""
    return json.dumps({"model": to_dict(run)["model"], "seed": run.seed, "lr": run.train.lr,
                       "bs": run.train.batch_size, "epochs": run.train.stage1_epochs,
                       "cap": run.train.max_batches_per_epoch, "clip": run.train.clip_norm}, sort_keys=True)


def ablate(
    base: RunConfig,
    corpus: Corpus,
    train: Sequence[SyntheticDialog],
    test: Sequence[SyntheticDialog],
    seeds: Sequence[int],
    cache_dir=None,
    rows: Sequence[tuple[str, tuple[str, ...]]] = ROWS,
) -> AblationTable:
    if base.train.schedule != "two_stage":
        raise ValueError("ablation shares the grounding stage and needs the two_stage schedule")
    table = AblationTable(list(seeds), {name: [] for name, _ in rows})
    for seed in seeds:
        run = base.with_toggles(())
        run.seed = seed
        ck1 = stage1_checkpoint(run, corpus, train, cache_dir)
        for name, toggles in rows:
            row_run = run.with_toggles(toggles)
            trainer = Trainer.from_checkpoint(ck1, corpus, train, run=row_run)
            trainer.run_stage()
            rep = evaluate(Model.from_trainer(trainer), corpus, test).report
            log.info("seed %d %s: cider=%.4f bleu4=%.4f", seed, name, rep.cider, rep.bleu4)
            table.reports[name].append(rep)
    return table

"""Training loops: grounding stage, generation/contrastive stage, or joint.

Randomness is derived from counters rather than carried as generator state:
the item order of an epoch comes from ``(seed, stage, epoch)`` and the clip
sampler of a step from ``(seed, stage, global step)``. A checkpoint therefore
only needs those counters to resume the exact trajectory.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..diffcore import Adam, Tape, Tensor, backward
from ..synthdata import Corpus, SyntheticDialog
from . import checkpoint as ckpt_io
from .config import RunConfig, from_dict, to_dict
from .model import (
    Params, generation_losses, grounding_losses, init_params, make_generation_batch,
    make_grounding_batch,
)

log = logging.getLogger(__name__)

LOSS_FIELDS = (
    "l_frame", "l_clip", "l_grounding", "l_generate",
    "l_plus", "l_minus", "l_contrastive", "l_final",
)
LOG_FIELDS = ("stage", "epoch", "steps") + LOSS_FIELDS


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, component: str, value: float):
        super().__init__(f"non-finite {component} ({value}) at step {step}")
        self.step = step
        self.component = component


def turn_items(dialogs: Sequence[SyntheticDialog]) -> list[tuple[SyntheticDialog, int]]:
    return [(d, i) for d in dialogs for i in range(len(d.turns))]


def stage_plan(run: RunConfig) -> list[tuple[str, int]]:
    if run.train.schedule == "two_stage":
        return [("grounding", run.train.stage1_epochs), ("generation", run.train.stage2_epochs)]
    if run.train.schedule == "joint":
        return [("joint", run.train.epochs)]
    raise ValueError(f"unknown schedule {run.train.schedule!r}")


_STAGE_CODE = {"grounding": 1, "generation": 2, "joint": 3}


def epoch_order(seed: int, stage: str, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, _STAGE_CODE[stage], epoch, 0x5EED]).permutation(n)


def step_rng(seed: int, stage: str, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, _STAGE_CODE[stage], step, 0xC11F])


@dataclass
class TrainState:
    params: Params
    opt: Adam
    stage_index: int = 0
    epoch: int = 0
    batch: int = 0  # next batch within the epoch
    global_step: int = 0
    log: list[dict] = field(default_factory=list)
    acc: dict = field(default_factory=dict)  # running sums for the open epoch
    grounder: dict[str, np.ndarray] | None = None


def _components(run: RunConfig, stage: str, params: Params, corpus: Corpus, items, rng) -> tuple[Tensor, dict]:
    vals: dict[str, Tensor] = {}
    total = None
    if stage in ("grounding", "joint"):
        g = grounding_losses(params, run.model, make_grounding_batch(corpus, items, run.model))
        vals.update(l_frame=g.frame, l_clip=g.clip, l_grounding=g.total)
        total = g.total
    if stage in ("generation", "joint"):
        gl = generation_losses(params, run, make_generation_batch(corpus, items, run), rng)
        vals["l_generate"] = gl.generate
        if gl.contrast is not None:
            plus, minus, con = gl.contrast.plus, gl.contrast.minus, gl.contrast.total
            if gl.text_contrast is not None:
                plus = plus + gl.text_contrast.plus
                minus = minus + gl.text_contrast.minus
                con = con + gl.text_contrast.total
            vals.update(l_plus=plus, l_minus=minus, l_contrastive=con)
        vals["l_final"] = gl.total
        total = gl.total if total is None else total + gl.total
    return total, vals


class Trainer:
    def __init__(self, run: RunConfig, corpus: Corpus, dialogs: Sequence[SyntheticDialog], state: TrainState | None = None):
        if not dialogs:
            raise ValueError("training set is empty")
        self.run = run
        self.corpus = corpus
        self.items = turn_items(dialogs)
        self.plan = stage_plan(run)
        if state is None:
            params = init_params(run.model, run.seed)
            state = TrainState(params, self._new_opt(params))
        self.state = state

    def _new_opt(self, params: Params) -> Adam:
        return Adam(params, lr=self.run.train.lr, clip_norm=self.run.train.clip_norm)

    @property
    def batches_per_epoch(self) -> int:
        cap = self.run.train.max_batches_per_epoch
        n = math.ceil(len(self.items) / self.run.train.batch_size)
        return n if cap is None else min(n, cap)

    def step(self) -> dict[str, float] | None:
        """One optimizer step; returns the loss components or None when finished."""
        st = self.state
        if st.stage_index >= len(self.plan):
            return None
        stage, n_epochs = self.plan[st.stage_index]
        if st.epoch >= n_epochs:
            self._advance_stage()
            return self.step()
        bs = self.run.train.batch_size
        order = epoch_order(self.run.seed, stage, st.epoch, len(self.items))
        idx = order[st.batch * bs:(st.batch + 1) * bs]
        items = [self.items[i] for i in idx]
        st.opt.zero_grad()
        with Tape() as tape:
            total, vals = _components(self.run, stage, st.params, self.corpus, items,
                                      step_rng(self.run.seed, stage, st.global_step))
        out = {}
        for name in LOSS_FIELDS:
            if name in vals:
                v = vals[name].item()
                if not math.isfinite(v):
                    raise TrainingDiverged(st.global_step, name, v)
                out[name] = v
        backward(total, tape)
        st.opt.step()
        st.global_step += 1
        st.batch += 1
        for k, v in out.items():
            st.acc[k] = st.acc.get(k, 0.0) + v
        st.acc["_n"] = st.acc.get("_n", 0) + 1
        if st.batch >= self.batches_per_epoch:
            self._close_epoch(stage)
        return out

    def _close_epoch(self, stage: str) -> None:
        st = self.state
        n = st.acc.pop("_n", 0)
        row = {"stage": stage, "epoch": st.epoch + 1, "steps": n}
        for k in LOSS_FIELDS:
            row[k] = st.acc[k] / n if k in st.acc and n else float("nan")
        st.log.append(row)
        log.info("%s epoch %d: %s", stage, st.epoch + 1,
                 " ".join(f"{k}={row[k]:.4f}" for k in LOSS_FIELDS if not math.isnan(row[k])))
        st.acc = {}
        st.epoch += 1
        st.batch = 0

    def _advance_stage(self) -> None:
        st = self.state
        stage, _ = self.plan[st.stage_index]
        if stage == "grounding":
            st.grounder = {k: p.data.copy() for k, p in st.params.items()}
            st.opt = self._new_opt(st.params)
        st.stage_index += 1
        st.epoch = 0
        st.batch = 0

    def fit(self, max_steps: int | None = None, on_step: Callable[[int, dict], None] | None = None) -> TrainState:
        """Train to completion, or for at most ``max_steps`` further steps."""
        taken = 0
        while max_steps is None or taken < max_steps:
            out = self.step()
            if out is None:
                break
            taken += 1
            if on_step is not None:
                on_step(self.state.global_step, out)
        if max_steps is None or self.state.stage_index >= len(self.plan):
            self._finish()
        return self.state

    def run_stage(self) -> None:
        """Finish the current stage and move on to the next one."""
        st = self.state
        if st.stage_index >= len(self.plan):
            return
        target = st.stage_index
        _, n_epochs = self.plan[target]
        while st.stage_index == target and st.epoch < n_epochs:
            self.step()
        if st.stage_index == target:
            self._advance_stage()

    def _finish(self) -> None:
        st = self.state
        while st.stage_index < len(self.plan):
            stage, n_epochs = self.plan[st.stage_index]
            if st.epoch < n_epochs:
                return
            self._advance_stage()

    # ------------------------------------------------------------ persistence

    def grounding_params(self) -> dict[str, np.ndarray]:
        """Weights used to predict intervals: the stage-1 snapshot when one exists."""
        st = self.state
        if st.grounder is not None and self.run.train.schedule == "two_stage":
            return st.grounder
        return {k: p.data for k, p in st.params.items()}

    def to_checkpoint(self) -> ckpt_io.Checkpoint:
        st = self.state
        arrays = {f"params.{k}": p.data for k, p in st.params.items()}
        arrays.update({f"adam.m.{k}": v for k, v in st.opt.m.items()})
        arrays.update({f"adam.v.{k}": v for k, v in st.opt.v.items()})
        if st.grounder is not None:
            arrays.update({f"grounder.{k}": v for k, v in st.grounder.items()})
        meta = {
            "adam_t": st.opt.t,
            "stage_index": st.stage_index,
            "epoch": st.epoch,
            "batch": st.batch,
            "global_step": st.global_step,
            "log": st.log,
            "acc": st.acc,
            "rng": {"seed": self.run.seed, "scheme": "counter", "global_step": st.global_step},
        }
        return ckpt_io.Checkpoint(to_dict(self.run), arrays, meta)

    def save(self, path) -> None:
        ckpt_io.save(self.to_checkpoint(), path)

    @classmethod
    def from_checkpoint(cls, ck: ckpt_io.Checkpoint, corpus: Corpus, dialogs, run: RunConfig | None = None) -> "Trainer":
        run = run or from_dict(ck.config)
        params = {k: Tensor(v, requires_grad=True, name=k) for k, v in sorted(ck.group("params.").items())}
        opt = Adam(params, lr=run.train.lr, clip_norm=run.train.clip_norm)
        opt.load_state_dict({"t": ck.meta["adam_t"], "m": ck.group("adam.m."), "v": ck.group("adam.v.")})
        grounder = ck.group("grounder.") or None
        m = ck.meta
        state = TrainState(params, opt, m["stage_index"], m["epoch"], m["batch"], m["global_step"],
                           list(m["log"]), dict(m["acc"]), grounder)
        return cls(run, corpus, dialogs, state)


def write_loss_log(rows: Sequence[dict], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(r[k]) if isinstance(r[k], float) else r[k]) for k in LOG_FIELDS})


def train(run: RunConfig, corpus: Corpus, dialogs, out_dir=None, resume=None, max_steps=None) -> Trainer:
    """Run (or resume) training; writes ``model.ckpt`` and ``loss_log.csv`` when ``out_dir`` is set."""
    if resume is not None:
        trainer = Trainer.from_checkpoint(ckpt_io.load(resume), corpus, dialogs)
    else:
        trainer = Trainer(run, corpus, dialogs)
    trainer.fit(max_steps=max_steps)
    if out_dir is not None:
        out = Path(out_dir)
        trainer.save(out / "model.ckpt")
        write_loss_log(trainer.state.log, out / "loss_log.csv")
    return trainer
